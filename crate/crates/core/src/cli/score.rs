use std::path::PathBuf;

use anomagent::agent_loop::{EpisodeRecord, EpisodeResult};
use anomagent::derive_seed;
use anomagent::rewards::{total_reward, RewardBreakdown, TaskSource};
use anyhow::Result;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{display, jsonl_lines, read_input, write_jsonl, Ctx, Outcome};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Episode JSONL (as written by `synthesize`).
    #[arg(long)]
    pub episodes: PathBuf,
    /// Reward JSONL output.
    #[arg(long)]
    pub out: PathBuf,
    /// Re-judge the final image with the configured backend instead of reusing the
    /// episode's last quality score.
    #[arg(long)]
    pub judge: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreRow {
    pub line: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rollout: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<RewardBreakdown>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// An episode row, with or without the record envelope.
pub fn parse_episode(line: &str) -> Result<(Option<usize>, Option<usize>, EpisodeResult), String> {
    match serde_json::from_str::<EpisodeRecord>(line) {
        Ok(r) => Ok((Some(r.task_index), Some(r.rollout), r.episode)),
        Err(e) => serde_json::from_str::<EpisodeResult>(line)
            .map(|ep| (None, None, ep))
            .map_err(|_| e.to_string()),
    }
}

pub fn run(ctx: &Ctx, args: Args) -> Result<Outcome> {
    let cfg = ctx.config()?;
    let text = read_input(&args.episodes)?;
    let lines: Vec<(usize, &str)> = jsonl_lines(&text).collect();
    let base = cfg.base_seed();

    let rows: Vec<ScoreRow> = lines
        .par_iter()
        .map(|&(line, l)| {
            let mut row = ScoreRow {
                line,
                task_index: None,
                rollout: None,
                reward: None,
                error: None,
            };
            match parse_episode(l) {
                Ok((task_index, rollout, episode)) => {
                    row.task_index = task_index;
                    row.rollout = rollout;
                    let mut judge;
                    let source = if args.judge {
                        judge = cfg
                            .backend
                            .session_with_seed(derive_seed(base, line as u64));
                        TaskSource::Judge(judge.as_mut())
                    } else {
                        TaskSource::Reuse
                    };
                    match total_reward(&episode, &cfg.rewards, &cfg.transitions, source) {
                        Ok(b) => row.reward = Some(b),
                        Err(e) => row.error = Some(e.to_string()),
                    }
                }
                Err(e) => row.error = Some(format!("unparseable episode: {e}")),
            }
            row
        })
        .collect();
    write_jsonl(&args.out, &rows)?;

    let failures = rows.iter().filter(|r| r.error.is_some()).count();
    for r in rows.iter().filter(|r| r.error.is_some()) {
        eprintln!(
            "line {}: {}",
            r.line,
            r.error.as_deref().unwrap_or_default()
        );
    }
    let scored: Vec<f64> = rows
        .iter()
        .filter_map(|r| r.reward.map(|b| b.total))
        .collect();
    if !scored.is_empty() {
        eprintln!(
            "scored {} episode(s), mean reward {:.4}",
            scored.len(),
            scored.iter().sum::<f64>() / scored.len() as f64
        );
    }

    let mut m = ctx.manifest("score");
    if args.judge {
        m.seeds = rows
            .iter()
            .map(|r| derive_seed(base, r.line as u64))
            .collect();
    }
    m.inputs = vec![display(&args.episodes)];
    m.outputs = vec![display(&args.out)];
    m.counts.insert("rows".into(), rows.len());
    m.counts.insert("scored".into(), scored.len());
    m.counts.insert("failures".into(), failures);
    m.config = Some(cfg);
    ctx.finish(m, &args.out)?;
    Ok(Outcome { failures })
}
