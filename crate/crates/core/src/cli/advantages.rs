use std::collections::BTreeMap;
use std::path::PathBuf;

use anomagent::grpo::{group_advantages, grpo_loss, GroupRollout, GrpoLoss, TokenLogprobs};
use anyhow::Result;
use serde::{Deserialize, Serialize};

use super::score::ScoreRow;
use super::{display, jsonl_lines, read_input, usage, write_json, Ctx, Outcome};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Either a JSON group `{"rewards": [...], "tokens": [...]?}` or the JSONL written
    /// by `score`, grouped by task_index.
    #[arg(long)]
    pub input: PathBuf,
    /// JSON output.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GroupInput {
    rewards: Vec<f64>,
    #[serde(default)]
    tokens: Option<Vec<TokenLogprobs>>,
}

#[derive(Debug, Serialize)]
struct GroupOutput {
    #[serde(skip_serializing_if = "Option::is_none")]
    task_index: Option<usize>,
    rewards: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    advantages: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    loss: Option<GrpoLoss>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

pub fn run(ctx: &Ctx, args: Args) -> Result<Outcome> {
    let cfg = ctx.config()?;
    let text = read_input(&args.input)?;

    let groups: Vec<GroupOutput> = if text.trim_start().starts_with('{')
        && serde_json::from_str::<serde_json::Value>(&text).is_ok()
    {
        let g: GroupInput = serde_json::from_str(&text)
            .map_err(|e| usage(format!("{}: invalid group: {e}", args.input.display())))?;
        let mut out = GroupOutput {
            task_index: None,
            rewards: g.rewards.clone(),
            advantages: None,
            loss: None,
            error: None,
        };
        let result = match g.tokens {
            Some(tokens) => grpo_loss(
                &GroupRollout {
                    rewards: g.rewards,
                    tokens,
                },
                &cfg.grpo,
            )
            .map(|l| {
                out.advantages = Some(l.advantages.clone());
                out.loss = Some(l);
            }),
            None => group_advantages(&g.rewards, &cfg.grpo).map(|a| out.advantages = Some(a)),
        };
        if let Err(e) = result {
            out.error = Some(e.to_string());
        }
        vec![out]
    } else {
        let mut by_task: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
        for (line, l) in jsonl_lines(&text) {
            let row: ScoreRow = serde_json::from_str(l).map_err(|e| {
                usage(format!(
                    "{}:{line}: invalid score row: {e}",
                    args.input.display()
                ))
            })?;
            if let (Some(t), Some(b)) = (row.task_index, row.reward) {
                by_task
                    .entry(t)
                    .or_default()
                    .push((row.rollout.unwrap_or(0), b.total));
            }
        }
        by_task
            .into_iter()
            .map(|(task, mut rs)| {
                rs.sort_by_key(|(r, _)| *r);
                let rewards: Vec<f64> = rs.into_iter().map(|(_, v)| v).collect();
                let (advantages, error) = match group_advantages(&rewards, &cfg.grpo) {
                    Ok(a) => (Some(a), None),
                    Err(e) => (None, Some(e.to_string())),
                };
                GroupOutput {
                    task_index: Some(task),
                    rewards,
                    advantages,
                    loss: None,
                    error,
                }
            })
            .collect()
    };

    let failures = groups.iter().filter(|g| g.error.is_some()).count();
    for g in groups.iter().filter(|g| g.error.is_some()) {
        eprintln!(
            "group {:?}: {}",
            g.task_index,
            g.error.as_deref().unwrap_or_default()
        );
    }
    write_json(&args.out, &serde_json::json!({ "groups": groups }))?;
    eprintln!("{} group(s), {} failed", groups.len(), failures);

    let mut m = ctx.manifest("advantages");
    m.inputs = vec![display(&args.input)];
    m.outputs = vec![display(&args.out)];
    m.counts.insert("groups".into(), groups.len());
    m.counts.insert("failures".into(), failures);
    m.config = Some(cfg);
    ctx.finish(m, &args.out)?;
    Ok(Outcome { failures })
}
