use std::path::PathBuf;

use anomagent::protocol::{format_violation, Trajectory};
use anomagent::rewards::{step_sequence, TransitionTable};
use anomagent::trajectory_builder::{classify, TaxonomyClass};
use anyhow::Result;
use serde::Serialize;

use super::score::parse_episode;
use super::{display, jsonl_lines, read_input, write_jsonl, Ctx, Outcome};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// JSONL of trajectories or episode records.
    #[arg(long)]
    pub input: PathBuf,
    /// JSONL report, one row per input row.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct Report {
    line: usize,
    valid: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    violation: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    class: Option<TaxonomyClass>,
    transition_penalty: f64,
    illegal_transitions: Vec<String>,
}

fn parse_row(line: &str) -> Result<Trajectory, String> {
    match Trajectory::from_jsonl_line(line) {
        Ok(t) => Ok(t),
        Err(e) => parse_episode(line)
            .map(|(_, _, ep)| ep.trajectory)
            .map_err(|_| e.to_string()),
    }
}

pub fn run(ctx: &Ctx, args: Args) -> Result<Outcome> {
    let text = read_input(&args.input)?;
    let table = match &ctx.config_path {
        Some(_) => ctx.config()?.transitions,
        None => TransitionTable::default(),
    };
    let reports: Vec<Report> = jsonl_lines(&text)
        .map(|(line, l)| match parse_row(l) {
            Ok(t) => {
                let steps = step_sequence(&t.tool_sequence(), t.answer().is_some());
                let violation = format_violation(&t);
                Report {
                    line,
                    valid: violation.is_none(),
                    violation: violation.map(|v| v.to_string()),
                    class: classify(&t),
                    transition_penalty: table.penalty_of(&steps),
                    illegal_transitions: table
                        .violations(&steps)
                        .into_iter()
                        .map(|(a, b)| format!("{a}->{b}"))
                        .collect(),
                }
            }
            Err(e) => Report {
                line,
                valid: false,
                violation: Some(format!("unparseable row: {e}")),
                class: None,
                transition_penalty: 0.0,
                illegal_transitions: Vec::new(),
            },
        })
        .collect();
    write_jsonl(&args.out, &reports)?;

    let invalid = reports.iter().filter(|r| !r.valid).count();
    for r in reports.iter().filter(|r| !r.valid) {
        eprintln!(
            "line {}: {}",
            r.line,
            r.violation.as_deref().unwrap_or_default()
        );
    }
    eprintln!("{} row(s), {} invalid", reports.len(), invalid);

    let mut m = ctx.manifest("validate");
    m.inputs = vec![display(&args.input)];
    m.outputs = vec![display(&args.out)];
    m.counts.insert("rows".into(), reports.len());
    m.counts.insert("invalid".into(), invalid);
    ctx.finish(m, &args.out)?;
    Ok(Outcome { failures: invalid })
}
