use std::path::PathBuf;

use anomagent::agent_loop::{
    rollout_seed, run_group, EpisodeRecord, Policy, RemotePolicy, ScriptedPolicy, Termination,
};
use anomagent::derive_seed;
use anomagent::protocol::TaskSpec;
use anyhow::Result;
use clap::ValueEnum;
use rayon::prelude::*;

use super::{display, jsonl_lines, read_input, usage, write_jsonl, Ctx, Outcome};

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PolicyChoice {
    Scripted,
    Remote,
}

#[derive(Debug, clap::Args)]
pub struct Args {
    /// JSONL of tasks: {item_name, anomaly_type, normal_image}.
    #[arg(long)]
    pub tasks: PathBuf,
    /// Episode JSONL output.
    #[arg(long)]
    pub out: PathBuf,
    /// Rollouts per task.
    #[arg(long, default_value_t = 1)]
    pub group: usize,
    #[arg(long, value_enum, default_value_t = PolicyChoice::Scripted)]
    pub policy: PolicyChoice,
}

pub fn run(ctx: &Ctx, args: Args) -> Result<Outcome> {
    let cfg = ctx.config()?;
    if args.group == 0 {
        return Err(usage("--group must be at least 1"));
    }
    let text = read_input(&args.tasks)?;
    let tasks = jsonl_lines(&text)
        .map(|(line, l)| {
            serde_json::from_str::<TaskSpec>(l).map_err(|e| {
                usage(format!(
                    "{}:{line}: invalid task: {e}",
                    args.tasks.display()
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let remote = match args.policy {
        PolicyChoice::Scripted => None,
        PolicyChoice::Remote => Some(cfg.policy_remote().cloned().ok_or_else(|| {
            usage("the remote policy needs [policy_model] or a remote [backend] in the config")
        })?),
    };

    let base = cfg.base_seed();
    let records: Vec<EpisodeRecord> = tasks
        .par_iter()
        .enumerate()
        .flat_map_iter(|(i, task)| {
            let task_seed = derive_seed(base, i as u64);
            let backend = cfg.backend.with_seed(task_seed);
            let make = |_| -> Box<dyn Policy> {
                match &remote {
                    Some(r) => Box::new(RemotePolicy::new(r.clone())),
                    None => Box::new(ScriptedPolicy),
                }
            };
            run_group(task, make, &backend, &cfg.agent_loop, args.group)
                .into_iter()
                .enumerate()
                .map(move |(r, episode)| EpisodeRecord {
                    task_index: i,
                    rollout: r,
                    seed: rollout_seed(task_seed, r),
                    episode,
                })
        })
        .collect();
    write_jsonl(&args.out, &records)?;

    let count = |t: Termination| {
        records
            .iter()
            .filter(|r| r.episode.terminated_by == t)
            .count()
    };
    let errors = count(Termination::Error);
    for r in records
        .iter()
        .filter(|r| r.episode.terminated_by == Termination::Error)
    {
        eprintln!(
            "task {} rollout {}: {}",
            r.task_index,
            r.rollout,
            r.episode.error.as_deref().unwrap_or("error")
        );
    }
    eprintln!(
        "{} episode(s) for {} task(s): {} answered, {} over budget, {} failed",
        records.len(),
        tasks.len(),
        count(Termination::Answer),
        count(Termination::TurnBudget),
        errors
    );

    let mut m = ctx.manifest("synthesize");
    m.seeds = records.iter().map(|r| r.seed).collect();
    m.inputs = vec![display(&args.tasks)];
    m.outputs = vec![display(&args.out)];
    m.counts.insert("tasks".into(), tasks.len());
    m.counts.insert("episodes".into(), records.len());
    m.counts
        .insert("answered".into(), count(Termination::Answer));
    m.counts
        .insert("turn_budget".into(), count(Termination::TurnBudget));
    m.counts.insert("errors".into(), errors);
    m.config = Some(cfg);
    ctx.finish(m, &args.out)?;
    Ok(Outcome { failures: errors })
}
