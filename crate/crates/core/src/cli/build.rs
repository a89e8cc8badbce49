use std::path::PathBuf;

use anomagent::derive_seed;
use anomagent::trajectory_builder::{build_dataset, BuildSpec};
use anyhow::Result;

use super::{display, jsonl_lines, read_input, sibling, usage, write_json, Ctx, Outcome};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// JSONL of build specs: {anomaly_image, item_name, anomaly_type, n?, kr_ratio?, seed?}.
    #[arg(long)]
    pub specs: PathBuf,
    /// Trajectory JSONL output; statistics go to `<out>.stats.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides kr_ratio for every spec.
    #[arg(long)]
    pub kr_ratio: Option<f64>,
}

pub fn run(ctx: &Ctx, args: Args) -> Result<Outcome> {
    let cfg = ctx.config()?;
    let base = cfg.base_seed();
    let text = read_input(&args.specs)?;
    let specs = jsonl_lines(&text)
        .enumerate()
        .map(|(i, (line, l))| {
            let mut spec: BuildSpec = serde_json::from_str(l).map_err(|e| {
                usage(format!(
                    "{}:{line}: invalid spec: {e}",
                    args.specs.display()
                ))
            })?;
            if let Some(r) = args.kr_ratio {
                spec.kr_ratio = r;
            }
            Ok(spec.seeded(derive_seed(base, i as u64)))
        })
        .collect::<Result<Vec<_>>>()?;

    let (_, stats) = build_dataset(&specs, &cfg.backend, &args.out)?;
    let stats_path = sibling(&args.out, "stats.json");
    write_json(&stats_path, &stats)?;
    for f in &stats.failures {
        eprintln!("spec {}: {}", f.index, f.error);
    }
    eprintln!(
        "built {}/{} trajectories ({} with knowledge retrieval)",
        stats.total, stats.requested, stats.with_kr
    );

    let mut m = ctx.manifest("build");
    m.seeds = specs.iter().filter_map(|s| s.seed).collect();
    m.inputs = vec![display(&args.specs)];
    m.outputs = vec![display(&args.out), display(&stats_path)];
    m.counts.insert("requested".into(), stats.requested);
    m.counts.insert("built".into(), stats.total);
    m.counts.insert("failures".into(), stats.failures.len());
    for (class, n) in &stats.per_class {
        m.counts.insert(class.to_string(), *n);
    }
    m.config = Some(cfg);
    ctx.finish(m, &args.out)?;
    Ok(Outcome {
        failures: stats.failures.len(),
    })
}
