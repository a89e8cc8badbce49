use std::path::PathBuf;

use anomagent::metrics::{icl, inception_score, ClusterDistances, ProbMatrix};
use anyhow::Result;
use serde::Serialize;

use super::{display, read_input, usage, write_json, Ctx, Outcome};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// JSON array of class-probability rows.
    #[arg(long)]
    pub probs: Option<PathBuf>,
    /// JSON array of clusters: [{"id": ..., "distances": [...], "members"?: m}].
    #[arg(long)]
    pub clusters: Option<PathBuf>,
    /// JSON output.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Default, Serialize)]
struct MetricsReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    inception_score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    icl: Option<f64>,
    errors: Vec<String>,
}

pub fn run(ctx: &Ctx, args: Args) -> Result<Outcome> {
    if args.probs.is_none() && args.clusters.is_none() {
        return Err(usage("give --probs and/or --clusters"));
    }
    let mut report = MetricsReport::default();
    let mut inputs = Vec::new();
    if let Some(path) = &args.probs {
        inputs.push(display(path));
        match serde_json::from_str::<ProbMatrix>(&read_input(path)?) {
            Ok(p) => {
                let v = inception_score(&p);
                println!("IS   {v:.6}");
                report.inception_score = Some(v);
            }
            Err(e) => report.errors.push(format!("{}: {e}", path.display())),
        }
    }
    if let Some(path) = &args.clusters {
        inputs.push(display(path));
        let parsed = serde_json::from_str::<ClusterDistances>(&read_input(path)?)
            .map_err(|e| e.to_string())
            .and_then(|d| icl(&d).map_err(|e| e.to_string()));
        match parsed {
            Ok(v) => {
                println!("IC-L {v:.6}");
                report.icl = Some(v);
            }
            Err(e) => report.errors.push(format!("{}: {e}", path.display())),
        }
    }
    for e in &report.errors {
        eprintln!("{e}");
    }
    write_json(&args.out, &report)?;

    let failures = report.errors.len();
    let mut m = ctx.manifest("metrics");
    m.inputs = inputs;
    m.outputs = vec![display(&args.out)];
    m.counts.insert("failures".into(), failures);
    ctx.finish(m, &args.out)?;
    Ok(Outcome { failures })
}
