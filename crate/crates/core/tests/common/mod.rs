//! Fixtures and independent reference implementations shared by the integration tests.
//! The oracles here are written from the formulas, not from the library code.
#![allow(dead_code)]

use anomagent::agent_loop::{EpisodeResult, Termination};
use anomagent::grpo::{GroupRollout, GrpoConfig};
use anomagent::protocol::{
    serialize_segments, ImageRef, Segment, TaskSpec, ToolCallPayload, ToolName, Trajectory,
};
use anomagent::rewards::RewardWeights;
use anomagent::tools::{BackendConfig, SimScript};
use anomagent::trajectory_builder::{build_trajectory, BuildSpec, Steps};
use rand::seq::IndexedRandom;
use rand::Rng;

pub const ITEMS: [&str; 8] = [
    "bottle",
    "cable",
    "capsule",
    "hazelnut",
    "metal_nut",
    "pcb",
    "screw",
    "tile",
];
pub const ANOMALIES: [&str; 8] = [
    "crack",
    "scratch",
    "hole",
    "contamination",
    "bent",
    "cut",
    "missing \"part\"",
    "färbung",
];

pub fn task(item: &str, anomaly: &str) -> TaskSpec {
    TaskSpec {
        item_name: item.into(),
        anomaly_type: anomaly.into(),
        normal_image: ImageRef::new(format!("normal/{item}.png")),
    }
}

pub fn sim(seed: u64) -> BackendConfig {
    BackendConfig::simulated(seed, SimScript::default())
}

pub fn random_spec<R: Rng>(rng: &mut R) -> BuildSpec {
    let item = ITEMS.choose(rng).unwrap();
    let anomaly = ANOMALIES.choose(rng).unwrap();
    let n = match rng.random_range(0..4u8) {
        0 => Steps::Random,
        k => Steps::Fixed(k),
    };
    BuildSpec::new(
        format!("ano/{item}_{}.png", rng.random::<u16>()),
        item,
        anomaly,
    )
    .with_n(n)
    .with_kr_ratio(rng.random())
    .with_seed(rng.random())
}

pub fn random_builder_trajectory<R: Rng>(rng: &mut R) -> Trajectory {
    let spec = random_spec(rng);
    build_trajectory(&spec, &sim(rng.random())).expect("builder output")
}

/// Transition legality written out as a literal list of short-name pairs.
pub fn legal(a: &str, b: &str) -> bool {
    matches!(
        (a, b),
        ("Start", "PG")
            | ("PG", "IG")
            | ("IG", "QE")
            | ("QE", "IG")
            | ("QE", "KR")
            | ("QE", "MG")
            | ("KR", "IG")
            | ("MG", "Answer")
    )
}

/// Total reward in one pass over the raw ingredients.
pub fn oracle_total(
    actions: &[ToolName],
    qe: &[f64],
    answered: bool,
    format_ok: bool,
    turns: u32,
    w: &RewardWeights,
) -> f64 {
    let mut names = vec!["Start"];
    names.extend(actions.iter().map(|a| a.short()));
    if answered {
        names.push("Answer");
    }
    let illegal = (1..names.len())
        .filter(|&i| !legal(names[i - 1], names[i]))
        .count() as f64;

    let mut latest: Option<f64> = None;
    let mut qe_seen = 0;
    let mut bonus_count = 0.0;
    for a in actions {
        match a.short() {
            "QE" => {
                latest = qe.get(qe_seen).copied();
                qe_seen += 1;
            }
            "KR" => {
                if let Some(s) = latest {
                    if s < w.delta {
                        bonus_count += 1.0;
                    }
                }
            }
            _ => {}
        }
    }

    let mut gains = 0.0;
    for i in 1..qe.len() {
        if qe[i] > qe[i - 1] {
            gains += qe[i] - qe[i - 1];
        }
    }
    let task = if qe.is_empty() { 0.0 } else { qe[qe.len() - 1] };
    let over = if turns > w.t_max {
        (turns - w.t_max) as f64
    } else {
        0.0
    };
    let fmt = if format_ok { 1.0 } else { 0.0 };

    w.alpha * task
        + w.beta * gains
        + w.gamma * (-illegal + w.lambda_kr * bonus_count + fmt - w.lambda_t * over)
}

/// Synthetic episode whose trajectory is either a known-valid builder trajectory or
/// an empty (format-invalid) one.
pub fn synthetic_episode<R: Rng>(rng: &mut R, valid: &Trajectory) -> (EpisodeResult, bool) {
    let len = rng.random_range(0..14);
    let actions: Vec<ToolName> = (0..len)
        .map(|_| *ToolName::ALL.choose(rng).unwrap())
        .collect();
    let qe_count = actions
        .iter()
        .filter(|a| **a == ToolName::QualityEval)
        .count();
    // Occasionally fewer scores than evaluations, as after a failed judge call.
    let kept = if rng.random_bool(0.1) {
        rng.random_range(0..=qe_count)
    } else {
        qe_count
    };
    let qe_scores: Vec<f64> = (0..kept)
        .map(|_| {
            if rng.random_bool(0.5) {
                rng.random_range(0..=10u8) as f64 / 10.0
            } else {
                rng.random()
            }
        })
        .collect();
    let format_ok = rng.random_bool(0.5);
    let trajectory = if format_ok {
        valid.clone()
    } else {
        Trajectory::new(valid.task.clone())
    };
    let terminated_by = *[
        Termination::Answer,
        Termination::TurnBudget,
        Termination::Error,
    ]
    .choose(rng)
    .unwrap();
    let e = EpisodeResult {
        trajectory,
        final_score: qe_scores.last().copied(),
        qe_scores,
        action_sequence: actions,
        turns: rng.random_range(0..30),
        terminated_by,
        error: None,
    };
    (e, format_ok)
}

pub fn random_weights<R: Rng>(rng: &mut R) -> RewardWeights {
    RewardWeights {
        alpha: rng.random_range(0.0..2.0),
        beta: rng.random_range(0.0..2.0),
        gamma: rng.random_range(0.0..2.0),
        lambda_kr: rng.random_range(0.0..1.0),
        lambda_t: rng.random_range(0.0..1.0),
        delta: rng.random_range(0.0..1.0),
        t_max: rng.random_range(1..20),
    }
}

/// Two-pass population mean and standard deviation, then normalization.
pub fn oracle_advantages(r: &[f64], floor: f64) -> Vec<f64> {
    let mut mean = 0.0;
    for x in r {
        mean += x;
    }
    mean /= r.len() as f64;
    let mut ss = 0.0;
    for x in r {
        ss += (x - mean) * (x - mean);
    }
    let std = (ss / r.len() as f64).sqrt();
    if std < floor || std == 0.0 {
        return vec![0.0; r.len()];
    }
    r.iter().map(|x| (x - mean) / std).collect()
}

/// Clipped objective written with explicit branches on the advantage sign.
pub fn oracle_surrogate(rho: f64, a: f64, eps: f64) -> f64 {
    if a >= 0.0 {
        if rho > 1.0 + eps {
            (1.0 + eps) * a
        } else {
            rho * a
        }
    } else if rho < 1.0 - eps {
        (1.0 - eps) * a
    } else {
        rho * a
    }
}

/// `r - ln r - 1` with `r = pi_ref / pi_new`.
pub fn oracle_kl(new: f64, reference: f64) -> f64 {
    let log_r = reference - new;
    log_r.exp() - log_r - 1.0
}

/// Negated pooled token mean of the explicit-branch objective.
pub fn oracle_grpo_loss(g: &GroupRollout, cfg: &GrpoConfig) -> (f64, bool) {
    let adv = oracle_advantages(&g.rewards, cfg.std_floor);
    let mut sum = 0.0;
    let mut count = 0;
    let mut any_kept = false;
    for (t, a) in g.tokens.iter().zip(&adv) {
        if cfg.filter_zero_advantage && *a == 0.0 {
            continue;
        }
        any_kept = true;
        for i in 0..t.new.len() {
            if t.mask[i] {
                let rho = (t.new[i] - t.old[i]).exp();
                sum += oracle_surrogate(rho, *a, cfg.epsilon)
                    - cfg.kl_beta * oracle_kl(t.new[i], t.reference[i]);
                count += 1;
            }
        }
    }
    let loss = if count == 0 { 0.0 } else { -sum / count as f64 };
    (loss, cfg.filter_zero_advantage && !any_kept)
}

/// Negative sum of supervised log-probabilities: filter first, then add.
pub fn oracle_sft(lp: &[f64], mask: &[bool]) -> f64 {
    let kept: Vec<f64> = lp
        .iter()
        .zip(mask)
        .filter(|(_, m)| **m)
        .map(|(x, _)| *x)
        .collect();
    -kept.iter().sum::<f64>()
}

/// `exp(mean_i sum_j p_ij ln(p_ij / pbar_j))` with plain nested loops.
pub fn oracle_is(p: &[Vec<f64>]) -> f64 {
    let n = p.len();
    let k = p[0].len();
    let mut pbar = vec![0.0; k];
    for row in p {
        for j in 0..k {
            pbar[j] += row[j];
        }
    }
    for v in pbar.iter_mut() {
        *v /= n as f64;
    }
    let mut total = 0.0;
    for row in p {
        for j in 0..k {
            if row[j] > 0.0 {
                total += row[j] * (row[j].ln() - pbar[j].ln());
            }
        }
    }
    (total / n as f64).exp()
}

/// Mean over clusters of each cluster's mean distance.
pub fn oracle_icl(clusters: &[Vec<f64>]) -> f64 {
    let mut outer = 0.0;
    for c in clusters {
        let mut inner = 0.0;
        for d in c {
            inner += d;
        }
        outer += inner / c.len() as f64;
    }
    outer / clusters.len() as f64
}

pub fn random_prob_row<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k)
        .map(|_| {
            if rng.random_bool(0.2) {
                0.0
            } else {
                rng.random::<f64>() + 1e-3
            }
        })
        .collect();
    let s: f64 = raw.iter().sum();
    if s == 0.0 {
        let mut one = vec![0.0; k];
        one[rng.random_range(0..k)] = 1.0;
        return one;
    }
    raw.iter().map(|x| x / s).collect()
}

/// Transcript mutations, each tied to the parse error it must produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mutation {
    DropCloseTag,
    BreakJson,
    RenameTool,
    DropArgument,
    ExtraArgument,
}

impl Mutation {
    pub const ALL: [Mutation; 5] = [
        Mutation::DropCloseTag,
        Mutation::BreakJson,
        Mutation::RenameTool,
        Mutation::DropArgument,
        Mutation::ExtraArgument,
    ];

    /// Name of the expected `ProtocolError` variant.
    pub fn expected(self) -> &'static str {
        match self {
            Mutation::DropCloseTag => "UnclosedTag",
            Mutation::BreakJson => "MalformedJson",
            Mutation::RenameTool => "UnknownTool",
            Mutation::DropArgument | Mutation::ExtraArgument => "SchemaViolation",
        }
    }
}

/// Applies `m` to one randomly chosen eligible segment and returns the raw transcript.
pub fn mutate<R: Rng>(t: &Trajectory, m: Mutation, rng: &mut R) -> String {
    let segs = &t.segments;
    let eligible: Vec<usize> = (0..segs.len())
        .filter(|&i| match m {
            Mutation::DropCloseTag => true,
            Mutation::BreakJson => !matches!(segs[i], Segment::Thinking(_)),
            _ => matches!(segs[i], Segment::ToolCall(_)),
        })
        .collect();
    let k = *eligible.choose(rng).unwrap();
    let mut chunks: Vec<String> = segs
        .iter()
        .map(|s| serialize_segments(std::slice::from_ref(s)))
        .collect();
    let chunk = &mut chunks[k];
    match m {
        Mutation::DropCloseTag => {
            let at = chunk.rfind("</").unwrap();
            chunk.truncate(at);
        }
        Mutation::BreakJson => {
            let close = chunk.rfind("</").unwrap();
            let brace = chunk[..close].rfind('}').unwrap();
            chunk.remove(brace);
        }
        Mutation::RenameTool => {
            let Segment::ToolCall(c) = &segs[k] else {
                unreachable!()
            };
            let from = format!("\"name\":\"{}\"", c.name.wire_name());
            *chunk = chunk.replacen(&from, "\"name\":\"teleport\"", 1);
        }
        Mutation::DropArgument | Mutation::ExtraArgument => {
            let Segment::ToolCall(c) = &segs[k] else {
                unreachable!()
            };
            let mut args = c.arguments.clone();
            if m == Mutation::DropArgument {
                let keys: Vec<String> = args.keys().cloned().collect();
                args.remove(keys.choose(rng).unwrap());
            } else {
                args.insert("strength".into(), serde_json::json!(0.5));
            }
            let call = ToolCallPayload {
                name: c.name,
                arguments: args,
            };
            *chunk = serialize_segments(&[Segment::ToolCall(call)]);
        }
    }
    chunks.join("\n")
}
