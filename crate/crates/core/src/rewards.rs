//! Verifiable trajectory reward: task quality, reflection gain and behavior discipline.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::agent_loop::EpisodeResult;
use crate::protocol::{check_format, ToolCallPayload, ToolName, ToolObservation};
use crate::tools::{ToolBackend, ToolError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda_kr: f64,
    pub lambda_t: f64,
    /// Quality score below which a knowledge retrieval earns the bonus.
    pub delta: f64,
    pub t_max: u32,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            alpha: 1.0,
            beta: 0.5,
            gamma: 0.3,
            lambda_kr: 0.2,
            lambda_t: 0.1,
            delta: 0.5,
            t_max: 12,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("lambda_kr", self.lambda_kr),
            ("lambda_t", self.lambda_t),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(format!("delta must be in [0, 1], got {}", self.delta));
        }
        if self.t_max < 1 {
            return Err("t_max must be positive".into());
        }
        Ok(())
    }
}

/// A node in the action graph: episode start, a tool, or the final answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    Start,
    Tool(ToolName),
    Answer,
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Step::Start => f.write_str("Start"),
            Step::Tool(t) => write!(f, "{t}"),
            Step::Answer => f.write_str("Answer"),
        }
    }
}

/// Closed set of legal transitions; each pair outside it costs `penalty`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionTable {
    pub allowed: BTreeSet<(Step, Step)>,
    pub penalty: f64,
}

impl Default for TransitionTable {
    fn default() -> Self {
        use Step::*;
        use ToolName::*;
        let allowed = [
            (Start, Tool(PromptGen)),
            (Tool(PromptGen), Tool(ImageGen)),
            (Tool(ImageGen), Tool(QualityEval)),
            (Tool(QualityEval), Tool(ImageGen)),
            (Tool(QualityEval), Tool(KnowledgeRetrieval)),
            (Tool(QualityEval), Tool(MaskGen)),
            (Tool(KnowledgeRetrieval), Tool(ImageGen)),
            (Tool(MaskGen), Answer),
        ]
        .into_iter()
        .collect();
        TransitionTable {
            allowed,
            penalty: -1.0,
        }
    }
}

impl TransitionTable {
    pub fn phi(&self, from: Step, to: Step) -> f64 {
        if self.allowed.contains(&(from, to)) {
            0.0
        } else {
            self.penalty
        }
    }

    /// Sum of `phi` over consecutive steps.
    pub fn penalty_of(&self, steps: &[Step]) -> f64 {
        steps.windows(2).map(|w| self.phi(w[0], w[1])).sum()
    }

    /// Disallowed pairs in order of occurrence.
    pub fn violations(&self, steps: &[Step]) -> Vec<(Step, Step)> {
        steps
            .windows(2)
            .filter(|w| !self.allowed.contains(&(w[0], w[1])))
            .map(|w| (w[0], w[1]))
            .collect()
    }
}

/// `Start`, the tool actions, then `Answer` if the episode answered.
pub fn step_sequence(actions: &[ToolName], answered: bool) -> Vec<Step> {
    let mut steps = Vec::with_capacity(actions.len() + 2);
    steps.push(Step::Start);
    steps.extend(actions.iter().map(|&a| Step::Tool(a)));
    if answered {
        steps.push(Step::Answer);
    }
    steps
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BehaviorTerms {
    /// Sum of transition penalties (≤ 0).
    pub transition_penalty: f64,
    pub kr_bonus: f64,
    /// 1 if the transcript is format-valid, else 0.
    pub format_indicator: f64,
    /// Turn-overrun penalty (≤ 0).
    pub length_penalty: f64,
}

impl BehaviorTerms {
    pub fn sum(&self) -> f64 {
        self.transition_penalty + self.kr_bonus + self.format_indicator + self.length_penalty
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub task: f64,
    pub reflection: f64,
    pub behavior: f64,
    pub total: f64,
    pub terms: BehaviorTerms,
    /// Set when no quality score was available for the task term.
    #[serde(default)]
    pub no_generation: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskReward {
    pub value: f64,
    pub no_generation: bool,
}

/// Source of the task term: the episode's own last quality score, or a fresh verdict
/// on the final image from a judge backend.
pub enum TaskSource<'a> {
    Reuse,
    Judge(&'a mut dyn ToolBackend),
}

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("judge failed: {0}")]
    Judge(#[from] ToolError),
}

pub fn task_reward(e: &EpisodeResult, source: TaskSource<'_>) -> Result<TaskReward, RewardError> {
    let missing = TaskReward {
        value: 0.0,
        no_generation: true,
    };
    match source {
        TaskSource::Reuse => Ok(e.qe_scores.last().map_or(missing, |&s| TaskReward {
            value: s,
            no_generation: false,
        })),
        TaskSource::Judge(judge) => {
            let t = &e.trajectory;
            let final_image = t
                .answer()
                .map(|a| a.final_image_index)
                .unwrap_or_else(|| t.image_count());
            if final_image < 2 {
                return Ok(missing);
            }
            let call = ToolCallPayload::new(
                ToolName::QualityEval,
                json!({
                    "anomaly_image": final_image,
                    "item_name": t.task.item_name,
                    "anomaly_type": t.task.anomaly_type,
                }),
            );
            match judge.invoke(&call, t)? {
                ToolObservation::Quality(v) => Ok(TaskReward {
                    value: v.score,
                    no_generation: false,
                }),
                other => Err(RewardError::Judge(ToolError::BadResponse {
                    tool: ToolName::QualityEval.wire_name().into(),
                    message: format!("judge returned a {} observation", other.tool()),
                })),
            }
        }
    }
}

/// Sum of positive gains between consecutive quality scores.
pub fn reflection_reward(qe_scores: &[f64]) -> f64 {
    qe_scores.windows(2).map(|w| (w[1] - w[0]).max(0.0)).sum()
}

/// Behavior terms from the raw ingredients. `qe_scores[k]` is the score of the k-th
/// quality-eval action; `turns` counts policy turns including the answer turn.
pub fn behavior_terms(
    actions: &[ToolName],
    qe_scores: &[f64],
    answered: bool,
    format_valid: bool,
    turns: u32,
    w: &RewardWeights,
    table: &TransitionTable,
) -> BehaviorTerms {
    let transition_penalty = table.penalty_of(&step_sequence(actions, answered));

    let mut seen_qe = 0usize;
    let mut rewarded_kr = 0usize;
    for a in actions {
        match a {
            ToolName::QualityEval => seen_qe += 1,
            ToolName::KnowledgeRetrieval => {
                let latest = seen_qe.checked_sub(1).and_then(|k| qe_scores.get(k));
                if latest.is_some_and(|&s| s < w.delta) {
                    rewarded_kr += 1;
                }
            }
            _ => {}
        }
    }

    let overrun = turns.saturating_sub(w.t_max);
    BehaviorTerms {
        transition_penalty,
        kr_bonus: w.lambda_kr * rewarded_kr as f64,
        format_indicator: if format_valid { 1.0 } else { 0.0 },
        length_penalty: if overrun > 0 {
            -w.lambda_t * overrun as f64
        } else {
            0.0
        },
    }
}

pub fn behavior_reward(
    e: &EpisodeResult,
    w: &RewardWeights,
    table: &TransitionTable,
) -> BehaviorTerms {
    behavior_terms(
        &e.action_sequence,
        &e.qe_scores,
        e.answered(),
        check_format(&e.trajectory),
        e.turns,
        w,
        table,
    )
}

/// Weighted sum of the three components.
pub fn combine(
    task: f64,
    reflection: f64,
    terms: BehaviorTerms,
    w: &RewardWeights,
) -> RewardBreakdown {
    let behavior = terms.sum();
    RewardBreakdown {
        task,
        reflection,
        behavior,
        total: w.alpha * task + w.beta * reflection + w.gamma * behavior,
        terms,
        no_generation: false,
    }
}

pub fn total_reward(
    e: &EpisodeResult,
    w: &RewardWeights,
    table: &TransitionTable,
    source: TaskSource<'_>,
) -> Result<RewardBreakdown, RewardError> {
    let task = task_reward(e, source)?;
    let mut b = combine(
        task.value,
        reflection_reward(&e.qe_scores),
        behavior_reward(e, w, table),
        w,
    );
    b.no_generation = task.no_generation;
    Ok(b)
}
