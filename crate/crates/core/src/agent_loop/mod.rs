//! Thought / action / observation episode runner.
//!
//! The environment executes whatever valid tool call the policy makes. It never
//! injects, reorders or drops actions; tool discipline is a matter for rewards.

mod remote_policy;
mod replay;
mod scripted;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{
    validate_answer, validate_arguments, AnswerPayload, Segment, TaskSpec, ToolCallPayload,
    ToolName, ToolObservation, Trajectory,
};
use crate::tools::{BackendConfig, ToolBackend, ToolError};

pub use remote_policy::RemotePolicy;
pub use replay::ReplayPolicy;
pub use scripted::{scripted_policy, ScriptedPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopConfig {
    /// Quality score at or above which refinement stops.
    pub theta: f64,
    /// Image-generation budget.
    pub max_generations: u32,
    /// Total policy-turn budget, counting the answer turn.
    pub t_max: u32,
    /// Quality score below which knowledge retrieval is requested.
    pub kr_trigger: f64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            theta: 0.8,
            max_generations: 3,
            t_max: 12,
            kr_trigger: 0.5,
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0 <= self.kr_trigger && self.kr_trigger <= self.theta && self.theta <= 1.0) {
            return Err(format!(
                "need 0 <= kr_trigger <= theta <= 1, got kr_trigger={} theta={}",
                self.kr_trigger, self.theta
            ));
        }
        if self.max_generations < 1 {
            return Err("max_generations must be at least 1".into());
        }
        if self.t_max < 1 {
            return Err("t_max must be at least 1".into());
        }
        Ok(())
    }

    /// Turns the scripted policy needs in the worst case: PG, (IG, QE) per generation,
    /// KR between generations, MG, answer.
    pub fn scripted_turn_bound(&self) -> u32 {
        3 * self.max_generations + 2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyAction {
    Call(ToolCallPayload),
    Answer(AnswerPayload),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTurn {
    pub thinking: String,
    pub action: PolicyAction,
}

impl PolicyTurn {
    pub fn call(thinking: impl Into<String>, name: ToolName, args: serde_json::Value) -> Self {
        PolicyTurn {
            thinking: thinking.into(),
            action: PolicyAction::Call(ToolCallPayload::new(name, args)),
        }
    }

    pub fn answer(thinking: impl Into<String>, answer: AnswerPayload) -> Self {
        PolicyTurn {
            thinking: thinking.into(),
            action: PolicyAction::Answer(answer),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("unparseable policy output: {0}")]
    Unparseable(String),
    #[error("invalid policy action: {0}")]
    InvalidAction(String),
    #[error("policy transport failure: {0}")]
    Transport(#[from] ToolError),
    #[error("policy has no further turns")]
    Exhausted,
}

pub trait Policy: Send {
    fn next_turn(
        &mut self,
        transcript: &Trajectory,
        cfg: &LoopConfig,
    ) -> Result<PolicyTurn, PolicyError>;
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn next_turn(
        &mut self,
        transcript: &Trajectory,
        cfg: &LoopConfig,
    ) -> Result<PolicyTurn, PolicyError> {
        (**self).next_turn(transcript, cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Answer,
    TurnBudget,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeResult {
    pub trajectory: Trajectory,
    /// Last quality-eval score, if any quality evaluation happened.
    pub final_score: Option<f64>,
    pub qe_scores: Vec<f64>,
    pub action_sequence: Vec<ToolName>,
    /// Policy turns taken, including the answer turn and a failed turn.
    pub turns: u32,
    pub terminated_by: Termination,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl EpisodeResult {
    pub fn answered(&self) -> bool {
        self.terminated_by == Termination::Answer
    }
}

/// One line of an episode JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeRecord {
    pub task_index: usize,
    pub rollout: usize,
    pub seed: u64,
    pub episode: EpisodeResult,
}

/// Runs one episode until the policy answers, the turn budget runs out, or an error occurs.
pub fn run_episode(
    task: &TaskSpec,
    policy: &mut dyn Policy,
    backend: &mut dyn ToolBackend,
    cfg: &LoopConfig,
) -> EpisodeResult {
    let mut trajectory = Trajectory::new(task.clone());
    let mut qe_scores = Vec::new();
    let mut action_sequence = Vec::new();
    let mut turns = 0;

    let finish = |trajectory, qe_scores: Vec<f64>, action_sequence, turns, terminated_by, error| {
        EpisodeResult {
            trajectory,
            final_score: qe_scores.last().copied(),
            qe_scores,
            action_sequence,
            turns,
            terminated_by,
            error,
        }
    };

    while turns < cfg.t_max {
        turns += 1;
        let turn = match policy.next_turn(&trajectory, cfg) {
            Ok(turn) => turn,
            Err(e) => {
                return finish(
                    trajectory,
                    qe_scores,
                    action_sequence,
                    turns,
                    Termination::Error,
                    Some(e.to_string()),
                )
            }
        };
        let invalid = match &turn.action {
            PolicyAction::Call(call) => validate_arguments(call.name, &call.arguments).err(),
            PolicyAction::Answer(answer) => validate_answer(answer).err(),
        };
        trajectory.segments.push(Segment::Thinking(turn.thinking));
        if let Some(e) = invalid {
            let msg = PolicyError::InvalidAction(e.to_string()).to_string();
            return finish(
                trajectory,
                qe_scores,
                action_sequence,
                turns,
                Termination::Error,
                Some(msg),
            );
        }
        match turn.action {
            PolicyAction::Answer(answer) => {
                trajectory.segments.push(Segment::Answer(answer));
                return finish(
                    trajectory,
                    qe_scores,
                    action_sequence,
                    turns,
                    Termination::Answer,
                    None,
                );
            }
            PolicyAction::Call(call) => {
                action_sequence.push(call.name);
                let result = backend.invoke(&call, &trajectory);
                trajectory.segments.push(Segment::ToolCall(call));
                match result {
                    Ok(obs) => {
                        if let ToolObservation::Quality(v) = &obs {
                            qe_scores.push(v.score);
                        }
                        trajectory.push_observation(obs);
                    }
                    Err(e) => {
                        return finish(
                            trajectory,
                            qe_scores,
                            action_sequence,
                            turns,
                            Termination::Error,
                            Some(e.to_string()),
                        )
                    }
                }
            }
        }
    }
    finish(
        trajectory,
        qe_scores,
        action_sequence,
        turns,
        Termination::TurnBudget,
        None,
    )
}

/// Seed of rollout `i` in a group: `base ^ i`.
pub fn rollout_seed(base: u64, i: usize) -> u64 {
    base ^ i as u64
}

/// Runs `g` independent episodes of one task. Rollout `i` gets its own policy from
/// `make_policy(i)` and a fresh backend session seeded with [`rollout_seed`]. Results
/// come back in rollout order; one episode's failure does not affect the others.
pub fn run_group<P, F>(
    task: &TaskSpec,
    make_policy: F,
    backend: &BackendConfig,
    cfg: &LoopConfig,
    g: usize,
) -> Vec<EpisodeResult>
where
    P: Policy,
    F: Fn(usize) -> P + Sync,
{
    let base = backend.seed().unwrap_or(0);
    (0..g)
        .into_par_iter()
        .map(|i| {
            let mut policy = make_policy(i);
            let mut session = backend.session_with_seed(rollout_seed(base, i));
            run_episode(task, &mut policy, session.as_mut(), cfg)
        })
        .collect()
}

/// Re-executes a recorded trajectory through the environment.
pub fn replay_episode(recorded: &Trajectory, cfg: &LoopConfig) -> EpisodeResult {
    let mut policy = ReplayPolicy::new(recorded);
    let mut backend = crate::tools::ReplayBackend::new(recorded);
    let replay_cfg = LoopConfig {
        t_max: cfg.t_max.max(policy.len() as u32),
        ..*cfg
    };
    run_episode(&recorded.task, &mut policy, &mut backend, &replay_cfg)
}
