use std::collections::VecDeque;

use super::{LoopConfig, Policy, PolicyAction, PolicyError, PolicyTurn};
use crate::protocol::{Segment, Trajectory};

/// Replays the assistant turns of a recorded trajectory.
#[derive(Debug, Clone)]
pub struct ReplayPolicy {
    turns: VecDeque<PolicyTurn>,
}

impl ReplayPolicy {
    pub fn new(recorded: &Trajectory) -> Self {
        let mut turns = VecDeque::new();
        let mut thinking = None;
        for seg in &recorded.segments {
            match seg {
                Segment::Thinking(t) => thinking = Some(t.clone()),
                Segment::ToolCall(c) => turns.push_back(PolicyTurn {
                    thinking: thinking.take().unwrap_or_default(),
                    action: PolicyAction::Call(c.clone()),
                }),
                Segment::Answer(a) => turns.push_back(PolicyTurn {
                    thinking: thinking.take().unwrap_or_default(),
                    action: PolicyAction::Answer(a.clone()),
                }),
                Segment::ToolReturn(_) => {}
            }
        }
        ReplayPolicy { turns }
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }
}

impl Policy for ReplayPolicy {
    fn next_turn(&mut self, _: &Trajectory, _: &LoopConfig) -> Result<PolicyTurn, PolicyError> {
        self.turns.pop_front().ok_or(PolicyError::Exhausted)
    }
}
