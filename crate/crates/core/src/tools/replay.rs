use std::collections::VecDeque;

use super::{check_image_refs, check_observation, ToolBackend, ToolError};
use crate::protocol::{ImageRef, Segment, ToolCallPayload, ToolObservation, Trajectory};

/// Plays back the observations recorded in a trajectory, in order.
///
/// Each call must equal the recorded call at the same position; anything else is a
/// `BadResponse`, which makes divergence from the recording visible.
#[derive(Debug, Clone)]
pub struct ReplayBackend {
    pending: VecDeque<(ToolCallPayload, ToolObservation)>,
    normal_image: ImageRef,
}

impl ReplayBackend {
    pub fn new(recorded: &Trajectory) -> Self {
        let mut pending = VecDeque::new();
        let mut last_call = None;
        for seg in &recorded.segments {
            match seg {
                Segment::ToolCall(c) => last_call = Some(c.clone()),
                Segment::ToolReturn(o) => {
                    if let Some(c) = last_call.take() {
                        pending.push_back((c, o.clone()));
                    }
                }
                _ => {}
            }
        }
        ReplayBackend {
            pending,
            normal_image: recorded.task.normal_image.clone(),
        }
    }

    pub fn remaining(&self) -> usize {
        self.pending.len()
    }
}

impl ToolBackend for ReplayBackend {
    fn invoke(
        &mut self,
        call: &ToolCallPayload,
        ctx: &Trajectory,
    ) -> Result<ToolObservation, ToolError> {
        check_image_refs(call, ctx)?;
        let bad = |message: String| ToolError::BadResponse {
            tool: call.name.wire_name().into(),
            message,
        };
        let (recorded, obs) = self
            .pending
            .pop_front()
            .ok_or_else(|| bad("recording exhausted".into()))?;
        if &recorded != call {
            return Err(bad(format!(
                "call diverges from recording (expected {})",
                recorded.name
            )));
        }
        check_observation(call, ctx, &obs)?;
        Ok(obs)
    }

    fn reverse_normalize(&mut self, _anomaly_image: &ImageRef) -> Result<ImageRef, ToolError> {
        Ok(self.normal_image.clone())
    }
}
