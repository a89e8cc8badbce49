use super::{LoopConfig, Policy, PolicyAction, PolicyError, PolicyTurn};
use crate::protocol::{
    parse_transcript, serialize_segments, ImageRef, Segment, ToolObservation, Trajectory,
};
use crate::tools::prompts::render;
use crate::tools::{ChatMessage, RemoteClient, RemoteConfig};

/// Policy backed by a chat-completions model that speaks the tagged wire format.
#[derive(Debug, Clone)]
pub struct RemotePolicy {
    client: RemoteClient,
}

impl RemotePolicy {
    pub fn new(cfg: RemoteConfig) -> Self {
        RemotePolicy {
            client: RemoteClient::new(cfg),
        }
    }

    pub fn from_client(client: RemoteClient) -> Self {
        RemotePolicy { client }
    }

    /// Chat history for `t`: system prompt, task message, then alternating assistant
    /// turns and tool returns. Images produced by a tool are attached to its return.
    pub fn messages(&self, t: &Trajectory) -> Vec<ChatMessage> {
        let prompts = &self.client.config().prompts;
        let (item, anomaly) = (&t.task.item_name, &t.task.anomaly_type);
        let mut messages = vec![
            ChatMessage::system(prompts.agent_system(item, anomaly)),
            ChatMessage::user(
                render(&prompts.agent_user, item, anomaly),
                &[&t.task.normal_image],
            ),
        ];
        let mut pending: Vec<Segment> = Vec::new();
        for seg in &t.segments {
            if seg.is_assistant() {
                pending.push(seg.clone());
                continue;
            }
            if !pending.is_empty() {
                messages.push(ChatMessage::assistant(serialize_segments(&pending)));
                pending.clear();
            }
            let images: Vec<&ImageRef> = match seg {
                Segment::ToolReturn(ToolObservation::Image(img)) => vec![&img.image],
                _ => vec![],
            };
            messages.push(ChatMessage::user(
                serialize_segments(std::slice::from_ref(seg)),
                &images,
            ));
        }
        if !pending.is_empty() {
            messages.push(ChatMessage::assistant(serialize_segments(&pending)));
        }
        messages
    }
}

/// Reads one turn (a thinking block then a call or an answer) from model output.
pub(crate) fn parse_turn(text: &str) -> Result<PolicyTurn, PolicyError> {
    let segments = parse_transcript(text).map_err(|e| PolicyError::Unparseable(e.to_string()))?;
    match segments.as_slice() {
        [Segment::Thinking(thinking), action] => {
            let action = match action {
                Segment::ToolCall(c) => PolicyAction::Call(c.clone()),
                Segment::Answer(a) => PolicyAction::Answer(a.clone()),
                other => {
                    return Err(PolicyError::Unparseable(format!(
                        "expected tool_call or answer after thinking, found {}",
                        other.kind()
                    )))
                }
            };
            Ok(PolicyTurn {
                thinking: thinking.clone(),
                action,
            })
        }
        other => Err(PolicyError::Unparseable(format!(
            "expected one thinking block and one action, found {} segment(s)",
            other.len()
        ))),
    }
}

impl Policy for RemotePolicy {
    fn next_turn(&mut self, t: &Trajectory, _: &LoopConfig) -> Result<PolicyTurn, PolicyError> {
        let reply = self.client.chat("policy", &self.messages(t))?;
        parse_turn(&reply)
    }
}
