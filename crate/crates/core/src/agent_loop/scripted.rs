use serde_json::json;

use super::{LoopConfig, Policy, PolicyError, PolicyTurn};
use crate::protocol::{AnswerPayload, Segment, ToolName, ToolObservation, Trajectory};

/// Reference policy: generate, evaluate, refine (optionally with retrieved knowledge),
/// then mask and answer. Needs no language model.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScriptedPolicy;

impl Policy for ScriptedPolicy {
    fn next_turn(
        &mut self,
        transcript: &Trajectory,
        cfg: &LoopConfig,
    ) -> Result<PolicyTurn, PolicyError> {
        Ok(scripted_policy(transcript, cfg))
    }
}

/// Everything since the most recent image-generation call.
struct RoundState<'a> {
    generations: u32,
    last_prompt: Option<&'a str>,
    last_review: Option<&'a str>,
    knowledge: Option<&'a str>,
    kr_used: bool,
}

fn round_state(t: &Trajectory) -> RoundState<'_> {
    let mut s = RoundState {
        generations: 0,
        last_prompt: None,
        last_review: None,
        knowledge: None,
        kr_used: false,
    };
    for seg in &t.segments {
        match seg {
            Segment::ToolCall(c) if c.name == ToolName::ImageGen => {
                s.generations += 1;
                s.last_prompt = c.str_arg("prompt");
                s.knowledge = None;
                s.kr_used = false;
            }
            Segment::ToolCall(c) if c.name == ToolName::KnowledgeRetrieval => s.kr_used = true,
            Segment::ToolReturn(ToolObservation::Quality(v)) => s.last_review = Some(&v.review),
            Segment::ToolReturn(ToolObservation::Knowledge(k)) => s.knowledge = Some(&k.knowledge),
            _ => {}
        }
    }
    s
}

fn refined_prompt(s: &RoundState<'_>) -> String {
    let mut p = s.last_prompt.unwrap_or_default().to_string();
    if let Some(review) = s.last_review {
        p.push_str(" Address this review: ");
        p.push_str(review);
    }
    if let Some(k) = s.knowledge {
        p.push_str(" Reference knowledge: ");
        p.push_str(k);
    }
    p
}

/// Next turn of the reference policy for `transcript`.
///
/// The decision depends only on the last observation and the refinement state:
/// prompt -> generate; image -> evaluate; accepted score or exhausted budget -> mask;
/// low score below `kr_trigger` with no retrieval yet this round -> retrieve;
/// otherwise -> regenerate with a refined prompt; mask -> answer.
pub fn scripted_policy(transcript: &Trajectory, cfg: &LoopConfig) -> PolicyTurn {
    let task = &transcript.task;
    let item = task.item_name.as_str();
    let anomaly = task.anomaly_type.as_str();
    let state = round_state(transcript);
    let latest_image = transcript.image_count();

    let Some(last) = transcript.tool_returns().last() else {
        return PolicyTurn::call(
            format!("I need an initial local editing prompt for a {anomaly} on the {item}."),
            ToolName::PromptGen,
            json!({"image": 1, "item_name": item, "anomaly_type": anomaly}),
        );
    };

    let mask = |reason: String| {
        PolicyTurn::call(
            reason,
            ToolName::MaskGen,
            json!({"anomaly_image": latest_image}),
        )
    };
    let regenerate = |thinking: String| {
        PolicyTurn::call(
            thinking,
            ToolName::ImageGen,
            json!({"prompt": refined_prompt(&state), "target_image": 1}),
        )
    };

    match last {
        ToolObservation::Prompt(p) => PolicyTurn::call(
            "The prompt is ready; apply it to the original image.",
            ToolName::ImageGen,
            json!({"prompt": p.prompt, "target_image": 1}),
        ),
        ToolObservation::Image(img) => PolicyTurn::call(
            format!(
                "Image {} is generated; evaluate the {anomaly} it shows.",
                img.new_image_index
            ),
            ToolName::QualityEval,
            json!({"anomaly_image": img.new_image_index, "item_name": item, "anomaly_type": anomaly}),
        ),
        ToolObservation::Quality(v) if v.score >= cfg.theta => mask(format!(
            "Score {:.2} meets the threshold {:.2}; generate the mask for image {latest_image}.",
            v.score, cfg.theta
        )),
        ToolObservation::Quality(v) if state.generations >= cfg.max_generations => mask(format!(
            "Score {:.2} is below {:.2} but the generation budget of {} is spent; keep image {latest_image}.",
            v.score, cfg.theta, cfg.max_generations
        )),
        ToolObservation::Quality(v) if v.score < cfg.kr_trigger && !state.kr_used => {
            PolicyTurn::call(
                format!(
                    "Score {:.2} is low; retrieve how a {anomaly} really looks on a {item}.",
                    v.score
                ),
                ToolName::KnowledgeRetrieval,
                json!({"item_name": item, "anomaly_type": anomaly}),
            )
        }
        ToolObservation::Quality(v) => regenerate(format!(
            "Score {:.2} is below {:.2}; refine the prompt using the review.",
            v.score, cfg.theta
        )),
        ToolObservation::Knowledge(_) => {
            regenerate("Fold the retrieved knowledge and the review into a refined prompt.".into())
        }
        ToolObservation::Mask(_) => PolicyTurn::answer(
            format!(
                "The mask is ready after {} generation(s); image {latest_image} is final.",
                state.generations
            ),
            AnswerPayload {
                status: "success".into(),
                final_image_index: latest_image,
                mask_generated: true,
                synthesis_logic: format!(
                    "Synthesized a {anomaly} on the {item} in {} generation(s), refining from quality feedback{}.",
                    state.generations,
                    if state.kr_used || transcript.tool_sequence().contains(&ToolName::KnowledgeRetrieval) {
                        " and retrieved knowledge"
                    } else {
                        ""
                    }
                ),
            },
        ),
    }
}
