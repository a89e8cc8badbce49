use std::fmt;

use super::schema::{validate_answer, validate_arguments, validate_observation};
use super::{Segment, SegmentKind, ToolName, ToolObservation, Trajectory};

/// First structural defect found in a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub enum FormatViolation {
    Empty,
    /// Segment at `index` has the wrong kind for its position in the turn structure.
    UnexpectedSegment {
        index: usize,
        expected: &'static str,
        found: SegmentKind,
    },
    /// A tool return does not belong to the call directly before it.
    MismatchedReturn {
        index: usize,
        call: ToolName,
        returned: ToolName,
    },
    MissingAnswer,
    InvalidPayload {
        index: usize,
        reason: String,
    },
    ThinkingContainsTag {
        index: usize,
    },
    DanglingImage {
        index: usize,
        image: u64,
        available: u64,
    },
    /// An image-generation return did not append the next registry slot.
    RegistryMismatch {
        index: usize,
        reason: String,
    },
}

impl fmt::Display for FormatViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FormatViolation::Empty => write!(f, "trajectory has no segments"),
            FormatViolation::UnexpectedSegment {
                index,
                expected,
                found,
            } => write!(f, "segment {index}: expected {expected}, found {found}"),
            FormatViolation::MismatchedReturn {
                index,
                call,
                returned,
            } => write!(f, "segment {index}: {returned} return follows {call} call"),
            FormatViolation::MissingAnswer => write!(f, "trajectory does not end with an answer"),
            FormatViolation::InvalidPayload { index, reason } => {
                write!(f, "segment {index}: {reason}")
            }
            FormatViolation::ThinkingContainsTag { index } => {
                write!(f, "segment {index}: thinking text contains a segment tag")
            }
            FormatViolation::DanglingImage {
                index,
                image,
                available,
            } => write!(
                f,
                "segment {index}: image index {image} does not exist ({available} registered)"
            ),
            FormatViolation::RegistryMismatch { index, reason } => {
                write!(f, "segment {index}: {reason}")
            }
        }
    }
}

#[derive(Clone, Copy)]
enum Expect {
    Thinking,
    Action,
    Return(ToolName),
    End,
}

const TAGS: [&str; 8] = [
    "<thinking>",
    "</thinking>",
    "<tool_call>",
    "</tool_call>",
    "<tool_return>",
    "</tool_return>",
    "<answer>",
    "</answer>",
];

/// Returns the first structural violation, or `None` for a well-formed trajectory.
///
/// Well-formed means the segment kinds follow `(thinking tool_call tool_return)* thinking answer`,
/// every return answers the call right before it, all payloads pass their schemas, image
/// indices reference registered images, and the registry grows by exactly one per
/// image-generation return.
pub fn format_violation(t: &Trajectory) -> Option<FormatViolation> {
    if t.segments.is_empty() {
        return Some(FormatViolation::Empty);
    }
    if t.images.is_empty() || t.images[0] != t.task.normal_image {
        return Some(FormatViolation::RegistryMismatch {
            index: 0,
            reason: "image 1 must be the task's normal image".into(),
        });
    }
    let mut expect = Expect::Thinking;
    let mut registered: u64 = 1;
    for (index, seg) in t.segments.iter().enumerate() {
        let unexpected = |expected| {
            Some(FormatViolation::UnexpectedSegment {
                index,
                expected,
                found: seg.kind(),
            })
        };
        match (expect, seg) {
            (Expect::Thinking, Segment::Thinking(text)) => {
                if TAGS.iter().any(|tag| text.contains(tag)) {
                    return Some(FormatViolation::ThinkingContainsTag { index });
                }
                expect = Expect::Action;
            }
            (Expect::Thinking, _) => return unexpected("thinking"),
            (Expect::Action, Segment::ToolCall(call)) => {
                if let Err(e) = validate_arguments(call.name, &call.arguments) {
                    return Some(FormatViolation::InvalidPayload {
                        index,
                        reason: e.to_string(),
                    });
                }
                if let Some(&image) = call.image_indices().iter().find(|&&i| i > registered) {
                    return Some(FormatViolation::DanglingImage {
                        index,
                        image,
                        available: registered,
                    });
                }
                expect = Expect::Return(call.name);
            }
            (Expect::Action, Segment::Answer(answer)) => {
                if let Err(e) = validate_answer(answer) {
                    return Some(FormatViolation::InvalidPayload {
                        index,
                        reason: e.to_string(),
                    });
                }
                if answer.final_image_index > registered {
                    return Some(FormatViolation::DanglingImage {
                        index,
                        image: answer.final_image_index,
                        available: registered,
                    });
                }
                expect = Expect::End;
            }
            (Expect::Action, _) => return unexpected("tool_call or answer"),
            (Expect::Return(call), Segment::ToolReturn(obs)) => {
                if obs.tool() != call {
                    return Some(FormatViolation::MismatchedReturn {
                        index,
                        call,
                        returned: obs.tool(),
                    });
                }
                if let Err(e) = validate_observation(obs) {
                    return Some(FormatViolation::InvalidPayload {
                        index,
                        reason: e.to_string(),
                    });
                }
                if let ToolObservation::Image(img) = obs {
                    if img.new_image_index != registered + 1 {
                        return Some(FormatViolation::RegistryMismatch {
                            index,
                            reason: format!(
                                "new_image_index {} but {} images registered",
                                img.new_image_index, registered
                            ),
                        });
                    }
                    if t.image(img.new_image_index) != Some(&img.image) {
                        return Some(FormatViolation::RegistryMismatch {
                            index,
                            reason: format!(
                                "registry slot {} does not hold {}",
                                img.new_image_index, img.image
                            ),
                        });
                    }
                    registered += 1;
                }
                expect = Expect::Thinking;
            }
            (Expect::Return(_), _) => return unexpected("tool_return"),
            (Expect::End, _) => return unexpected("end of trajectory"),
        }
    }
    if !matches!(expect, Expect::End) {
        return Some(FormatViolation::MissingAnswer);
    }
    if registered != t.image_count() {
        return Some(FormatViolation::RegistryMismatch {
            index: t.segments.len(),
            reason: format!(
                "{} images registered but {} image-generation returns",
                t.image_count(),
                registered - 1
            ),
        });
    }
    None
}

/// True iff the trajectory is structurally valid (see [`format_violation`]).
pub fn check_format(t: &Trajectory) -> bool {
    format_violation(t).is_none()
}
