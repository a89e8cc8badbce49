//! Trajectory data model and the tagged tool-call wire format.
//!
//! A transcript is a flat sequence of non-nesting tagged blocks:
//!
//! ```text
//! <thinking>free text</thinking>
//! <tool_call>{"name": "...", "arguments": {...}}</tool_call>
//! <tool_return>{"tool": "...", "content": {...}}</tool_return>
//! <answer>{"status": "...", "final_image_index": 2, ...}</answer>
//! ```
//!
//! The persisted form of a [`Trajectory`] is one JSON object per line with
//! the fields `task`, `segments` and `images`. Segment payloads are stored as
//! parsed JSON, never as raw tagged text.

mod format;
mod parse;
mod schema;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

pub use format::{check_format, format_violation, FormatViolation};
pub use parse::{parse_trajectory, parse_transcript, serialize_segments, serialize_trajectory};
pub use schema::{
    tools_manifest, validate_answer, validate_arguments, validate_observation, ParamSpec,
    ParamType, ToolSchema,
};

/// The five registered tools.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ToolName {
    #[serde(rename = "prompt_gen")]
    PromptGen,
    #[serde(rename = "image_gen")]
    ImageGen,
    #[serde(rename = "quality_eval")]
    QualityEval,
    #[serde(rename = "knowledge_retrieval")]
    KnowledgeRetrieval,
    #[serde(rename = "mask_gen")]
    MaskGen,
}

impl ToolName {
    pub const ALL: [ToolName; 5] = [
        ToolName::PromptGen,
        ToolName::ImageGen,
        ToolName::QualityEval,
        ToolName::KnowledgeRetrieval,
        ToolName::MaskGen,
    ];

    /// Function name used on the wire.
    pub fn wire_name(self) -> &'static str {
        match self {
            ToolName::PromptGen => "prompt_gen",
            ToolName::ImageGen => "image_gen",
            ToolName::QualityEval => "quality_eval",
            ToolName::KnowledgeRetrieval => "knowledge_retrieval",
            ToolName::MaskGen => "mask_gen",
        }
    }

    /// Two-letter abbreviation (PG, IG, QE, KR, MG).
    pub fn short(self) -> &'static str {
        match self {
            ToolName::PromptGen => "PG",
            ToolName::ImageGen => "IG",
            ToolName::QualityEval => "QE",
            ToolName::KnowledgeRetrieval => "KR",
            ToolName::MaskGen => "MG",
        }
    }

    pub fn from_wire(name: &str) -> Option<ToolName> {
        ToolName::ALL.into_iter().find(|t| t.wire_name() == name)
    }
}

impl fmt::Display for ToolName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short())
    }
}

impl FromStr for ToolName {
    type Err = ProtocolError;

    /// Accepts either the wire name or the two-letter abbreviation.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ToolName::from_wire(s)
            .or_else(|| ToolName::ALL.into_iter().find(|t| t.short() == s))
            .ok_or_else(|| ProtocolError::UnknownTool(s.to_string()))
    }
}

/// Opaque image identifier: a path, URL or backend-assigned id.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageRef(pub String);

impl ImageRef {
    pub fn new(s: impl Into<String>) -> Self {
        ImageRef(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ImageRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ImageRef {
    fn from(s: &str) -> Self {
        ImageRef(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub item_name: String,
    pub anomaly_type: String,
    pub normal_image: ImageRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolCallPayload {
    pub name: ToolName,
    pub arguments: Map<String, Value>,
}

impl ToolCallPayload {
    /// Non-object `arguments` become an empty map, which then fails schema validation.
    pub fn new(name: ToolName, arguments: Value) -> Self {
        let arguments = match arguments {
            Value::Object(map) => map,
            _ => Map::new(),
        };
        ToolCallPayload { name, arguments }
    }

    /// Image indices referenced by this call's arguments.
    pub fn image_indices(&self) -> Vec<u64> {
        self.name
            .schema()
            .params
            .iter()
            .filter(|p| p.ty == ParamType::ImageIndex)
            .filter_map(|p| self.arguments.get(p.name).and_then(Value::as_u64))
            .collect()
    }

    pub fn str_arg(&self, key: &str) -> Option<&str> {
        self.arguments.get(key).and_then(Value::as_str)
    }

    pub fn index_arg(&self, key: &str) -> Option<u64> {
        self.arguments.get(key).and_then(Value::as_u64)
    }
}

/// Judge output: two 0–5 integer scores and a review. `score` is
/// `(location_score + quality_score) / 10`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QualityVerdict {
    pub location_score: u8,
    pub quality_score: u8,
    pub review: String,
    pub score: f64,
}

impl QualityVerdict {
    pub const MAX_COMPONENT: u8 = 5;

    /// Builds a verdict, clamping both components into `0..=5`.
    pub fn new(location_score: u8, quality_score: u8, review: impl Into<String>) -> Self {
        let location_score = location_score.min(Self::MAX_COMPONENT);
        let quality_score = quality_score.min(Self::MAX_COMPONENT);
        QualityVerdict {
            location_score,
            quality_score,
            review: review.into(),
            score: Self::merge(location_score, quality_score),
        }
    }

    pub fn merge(location_score: u8, quality_score: u8) -> f64 {
        (location_score as f64 + quality_score as f64) / 10.0
    }

    pub fn is_consistent(&self) -> bool {
        self.location_score <= Self::MAX_COMPONENT
            && self.quality_score <= Self::MAX_COMPONENT
            && self.score == Self::merge(self.location_score, self.quality_score)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptObservation {
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageObservation {
    pub new_image_index: u64,
    pub image: ImageRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnowledgeObservation {
    pub knowledge: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskObservation {
    pub mask_reference: ImageRef,
}

/// A tool's observation, carried by a `<tool_return>` block as
/// `{"tool": <wire name>, "content": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "tool", content = "content")]
pub enum ToolObservation {
    #[serde(rename = "prompt_gen")]
    Prompt(PromptObservation),
    #[serde(rename = "image_gen")]
    Image(ImageObservation),
    #[serde(rename = "quality_eval")]
    Quality(QualityVerdict),
    #[serde(rename = "knowledge_retrieval")]
    Knowledge(KnowledgeObservation),
    #[serde(rename = "mask_gen")]
    Mask(MaskObservation),
}

impl ToolObservation {
    pub fn tool(&self) -> ToolName {
        match self {
            ToolObservation::Prompt(_) => ToolName::PromptGen,
            ToolObservation::Image(_) => ToolName::ImageGen,
            ToolObservation::Quality(_) => ToolName::QualityEval,
            ToolObservation::Knowledge(_) => ToolName::KnowledgeRetrieval,
            ToolObservation::Mask(_) => ToolName::MaskGen,
        }
    }

    pub fn prompt(text: impl Into<String>) -> Self {
        ToolObservation::Prompt(PromptObservation {
            prompt: text.into(),
        })
    }

    pub fn image(new_image_index: u64, image: ImageRef) -> Self {
        ToolObservation::Image(ImageObservation {
            new_image_index,
            image,
        })
    }

    pub fn knowledge(text: impl Into<String>) -> Self {
        ToolObservation::Knowledge(KnowledgeObservation {
            knowledge: text.into(),
        })
    }

    pub fn mask(mask_reference: ImageRef) -> Self {
        ToolObservation::Mask(MaskObservation { mask_reference })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnswerPayload {
    pub status: String,
    pub final_image_index: u64,
    pub mask_generated: bool,
    pub synthesis_logic: String,
}

/// One block of a transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "body", rename_all = "snake_case")]
pub enum Segment {
    Thinking(String),
    ToolCall(ToolCallPayload),
    ToolReturn(ToolObservation),
    Answer(AnswerPayload),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Thinking,
    ToolCall,
    ToolReturn,
    Answer,
}

impl SegmentKind {
    pub fn tag(self) -> &'static str {
        match self {
            SegmentKind::Thinking => "thinking",
            SegmentKind::ToolCall => "tool_call",
            SegmentKind::ToolReturn => "tool_return",
            SegmentKind::Answer => "answer",
        }
    }
}

impl fmt::Display for SegmentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl Segment {
    pub fn kind(&self) -> SegmentKind {
        match self {
            Segment::Thinking(_) => SegmentKind::Thinking,
            Segment::ToolCall(_) => SegmentKind::ToolCall,
            Segment::ToolReturn(_) => SegmentKind::ToolReturn,
            Segment::Answer(_) => SegmentKind::Answer,
        }
    }

    pub fn thinking(text: impl Into<String>) -> Self {
        Segment::Thinking(text.into())
    }

    /// True for segments authored by the policy rather than the environment.
    pub fn is_assistant(&self) -> bool {
        !matches!(self, Segment::ToolReturn(_))
    }
}

/// One synthesis task's transcript plus its image registry.
///
/// `images[i]` is image index `i + 1`; index 1 is the normal input image and
/// every image-generation return appends exactly one entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trajectory {
    pub task: TaskSpec,
    pub segments: Vec<Segment>,
    pub images: Vec<ImageRef>,
}

impl Trajectory {
    pub fn new(task: TaskSpec) -> Self {
        let images = vec![task.normal_image.clone()];
        Trajectory {
            task,
            segments: Vec::new(),
            images,
        }
    }

    pub fn image(&self, index: u64) -> Option<&ImageRef> {
        let i = usize::try_from(index).ok()?.checked_sub(1)?;
        self.images.get(i)
    }

    pub fn image_count(&self) -> u64 {
        self.images.len() as u64
    }

    pub fn tool_calls(&self) -> impl Iterator<Item = &ToolCallPayload> {
        self.segments.iter().filter_map(|s| match s {
            Segment::ToolCall(c) => Some(c),
            _ => None,
        })
    }

    pub fn tool_returns(&self) -> impl Iterator<Item = &ToolObservation> {
        self.segments.iter().filter_map(|s| match s {
            Segment::ToolReturn(o) => Some(o),
            _ => None,
        })
    }

    pub fn tool_sequence(&self) -> Vec<ToolName> {
        self.tool_calls().map(|c| c.name).collect()
    }

    pub fn answer(&self) -> Option<&AnswerPayload> {
        self.segments.iter().rev().find_map(|s| match s {
            Segment::Answer(a) => Some(a),
            _ => None,
        })
    }

    /// Appends an observation, registering the new image for image-generation returns.
    pub fn push_observation(&mut self, obs: ToolObservation) {
        if let ToolObservation::Image(img) = &obs {
            self.images.push(img.image.clone());
        }
        self.segments.push(Segment::ToolReturn(obs));
    }

    pub fn to_jsonl_line(&self) -> String {
        serde_json::to_string(self).expect("trajectory serialization is infallible")
    }

    pub fn from_jsonl_line(line: &str) -> Result<Self, ProtocolError> {
        serde_json::from_str(line).map_err(|e| ProtocolError::MalformedJson {
            tag: "trajectory".into(),
            offset: 0,
            message: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("<{tag}> opened at byte {offset} is never closed")]
    UnclosedTag { tag: String, offset: usize },
    #[error("malformed JSON in <{tag}> at byte {offset}: {message}")]
    MalformedJson {
        tag: String,
        offset: usize,
        message: String,
    },
    #[error("unknown tool `{0}`")]
    UnknownTool(String),
    #[error("schema violation in {context}: {reason}")]
    SchemaViolation { context: String, reason: String },
    #[error("unexpected content at byte {offset}: {snippet:?}")]
    UnexpectedContent { offset: usize, snippet: String },
}

impl ProtocolError {
    pub(crate) fn schema(context: impl Into<String>, reason: impl Into<String>) -> Self {
        ProtocolError::SchemaViolation {
            context: context.into(),
            reason: reason.into(),
        }
    }
}
