use serde::de::DeserializeOwned;
use serde_json::Value;

use super::schema::{validate_answer, validate_arguments, validate_observation};
use super::{
    AnswerPayload, ImageObservation, KnowledgeObservation, MaskObservation, PromptObservation,
    ProtocolError, QualityVerdict, Segment, SegmentKind, TaskSpec, ToolCallPayload, ToolName,
    ToolObservation, Trajectory,
};

const KINDS: [SegmentKind; 4] = [
    SegmentKind::Thinking,
    SegmentKind::ToolCall,
    SegmentKind::ToolReturn,
    SegmentKind::Answer,
];

fn open_tag(kind: SegmentKind) -> String {
    format!("<{}>", kind.tag())
}

fn close_tag(kind: SegmentKind) -> String {
    format!("</{}>", kind.tag())
}

/// True if `text` contains any segment tag, open or close.
fn contains_tag(text: &str) -> bool {
    KINDS
        .iter()
        .any(|&k| text.contains(&open_tag(k)) || text.contains(&close_tag(k)))
}

/// Parses a raw transcript into its ordered segments.
///
/// Whitespace between blocks and around thinking text is ignored. Any other
/// text outside a block is rejected.
pub fn parse_transcript(raw: &str) -> Result<Vec<Segment>, ProtocolError> {
    let mut segments = Vec::new();
    let mut pos = 0;
    loop {
        let rest = &raw[pos..];
        let trimmed = rest.trim_start();
        pos += rest.len() - trimmed.len();
        if trimmed.is_empty() {
            return Ok(segments);
        }
        let kind = KINDS
            .into_iter()
            .find(|&k| trimmed.starts_with(&open_tag(k)))
            .ok_or_else(|| ProtocolError::UnexpectedContent {
                offset: pos,
                snippet: trimmed.chars().take(32).collect(),
            })?;
        let body_start = pos + open_tag(kind).len();
        let close = close_tag(kind);
        let body_len =
            raw[body_start..]
                .find(&close)
                .ok_or_else(|| ProtocolError::UnclosedTag {
                    tag: kind.tag().into(),
                    offset: pos,
                })?;
        let body = &raw[body_start..body_start + body_len];
        // The grammar does not nest, so any tag inside the body means this block
        // ended without its close tag.
        if contains_tag(body) {
            return Err(ProtocolError::UnclosedTag {
                tag: kind.tag().into(),
                offset: pos,
            });
        }
        segments.push(parse_body(kind, body, body_start)?);
        pos = body_start + body_len + close.len();
    }
}

fn parse_body(kind: SegmentKind, body: &str, offset: usize) -> Result<Segment, ProtocolError> {
    if kind == SegmentKind::Thinking {
        return Ok(Segment::Thinking(body.trim().to_string()));
    }
    let value: Value = serde_json::from_str(body).map_err(|e| ProtocolError::MalformedJson {
        tag: kind.tag().into(),
        offset,
        message: e.to_string(),
    })?;
    match kind {
        SegmentKind::ToolCall => parse_tool_call(value).map(Segment::ToolCall),
        SegmentKind::ToolReturn => parse_tool_return(value).map(Segment::ToolReturn),
        SegmentKind::Answer => {
            let answer: AnswerPayload = typed("answer", value)?;
            validate_answer(&answer)?;
            Ok(Segment::Answer(answer))
        }
        SegmentKind::Thinking => unreachable!(),
    }
}

fn typed<T: DeserializeOwned>(context: &str, value: Value) -> Result<T, ProtocolError> {
    serde_json::from_value(value).map_err(|e| ProtocolError::schema(context, e.to_string()))
}

fn expect_object(
    context: &str,
    value: Value,
    keys: [&str; 2],
) -> Result<serde_json::Map<String, Value>, ProtocolError> {
    let Value::Object(map) = value else {
        return Err(ProtocolError::schema(
            context,
            "payload must be a JSON object",
        ));
    };
    if let Some(extra) = map.keys().find(|k| !keys.contains(&k.as_str())) {
        return Err(ProtocolError::schema(
            context,
            format!("unexpected field `{extra}`"),
        ));
    }
    Ok(map)
}

fn tool_name(context: &str, value: Option<&Value>, field: &str) -> Result<ToolName, ProtocolError> {
    let name = value
        .ok_or_else(|| ProtocolError::schema(context, format!("missing `{field}`")))?
        .as_str()
        .ok_or_else(|| ProtocolError::schema(context, format!("`{field}` must be a string")))?;
    ToolName::from_wire(name).ok_or_else(|| ProtocolError::UnknownTool(name.to_string()))
}

fn parse_tool_call(value: Value) -> Result<ToolCallPayload, ProtocolError> {
    let mut map = expect_object("tool_call", value, ["name", "arguments"])?;
    let name = tool_name("tool_call", map.get("name"), "name")?;
    let arguments = match map.remove("arguments") {
        Some(Value::Object(args)) => args,
        Some(_) => {
            return Err(ProtocolError::schema(
                "tool_call",
                "`arguments` must be a JSON object",
            ))
        }
        None => return Err(ProtocolError::schema("tool_call", "missing `arguments`")),
    };
    validate_arguments(name, &arguments)?;
    Ok(ToolCallPayload { name, arguments })
}

fn parse_tool_return(value: Value) -> Result<ToolObservation, ProtocolError> {
    let mut map = expect_object("tool_return", value, ["tool", "content"])?;
    let tool = tool_name("tool_return", map.get("tool"), "tool")?;
    let content = map
        .remove("content")
        .ok_or_else(|| ProtocolError::schema("tool_return", "missing `content`"))?;
    let ctx = format!("{} observation", tool.wire_name());
    let obs = match tool {
        ToolName::PromptGen => ToolObservation::Prompt(typed::<PromptObservation>(&ctx, content)?),
        ToolName::ImageGen => ToolObservation::Image(typed::<ImageObservation>(&ctx, content)?),
        ToolName::QualityEval => ToolObservation::Quality(typed::<QualityVerdict>(&ctx, content)?),
        ToolName::KnowledgeRetrieval => {
            ToolObservation::Knowledge(typed::<KnowledgeObservation>(&ctx, content)?)
        }
        ToolName::MaskGen => ToolObservation::Mask(typed::<MaskObservation>(&ctx, content)?),
    };
    validate_observation(&obs)?;
    Ok(obs)
}

fn write_segment(out: &mut String, seg: &Segment) {
    let kind = seg.kind();
    out.push_str(&open_tag(kind));
    match seg {
        Segment::Thinking(text) => out.push_str(text),
        Segment::ToolCall(c) => out.push_str(&compact(c)),
        Segment::ToolReturn(o) => out.push_str(&compact(o)),
        Segment::Answer(a) => out.push_str(&compact(a)),
    }
    out.push_str(&close_tag(kind));
}

fn compact<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("payload serialization is infallible")
}

/// Renders segments in the tag grammar, one block per line.
pub fn serialize_segments(segments: &[Segment]) -> String {
    let mut out = String::new();
    for (i, seg) in segments.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        write_segment(&mut out, seg);
    }
    out
}

pub fn serialize_trajectory(t: &Trajectory) -> String {
    serialize_segments(&t.segments)
}

/// Parses a transcript and rebuilds the image registry from its image-generation returns.
pub fn parse_trajectory(raw: &str, task: TaskSpec) -> Result<Trajectory, ProtocolError> {
    let segments = parse_transcript(raw)?;
    let mut t = Trajectory::new(task);
    for seg in segments {
        match seg {
            Segment::ToolReturn(obs) => t.push_observation(obs),
            other => t.segments.push(other),
        }
    }
    Ok(t)
}
