use serde_json::{json, Map, Value};

use super::{AnswerPayload, ProtocolError, ToolName, ToolObservation};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamType {
    /// Positive integer, 1-based index into the trajectory's image registry.
    ImageIndex,
    Text,
}

#[derive(Debug, Clone, Copy)]
pub struct ParamSpec {
    pub name: &'static str,
    pub ty: ParamType,
    pub description: &'static str,
}

#[derive(Debug, Clone, Copy)]
pub struct ToolSchema {
    pub name: ToolName,
    pub description: &'static str,
    pub params: &'static [ParamSpec],
}

const ITEM_NAME: ParamSpec = ParamSpec {
    name: "item_name",
    ty: ParamType::Text,
    description: "Object category shown in the image, e.g. 'bottle' or 'screw'.",
};

const ANOMALY_TYPE: ParamSpec = ParamSpec {
    name: "anomaly_type",
    ty: ParamType::Text,
    description: "Target defect type; must be the exact type named in the task.",
};

static PG: ToolSchema = ToolSchema {
    name: ToolName::PromptGen,
    description: "Produce the initial local-editing prompt for the object and defect type. \
                  Called once, before the first image_gen call.",
    params: &[
        ParamSpec {
            name: "image",
            ty: ParamType::ImageIndex,
            description: "1-based index of the normal image (always 1).",
        },
        ITEM_NAME,
        ANOMALY_TYPE,
    ],
};

static IG: ToolSchema = ToolSchema {
    name: ToolName::ImageGen,
    description: "Apply a local edit to an image with the image generation model.",
    params: &[
        ParamSpec {
            name: "prompt",
            ty: ParamType::Text,
            description:
                "Local editing prompt: change only the named region, keep everything else.",
        },
        ParamSpec {
            name: "target_image",
            ty: ParamType::ImageIndex,
            description: "1-based index of the image to edit (the original image, 1).",
        },
    ],
};

static QE: ToolSchema = ToolSchema {
    name: ToolName::QualityEval,
    description: "Score a synthesized image for location plausibility and visual quality.",
    params: &[
        ParamSpec {
            name: "anomaly_image",
            ty: ParamType::ImageIndex,
            description: "1-based index of the synthesized image to evaluate.",
        },
        ITEM_NAME,
        ANOMALY_TYPE,
    ],
};

static KR: ToolSchema = ToolSchema {
    name: ToolName::KnowledgeRetrieval,
    description:
        "Retrieve expert physical descriptions of the defect. Use after a low quality score.",
    params: &[ITEM_NAME, ANOMALY_TYPE],
};

static MG: ToolSchema = ToolSchema {
    name: ToolName::MaskGen,
    description: "Generate the segmentation mask for an accepted synthesized image.",
    params: &[ParamSpec {
        name: "anomaly_image",
        ty: ParamType::ImageIndex,
        description: "1-based index of the synthesized image to mask.",
    }],
};

impl ToolName {
    pub fn schema(self) -> &'static ToolSchema {
        match self {
            ToolName::PromptGen => &PG,
            ToolName::ImageGen => &IG,
            ToolName::QualityEval => &QE,
            ToolName::KnowledgeRetrieval => &KR,
            ToolName::MaskGen => &MG,
        }
    }
}

impl ToolSchema {
    /// Function-calling declaration in the common `{"type": "function", ...}` shape.
    pub fn to_json(&self) -> Value {
        let mut props = Map::new();
        for p in self.params {
            let ty = match p.ty {
                ParamType::ImageIndex => "integer",
                ParamType::Text => "string",
            };
            props.insert(
                p.name.to_string(),
                json!({"type": ty, "description": p.description}),
            );
        }
        let required: Vec<&str> = self.params.iter().map(|p| p.name).collect();
        json!({
            "type": "function",
            "function": {
                "name": self.name.wire_name(),
                "description": self.description,
                "parameters": {
                    "type": "object",
                    "properties": props,
                    "required": required,
                }
            }
        })
    }
}

/// JSON array of all five tool declarations.
pub fn tools_manifest() -> Value {
    Value::Array(ToolName::ALL.iter().map(|t| t.schema().to_json()).collect())
}

/// Strict argument check: every parameter present with the right type, nothing extra.
pub fn validate_arguments(tool: ToolName, args: &Map<String, Value>) -> Result<(), ProtocolError> {
    let schema = tool.schema();
    let ctx = || format!("{} arguments", tool.wire_name());
    for p in schema.params {
        let value = args
            .get(p.name)
            .ok_or_else(|| ProtocolError::schema(ctx(), format!("missing `{}`", p.name)))?;
        match p.ty {
            ParamType::ImageIndex => match value.as_u64() {
                Some(i) if i >= 1 => {}
                _ => {
                    return Err(ProtocolError::schema(
                        ctx(),
                        format!("`{}` must be a positive integer, got {value}", p.name),
                    ))
                }
            },
            ParamType::Text => {
                if !value.is_string() {
                    return Err(ProtocolError::schema(
                        ctx(),
                        format!("`{}` must be a string, got {value}", p.name),
                    ));
                }
            }
        }
    }
    if let Some(extra) = args
        .keys()
        .find(|k| !schema.params.iter().any(|p| p.name == k.as_str()))
    {
        return Err(ProtocolError::schema(
            ctx(),
            format!("unexpected field `{extra}`"),
        ));
    }
    Ok(())
}

/// Value-level checks that serde cannot express.
pub fn validate_observation(obs: &ToolObservation) -> Result<(), ProtocolError> {
    let ctx = format!("{} observation", obs.tool().wire_name());
    match obs {
        ToolObservation::Image(img) if img.new_image_index < 1 => Err(ProtocolError::schema(
            ctx,
            "`new_image_index` must be positive",
        )),
        ToolObservation::Quality(v) if !v.is_consistent() => Err(ProtocolError::schema(
            ctx,
            format!(
                "scores must lie in 0..=5 with score = (location + quality) / 10, got ({}, {}, {})",
                v.location_score, v.quality_score, v.score
            ),
        )),
        _ => Ok(()),
    }
}

pub fn validate_answer(answer: &AnswerPayload) -> Result<(), ProtocolError> {
    if answer.final_image_index < 1 {
        return Err(ProtocolError::schema(
            "answer",
            "`final_image_index` must be positive",
        ));
    }
    Ok(())
}
