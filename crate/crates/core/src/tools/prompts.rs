//! Prompt text for the remote tool backends and the remote policy.
//!
//! All templates use `{item_name}` and `{anomaly_type}` placeholders. Each one
//! can be replaced from configuration.

use serde::{Deserialize, Serialize};

use crate::protocol::tools_manifest;

pub const AGENT_SYSTEM: &str = "\
You are an industrial anomaly synthesis agent. You add realistic, localized defects to \
images of normal industrial objects by calling tools and writing precise local editing prompts.

# Output format
To call a tool:
<thinking>your reasoning</thinking>
<tool_call>{\"name\": <function-name>, \"arguments\": <args-json-object>}</tool_call>

After mask_gen has returned, finish with:
<thinking>summary of the refinement steps and the final quality check</thinking>
<answer>{\"status\": \"success\", \"final_image_index\": <idx>, \"mask_generated\": true, \"synthesis_logic\": \"...\"}</answer>

Emit exactly one thinking block followed by exactly one tool call or answer per turn.

# Tools
<tools>
{tools}
</tools>

# Editing prompt rules
1. Place the {anomaly_type} where it physically occurs on a real {item_name}.
2. Start the editing prompt with: \"Using the provided image, change only [region] to introduce [defect]. \
Keep the rest of the image, including background, lighting, and global geometry, completely unchanged.\"
3. Describe texture interaction and keep the defect small and localized.";

pub const AGENT_USER: &str = "\
Task: edit the original image <image> (class: {item_name}) to synthesize a realistic {anomaly_type} anomaly. \
Use the exact anomaly type \"{anomaly_type}\" in every tool call. Tool results arrive as \
<tool_return> blocks holding JSON; treat their values, especially quality_eval scores, as authoritative.";

pub const PROMPT_GEN_SYSTEM: &str = "\
You write image-editing prompts for industrial defect synthesis. Inputs: a normal image of a {item_name} \
and the defect type {anomaly_type}. Decide where this defect plausibly occurs on the object, how it looks \
(shape, texture interaction, contrast, scale), and write one local editing prompt of the form \
\"Using the provided image, change only ... Keep the rest of the image unchanged.\" Keep the defect small \
and localized, state what must stay unchanged, and output only the prompt as a single paragraph.";

pub const QUALITY_EVAL_SYSTEM: &str = "\
You inspect synthetic industrial anomaly images. Inputs: a normal image, an edited image of a {item_name} \
that should show a {anomaly_type} defect. Score two aspects on an integer 0-5 scale \
(0 failed, 1-2 major problems, 3-4 plausible with minor flaws, 5 indistinguishable from real):
location_score: is the defect on a physically valid part of the object?
quality_score: are texture, scale, contrast and blending realistic?
Reply with JSON only: {\"location_score\": <int>, \"quality_score\": <int>, \"review\": \"<assessment>\"}";

pub const KNOWLEDGE_SYSTEM: &str = "\
Describe how a {anomaly_type} defect physically appears on a {item_name} in industrial inspection: \
typical location, shape, texture and scale. Reply with a short plain-text paragraph.";

pub const REVERSE_EDIT_PROMPT: &str = "\
Using the provided image, remove the {anomaly_type} defect from the {item_name} and restore the \
defect-free surface. Keep the rest of the image completely unchanged.";

pub const MASK_PROMPT: &str = "\
Produce a binary segmentation mask of the {anomaly_type} region on the {item_name}.";

pub const DEFAULT_PG_TEMPLATE: &str = "\
Using the provided image, change only a plausible region of the {item_name} to introduce a small, \
localized {anomaly_type}. Keep the rest of the image, including background, lighting, and global \
geometry, completely unchanged.";

/// Fills `{item_name}` and `{anomaly_type}` placeholders.
pub fn render(template: &str, item_name: &str, anomaly_type: &str) -> String {
    template
        .replace("{item_name}", item_name)
        .replace("{anomaly_type}", anomaly_type)
}

/// The set of prompts a remote deployment sends. Defaults are the constants above.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptSet {
    pub agent_system: String,
    pub agent_user: String,
    pub prompt_gen: String,
    pub quality_eval: String,
    pub knowledge: String,
    pub reverse_edit: String,
    pub mask: String,
}

impl Default for PromptSet {
    fn default() -> Self {
        PromptSet {
            agent_system: AGENT_SYSTEM.into(),
            agent_user: AGENT_USER.into(),
            prompt_gen: PROMPT_GEN_SYSTEM.into(),
            quality_eval: QUALITY_EVAL_SYSTEM.into(),
            knowledge: KNOWLEDGE_SYSTEM.into(),
            reverse_edit: REVERSE_EDIT_PROMPT.into(),
            mask: MASK_PROMPT.into(),
        }
    }
}

impl PromptSet {
    pub fn agent_system(&self, item_name: &str, anomaly_type: &str) -> String {
        let tools = serde_json::to_string_pretty(&tools_manifest()).unwrap_or_default();
        render(&self.agent_system, item_name, anomaly_type).replace("{tools}", &tools)
    }
}
