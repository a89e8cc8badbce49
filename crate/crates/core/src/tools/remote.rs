use std::thread;
use std::time::Duration;

use reqwest::blocking::Client;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::prompts::{render, PromptSet};
use super::{
    check_image_refs, check_observation, image_arg, next_image_index, text_arg, ToolBackend,
    ToolError,
};
use crate::protocol::{
    ImageRef, QualityVerdict, ToolCallPayload, ToolName, ToolObservation, Trajectory,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    pub attempts: u32,
    /// Delay before the second attempt; doubles after each further failure.
    pub initial_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            initial_backoff_ms: 1000,
        }
    }
}

/// JSON-over-HTTP backend settings.
///
/// PG, QE and KR use `POST {endpoint}/chat/completions`. IG and reverse
/// normalization use `POST {endpoint}/images/edits`; MG uses
/// `POST {endpoint}/images/masks`. Images travel as references.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteConfig {
    pub endpoint: String,
    /// Bearer token. Never serialized.
    #[serde(default, skip_serializing)]
    pub api_key: Option<String>,
    #[serde(default = "default_chat_model")]
    pub chat_model: String,
    #[serde(default = "default_image_model")]
    pub image_model: String,
    #[serde(default = "default_mask_model")]
    pub mask_model: String,
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub prompts: PromptSet,
}

fn default_chat_model() -> String {
    "chat-model".into()
}
fn default_image_model() -> String {
    "image-edit-model".into()
}
fn default_mask_model() -> String {
    "mask-model".into()
}
fn default_timeout() -> u64 {
    120
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        RemoteConfig {
            endpoint: endpoint.into(),
            api_key: None,
            chat_model: default_chat_model(),
            image_model: default_image_model(),
            mask_model: default_mask_model(),
            temperature: None,
            retry: RetryPolicy::default(),
            timeout_secs: default_timeout(),
            prompts: PromptSet::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ToolError> {
        if self.endpoint.trim().is_empty() {
            return Err(ToolError::InvalidConfig(
                "remote backend requires an endpoint".into(),
            ));
        }
        if self.retry.attempts == 0 {
            return Err(ToolError::InvalidConfig(
                "retry.attempts must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: Value,
}

impl ChatMessage {
    pub fn system(text: impl Into<String>) -> Self {
        ChatMessage {
            role: "system".into(),
            content: Value::String(text.into()),
        }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        ChatMessage {
            role: "assistant".into(),
            content: Value::String(text.into()),
        }
    }

    /// User turn with text followed by image references as `image_url` parts.
    pub fn user(text: impl Into<String>, images: &[&ImageRef]) -> Self {
        if images.is_empty() {
            return ChatMessage {
                role: "user".into(),
                content: Value::String(text.into()),
            };
        }
        let mut parts = vec![json!({"type": "text", "text": text.into()})];
        parts.extend(
            images
                .iter()
                .map(|img| json!({"type": "image_url", "image_url": {"url": img.as_str()}})),
        );
        ChatMessage {
            role: "user".into(),
            content: Value::Array(parts),
        }
    }
}

/// HTTP client with bounded retry, shared by the remote tool backend and the remote policy.
#[derive(Debug, Clone)]
pub struct RemoteClient {
    cfg: RemoteConfig,
    http: Client,
}

impl RemoteClient {
    pub fn new(cfg: RemoteConfig) -> Self {
        let http = Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .unwrap_or_else(|_| Client::new());
        RemoteClient { cfg, http }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.cfg
    }

    /// POSTs `body` to `path`, retrying transport failures, 429 and 5xx responses.
    pub fn post_json(&self, label: &str, path: &str, body: &Value) -> Result<Value, ToolError> {
        let url = format!(
            "{}/{}",
            self.cfg.endpoint.trim_end_matches('/'),
            path.trim_start_matches('/')
        );
        let attempts = self.cfg.retry.attempts.max(1);
        let mut delay = Duration::from_millis(self.cfg.retry.initial_backoff_ms);
        let mut last_error = String::new();
        for attempt in 1..=attempts {
            let mut req = self.http.post(&url).json(body);
            if let Some(key) = &self.cfg.api_key {
                req = req.bearer_auth(key);
            }
            match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        return resp.json::<Value>().map_err(|e| ToolError::BadResponse {
                            tool: label.into(),
                            message: format!("response is not JSON: {e}"),
                        });
                    }
                    let text = resp.text().unwrap_or_default();
                    if status.is_server_error() || status.as_u16() == 429 {
                        last_error = format!("HTTP {status}: {text}");
                    } else {
                        return Err(ToolError::BadResponse {
                            tool: label.into(),
                            message: format!("HTTP {status}: {text}"),
                        });
                    }
                }
                Err(e) => last_error = e.to_string(),
            }
            if attempt < attempts {
                thread::sleep(delay);
                delay *= 2;
            }
        }
        Err(ToolError::BackendUnavailable {
            tool: label.into(),
            attempts,
            message: last_error,
        })
    }

    /// Chat-completions request; returns the first choice's message text.
    pub fn chat(&self, label: &str, messages: &[ChatMessage]) -> Result<String, ToolError> {
        let mut body = json!({"model": self.cfg.chat_model, "messages": messages});
        if let Some(t) = self.cfg.temperature {
            body["temperature"] = json!(t);
        }
        let resp = self.post_json(label, "chat/completions", &body)?;
        resp.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| ToolError::BadResponse {
                tool: label.into(),
                message: "response lacks choices[0].message.content".into(),
            })
    }

    fn image_request(&self, label: &str, path: &str, body: Value) -> Result<ImageRef, ToolError> {
        let resp = self.post_json(label, path, &body)?;
        extract_image_ref(&resp).ok_or_else(|| ToolError::BadResponse {
            tool: label.into(),
            message: "response lacks an image reference".into(),
        })
    }
}

/// Accepts `data[0].url`, `data[0].id`, or a top-level `image` / `url` string.
fn extract_image_ref(resp: &Value) -> Option<ImageRef> {
    ["/data/0/url", "/data/0/id", "/image", "/url"]
        .iter()
        .find_map(|p| resp.pointer(p).and_then(Value::as_str))
        .filter(|s| !s.is_empty())
        .map(ImageRef::new)
}

/// Pulls the first JSON object out of a model reply, tolerating code fences and prose.
fn extract_json_object(text: &str) -> Option<Value> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    if end < start {
        return None;
    }
    serde_json::from_str(&text[start..=end]).ok()
}

#[derive(Deserialize)]
struct RawVerdict {
    location_score: i64,
    quality_score: i64,
    #[serde(default)]
    review: String,
}

fn parse_verdict(label: &str, text: &str) -> Result<QualityVerdict, ToolError> {
    let bad = |message: String| ToolError::BadResponse {
        tool: label.into(),
        message,
    };
    let value = extract_json_object(text).ok_or_else(|| bad("judge reply is not JSON".into()))?;
    let raw: RawVerdict =
        serde_json::from_value(value).map_err(|e| bad(format!("judge reply: {e}")))?;
    let in_range = |x: i64| (0..=5).contains(&x);
    if !in_range(raw.location_score) || !in_range(raw.quality_score) {
        return Err(bad(format!(
            "judge scores out of range: ({}, {})",
            raw.location_score, raw.quality_score
        )));
    }
    Ok(QualityVerdict::new(
        raw.location_score as u8,
        raw.quality_score as u8,
        raw.review,
    ))
}

impl ToolBackend for RemoteClient {
    fn invoke(
        &mut self,
        call: &ToolCallPayload,
        ctx: &Trajectory,
    ) -> Result<ToolObservation, ToolError> {
        check_image_refs(call, ctx)?;
        let label = call.name.wire_name();
        let prompts = &self.cfg.prompts;
        let (item, anomaly) = match call.name {
            ToolName::ImageGen | ToolName::MaskGen => {
                (ctx.task.item_name.as_str(), ctx.task.anomaly_type.as_str())
            }
            _ => (text_arg(call, "item_name"), text_arg(call, "anomaly_type")),
        };
        let obs = match call.name {
            ToolName::PromptGen => {
                let normal = image_arg(call, ctx, "image")?;
                let text = self.chat(
                    label,
                    &[
                        ChatMessage::system(render(&prompts.prompt_gen, item, anomaly)),
                        ChatMessage::user(
                            format!("item_name: {item}\nanomaly_type: {anomaly}"),
                            &[normal],
                        ),
                    ],
                )?;
                let prompt = text.trim();
                if prompt.is_empty() {
                    return Err(ToolError::BadResponse {
                        tool: label.into(),
                        message: "empty prompt".into(),
                    });
                }
                ToolObservation::prompt(prompt)
            }
            ToolName::ImageGen => {
                let target = image_arg(call, ctx, "target_image")?;
                let image = self.image_request(
                    label,
                    "images/edits",
                    json!({
                        "model": self.cfg.image_model,
                        "image": target.as_str(),
                        "prompt": text_arg(call, "prompt"),
                    }),
                )?;
                ToolObservation::image(next_image_index(ctx), image)
            }
            ToolName::QualityEval => {
                let normal = ctx.image(1).unwrap_or(&ctx.task.normal_image);
                let anomaly_image = image_arg(call, ctx, "anomaly_image")?;
                let text = self.chat(
                    label,
                    &[
                        ChatMessage::system(render(&prompts.quality_eval, item, anomaly)),
                        ChatMessage::user(
                            format!(
                                "Normal image first, anomaly image second.\nObject: {item}\nAnomaly type: {anomaly}"
                            ),
                            &[normal, anomaly_image],
                        ),
                    ],
                )?;
                ToolObservation::Quality(parse_verdict(label, &text)?)
            }
            ToolName::KnowledgeRetrieval => {
                let text = self.chat(
                    label,
                    &[
                        ChatMessage::system(render(&prompts.knowledge, item, anomaly)),
                        ChatMessage::user(format!("{anomaly} on {item}"), &[]),
                    ],
                )?;
                ToolObservation::knowledge(text.trim())
            }
            ToolName::MaskGen => {
                let normal = ctx.image(1).unwrap_or(&ctx.task.normal_image);
                let anomaly_image = image_arg(call, ctx, "anomaly_image")?;
                let mask = self.image_request(
                    label,
                    "images/masks",
                    json!({
                        "model": self.cfg.mask_model,
                        "image": normal.as_str(),
                        "anomaly_image": anomaly_image.as_str(),
                        "prompt": render(&prompts.mask, item, anomaly),
                    }),
                )?;
                ToolObservation::mask(mask)
            }
        };
        check_observation(call, ctx, &obs)?;
        Ok(obs)
    }

    fn reverse_normalize(&mut self, anomaly_image: &ImageRef) -> Result<ImageRef, ToolError> {
        self.image_request(
            "reverse_normalize",
            "images/edits",
            json!({
                "model": self.cfg.image_model,
                "image": anomaly_image.as_str(),
                "prompt": render(&self.cfg.prompts.reverse_edit, "object", "defect"),
            }),
        )
    }
}
