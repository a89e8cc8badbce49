use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::prompts::{render, DEFAULT_PG_TEMPLATE};
use super::{check_image_refs, check_observation, image_arg, text_arg, ToolBackend, ToolError};
use crate::protocol::{
    ImageRef, QualityVerdict, ToolCallPayload, ToolName, ToolObservation, Trajectory,
};

/// Scripted quality verdict; `score` is derived on use.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerdictSpec {
    pub location_score: u8,
    pub quality_score: u8,
    #[serde(default)]
    pub review: String,
}

impl VerdictSpec {
    pub fn new(location_score: u8, quality_score: u8) -> Self {
        VerdictSpec {
            location_score,
            quality_score,
            review: String::new(),
        }
    }
}

/// Deterministic responses for a simulated backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimScript {
    /// Consumed in order of quality-eval calls; the last entry repeats once exhausted.
    pub qe_score_sequence: Vec<VerdictSpec>,
    #[serde(default = "default_pg_template")]
    pub pg_prompt_template: String,
    /// item_name -> anomaly_type -> knowledge text.
    #[serde(default)]
    pub kr_knowledge_table: BTreeMap<String, BTreeMap<String, String>>,
    /// Maximum seeded perturbation applied to each verdict component. Zero replays the
    /// sequence exactly.
    #[serde(default)]
    pub score_jitter: u8,
}

fn default_pg_template() -> String {
    DEFAULT_PG_TEMPLATE.to_string()
}

impl Default for SimScript {
    fn default() -> Self {
        SimScript::from_scores(&[(4, 5)])
    }
}

impl SimScript {
    pub fn from_scores(scores: &[(u8, u8)]) -> Self {
        SimScript {
            qe_score_sequence: scores
                .iter()
                .map(|&(l, q)| VerdictSpec::new(l, q))
                .collect(),
            pg_prompt_template: default_pg_template(),
            kr_knowledge_table: BTreeMap::new(),
            score_jitter: 0,
        }
    }

    pub fn with_knowledge(mut self, item: &str, anomaly: &str, text: &str) -> Self {
        self.kr_knowledge_table
            .entry(item.to_string())
            .or_default()
            .insert(anomaly.to_string(), text.to_string());
        self
    }

    pub fn with_jitter(mut self, jitter: u8) -> Self {
        self.score_jitter = jitter;
        self
    }

    pub fn validate(&self) -> Result<(), ToolError> {
        if self.qe_score_sequence.is_empty() {
            return Err(ToolError::InvalidConfig(
                "simulated qe_score_sequence must not be empty".into(),
            ));
        }
        if let Some(v) = self
            .qe_score_sequence
            .iter()
            .find(|v| v.location_score > 5 || v.quality_score > 5)
        {
            return Err(ToolError::InvalidConfig(format!(
                "verdict scores must be in 0..=5, got ({}, {})",
                v.location_score, v.quality_score
            )));
        }
        Ok(())
    }

    /// Verdict for the `ordinal`-th (0-based) quality-eval call before jitter.
    pub fn verdict_at(&self, ordinal: usize) -> &VerdictSpec {
        let last = self.qe_score_sequence.len().saturating_sub(1);
        &self.qe_score_sequence[ordinal.min(last)]
    }

    pub fn knowledge(&self, item: &str, anomaly: &str) -> String {
        self.kr_knowledge_table
            .get(item)
            .and_then(|m| m.get(anomaly))
            .cloned()
            .unwrap_or_else(|| {
                format!(
                    "A {anomaly} on a {item} appears as a small, localized irregularity on the surface \
                     where the part is most exposed to stress or contact; it follows the material's \
                     texture and keeps the object's geometry intact."
                )
            })
    }
}

/// Seeded backend whose observations depend only on (seed, script, call ordinal, arguments).
#[derive(Debug, Clone)]
pub struct SimulatedBackend {
    seed: u64,
    script: SimScript,
    qe_calls: usize,
}

impl SimulatedBackend {
    pub fn new(seed: u64, script: SimScript) -> Self {
        SimulatedBackend {
            seed,
            script,
            qe_calls: 0,
        }
    }

    fn verdict(&self, ordinal: usize) -> QualityVerdict {
        let spec = self.script.verdict_at(ordinal);
        let (mut l, mut q) = (spec.location_score, spec.quality_score);
        let jitter = self.script.score_jitter as i16;
        if jitter > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(
                self.seed ^ (ordinal as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15),
            );
            let mut perturb =
                |x: u8| (x as i16 + rng.random_range(-jitter..=jitter)).clamp(0, 5) as u8;
            l = perturb(l);
            q = perturb(q);
        }
        let review = if spec.review.is_empty() {
            default_review(l, q)
        } else {
            spec.review.clone()
        };
        QualityVerdict::new(l, q, review)
    }
}

fn default_review(location: u8, quality: u8) -> String {
    let loc = match location {
        0..=2 => "the defect sits on an implausible part of the object",
        3..=4 => "the defect location is plausible",
        _ => "the defect location matches real samples",
    };
    let qual = match quality {
        0..=2 => "texture and blending look artificial; make the defect smaller and follow the surface material",
        3..=4 => "texture is mostly convincing with minor blending artifacts",
        _ => "texture, scale and contrast are indistinguishable from real defects",
    };
    format!("Location {location}/5: {loc}. Quality {quality}/5: {qual}.")
}

impl ToolBackend for SimulatedBackend {
    fn invoke(
        &mut self,
        call: &ToolCallPayload,
        ctx: &Trajectory,
    ) -> Result<ToolObservation, ToolError> {
        check_image_refs(call, ctx)?;
        let obs = match call.name {
            ToolName::PromptGen => ToolObservation::prompt(render(
                &self.script.pg_prompt_template,
                text_arg(call, "item_name"),
                text_arg(call, "anomaly_type"),
            )),
            ToolName::ImageGen => {
                let index = super::next_image_index(ctx);
                ToolObservation::image(
                    index,
                    ImageRef::new(format!("sim://{:016x}/image/{index}", self.seed)),
                )
            }
            ToolName::QualityEval => {
                let v = self.verdict(self.qe_calls);
                self.qe_calls += 1;
                ToolObservation::Quality(v)
            }
            ToolName::KnowledgeRetrieval => ToolObservation::knowledge(
                self.script
                    .knowledge(text_arg(call, "item_name"), text_arg(call, "anomaly_type")),
            ),
            ToolName::MaskGen => {
                let image = image_arg(call, ctx, "anomaly_image")?;
                ToolObservation::mask(ImageRef::new(format!("mask_of_{image}")))
            }
        };
        check_observation(call, ctx, &obs)?;
        Ok(obs)
    }

    fn reverse_normalize(&mut self, anomaly_image: &ImageRef) -> Result<ImageRef, ToolError> {
        Ok(ImageRef::new(format!("normal_of_{anomaly_image}")))
    }
}
