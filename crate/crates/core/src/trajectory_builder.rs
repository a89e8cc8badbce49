//! Builds supervised trajectories backwards from real anomaly images.
//!
//! A defect-free reference is reconstructed from the anomaly image, `n` generation
//! steps are prepared (weaker intermediates first, the real image last), and a
//! forward transcript is written over that image sequence.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::protocol::{
    format_violation, AnswerPayload, FormatViolation, ImageRef, QualityVerdict, Segment, TaskSpec,
    ToolCallPayload, ToolName, ToolObservation, Trajectory,
};
use crate::tools::prompts::render;
use crate::tools::{BackendConfig, ToolBackend, ToolError};

pub const SIMPLE_PROMPT: &str = "\
Using the provided image, add a faint {anomaly_type} somewhere on the {item_name}. \
Keep the rest of the image unchanged.";

pub const COMPLEX_PROMPT: &str = "\
Using the provided image, change only the region of the {item_name} where a {anomaly_type} \
typically forms to introduce a small {anomaly_type} whose texture, contrast and edges follow the \
surrounding material. Keep the rest of the image, including background, lighting, and global \
geometry, completely unchanged.";

pub const DEFAULT_KR_RATIO: f64 = 0.5;

/// Number of generation steps: fixed, or drawn uniformly from {1, 2, 3}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "StepsRepr", into = "StepsRepr")]
pub enum Steps {
    Fixed(u8),
    #[default]
    Random,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum StepsRepr {
    Count(u64),
    Word(String),
}

impl TryFrom<StepsRepr> for Steps {
    type Error = String;
    fn try_from(r: StepsRepr) -> Result<Self, String> {
        match r {
            StepsRepr::Count(n @ 1..=3) => Ok(Steps::Fixed(n as u8)),
            StepsRepr::Word(w) if w.eq_ignore_ascii_case("random") => Ok(Steps::Random),
            StepsRepr::Count(n) => Err(format!("n must be 1, 2, 3 or \"random\", got {n}")),
            StepsRepr::Word(w) => Err(format!("n must be 1, 2, 3 or \"random\", got {w:?}")),
        }
    }
}

impl From<Steps> for StepsRepr {
    fn from(s: Steps) -> Self {
        match s {
            Steps::Fixed(n) => StepsRepr::Count(n as u64),
            Steps::Random => StepsRepr::Word("random".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildSpec {
    pub anomaly_image: ImageRef,
    pub item_name: String,
    pub anomaly_type: String,
    #[serde(default)]
    pub n: Steps,
    /// Probability that a dual-generation trajectory includes knowledge retrieval.
    #[serde(default = "default_kr_ratio")]
    pub kr_ratio: f64,
    /// Unset seeds are filled in by the caller (see [`BuildSpec::seeded`]).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn default_kr_ratio() -> f64 {
    DEFAULT_KR_RATIO
}

impl BuildSpec {
    pub fn new(anomaly_image: impl Into<String>, item_name: &str, anomaly_type: &str) -> Self {
        BuildSpec {
            anomaly_image: ImageRef::new(anomaly_image),
            item_name: item_name.into(),
            anomaly_type: anomaly_type.into(),
            n: Steps::Random,
            kr_ratio: DEFAULT_KR_RATIO,
            seed: None,
        }
    }

    pub fn with_n(mut self, n: Steps) -> Self {
        self.n = n;
        self
    }

    pub fn with_kr_ratio(mut self, kr_ratio: f64) -> Self {
        self.kr_ratio = kr_ratio;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    /// Fills an unset seed with `default`.
    pub fn seeded(mut self, default: u64) -> Self {
        self.seed.get_or_insert(default);
        self
    }

    pub fn validate(&self) -> Result<(), BuildError> {
        if !(0.0..=1.0).contains(&self.kr_ratio) {
            return Err(BuildError::InvalidSpec(format!(
                "kr_ratio must be in [0, 1], got {}",
                self.kr_ratio
            )));
        }
        if let Steps::Fixed(n) = self.n {
            if !(1..=3).contains(&n) {
                return Err(BuildError::InvalidSpec(format!("n must be 1..=3, got {n}")));
            }
        }
        if self.item_name.is_empty() || self.anomaly_type.is_empty() {
            return Err(BuildError::InvalidSpec(
                "item_name and anomaly_type must be non-empty".into(),
            ));
        }
        if self.anomaly_image.as_str().is_empty() {
            return Err(BuildError::InvalidSpec(
                "anomaly_image must be non-empty".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaxonomyClass {
    SingleGeneration,
    DualGeneration,
    TripleGeneration,
}

impl TaxonomyClass {
    pub const ALL: [TaxonomyClass; 3] = [
        TaxonomyClass::SingleGeneration,
        TaxonomyClass::DualGeneration,
        TaxonomyClass::TripleGeneration,
    ];

    pub fn from_generations(n: usize) -> Option<Self> {
        match n {
            1 => Some(TaxonomyClass::SingleGeneration),
            2 => Some(TaxonomyClass::DualGeneration),
            3 => Some(TaxonomyClass::TripleGeneration),
            _ => None,
        }
    }

    pub fn generations(self) -> usize {
        self as usize + 1
    }
}

impl fmt::Display for TaxonomyClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Taxonomy class by number of image-generation calls.
pub fn classify(t: &Trajectory) -> Option<TaxonomyClass> {
    let igs = t
        .tool_calls()
        .filter(|c| c.name == ToolName::ImageGen)
        .count();
    TaxonomyClass::from_generations(igs)
}

/// Whether step `t` of an `n`-step build is followed by knowledge retrieval.
pub fn need_kr(n: u8, t: u8, kr_draw: f64, kr_ratio: f64) -> bool {
    match (n, t) {
        (1, _) => false,
        (n, t) if t >= n => false,
        (3, 1) => true,
        (2, 1) => kr_draw < kr_ratio,
        _ => false,
    }
}

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("invalid build spec: {0}")]
    InvalidSpec(String),
    #[error("backend failure: {0}")]
    Backend(#[from] ToolError),
    #[error("built trajectory is malformed: {0}")]
    Malformed(FormatViolation),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Quality verdicts for each step: rising, below the acceptance threshold until the
/// last step, and low enough before a retrieval step to justify it.
fn step_verdicts(n: u8, kr_first: bool) -> Vec<(u8, u8)> {
    match (n, kr_first) {
        (1, _) => vec![(4, 5)],
        (2, true) => vec![(2, 2), (4, 5)],
        (2, false) => vec![(3, 3), (4, 5)],
        _ => vec![(2, 2), (3, 3), (4, 5)],
    }
}

fn review(step: u8, n: u8, l: u8, q: u8, anomaly: &str, item: &str) -> String {
    if step == n {
        format!(
            "Location {l}/5, quality {q}/5. The {anomaly} sits where it occurs on real {item} parts and \
             blends with the surface texture; no visible editing artifacts."
        )
    } else if l + q < 5 {
        format!(
            "Location {l}/5, quality {q}/5. The {anomaly} looks pasted on: edges are too sharp, the \
             contrast is too high and the region is not where a {anomaly} forms on a {item}."
        )
    } else {
        format!(
            "Location {l}/5, quality {q}/5. Placement is plausible but the {anomaly} is oversized and its \
             shading does not follow the material; make it smaller and subtler."
        )
    }
}

fn push_turn(t: &mut Trajectory, thinking: String, call: ToolCallPayload, obs: ToolObservation) {
    t.segments.push(Segment::Thinking(thinking));
    t.segments.push(Segment::ToolCall(call));
    t.push_observation(obs);
}

fn ig_call(prompt: &str) -> ToolCallPayload {
    ToolCallPayload::new(
        ToolName::ImageGen,
        json!({"prompt": prompt, "target_image": 1}),
    )
}

/// Builds one trajectory. The backend supplies the reconstructed normal image, the
/// intermediate generations, the generated prompt and retrieved knowledge; quality
/// verdicts and the mask are synthesized.
pub fn build_trajectory(
    spec: &BuildSpec,
    backend: &BackendConfig,
) -> Result<Trajectory, BuildError> {
    spec.validate()?;
    let seed = spec.seed.unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = match spec.n {
        Steps::Fixed(n) => n,
        Steps::Random => rng.random_range(1..=3u8),
    };
    let kr_draw: f64 = rng.random();
    let mut session = backend.session_with_seed(seed);
    build_with(spec, n, kr_draw, session.as_mut())
}

fn build_with(
    spec: &BuildSpec,
    n: u8,
    kr_draw: f64,
    backend: &mut dyn ToolBackend,
) -> Result<Trajectory, BuildError> {
    let item = spec.item_name.as_str();
    let anomaly = spec.anomaly_type.as_str();

    // Step 1: defect-free reference.
    let normal = backend.reverse_normalize(&spec.anomaly_image)?;
    let task = TaskSpec {
        item_name: item.into(),
        anomaly_type: anomaly.into(),
        normal_image: normal,
    };

    // Step 2: image sequence, real anomaly last.
    let mut scratch = Trajectory::new(task.clone());
    let mut stages = Vec::new();
    for template in [SIMPLE_PROMPT, COMPLEX_PROMPT].iter().take(n as usize - 1) {
        let obs = backend.invoke(&ig_call(&render(template, item, anomaly)), &scratch)?;
        let ToolObservation::Image(img) = &obs else {
            unreachable!("backend observations are checked against the call")
        };
        stages.push(img.image.clone());
        scratch.push_observation(obs);
    }
    stages.push(spec.anomaly_image.clone());

    // Step 3: forward transcript.
    let mut t = Trajectory::new(task);
    let pg = ToolCallPayload::new(
        ToolName::PromptGen,
        json!({"image": 1, "item_name": item, "anomaly_type": anomaly}),
    );
    let pg_obs = backend.invoke(&pg, &t)?;
    let ToolObservation::Prompt(first) = &pg_obs else {
        unreachable!("backend observations are checked against the call")
    };
    let mut prompt = first.prompt.clone();
    push_turn(
        &mut t,
        format!(
            "The task is a {anomaly} on a {item}. I will first ask for a local editing prompt grounded in the original image."
        ),
        pg,
        pg_obs,
    );

    let verdicts = step_verdicts(n, need_kr(n, 1, kr_draw, spec.kr_ratio));
    for step in 1..=n {
        let index = t.image_count() + 1;
        let thinking = if step == 1 {
            "The prompt is ready; apply it to the original image.".to_string()
        } else {
            format!("Step {step}: regenerate from the original image with the refined prompt.")
        };
        push_turn(
            &mut t,
            thinking,
            ig_call(&prompt),
            ToolObservation::image(index, stages[step as usize - 1].clone()),
        );

        let (l, q) = verdicts[step as usize - 1];
        let verdict = QualityVerdict::new(l, q, review(step, n, l, q, anomaly, item));
        let score = verdict.score;
        let critique = verdict.review.clone();
        push_turn(
            &mut t,
            format!("Evaluate whether image {index} shows a convincing {anomaly} in a plausible location."),
            ToolCallPayload::new(
                ToolName::QualityEval,
                json!({"anomaly_image": index, "item_name": item, "anomaly_type": anomaly}),
            ),
            ToolObservation::Quality(verdict),
        );

        let mut knowledge = None;
        if need_kr(n, step, kr_draw, spec.kr_ratio) {
            let kr = ToolCallPayload::new(
                ToolName::KnowledgeRetrieval,
                json!({"item_name": item, "anomaly_type": anomaly}),
            );
            let obs = backend.invoke(&kr, &t)?;
            if let ToolObservation::Knowledge(k) = &obs {
                knowledge = Some(k.knowledge.clone());
            }
            push_turn(
                &mut t,
                format!(
                    "Score {score:.2} is low. Retrieve how a {anomaly} really appears on a {item} before refining."
                ),
                kr,
                obs,
            );
        }
        if step < n {
            prompt = format!("{prompt} Address this review: {critique}");
            if let Some(k) = knowledge {
                prompt = format!("{prompt} Reference knowledge: {k}");
            }
        }
    }

    // Step 4: mask, synthesized from the final image.
    let final_index = t.image_count();
    let final_image = t
        .image(final_index)
        .cloned()
        .unwrap_or_else(|| spec.anomaly_image.clone());
    push_turn(
        &mut t,
        format!("The latest image meets the quality threshold; generate the mask for image {final_index}."),
        ToolCallPayload::new(ToolName::MaskGen, json!({"anomaly_image": final_index})),
        ToolObservation::mask(ImageRef::new(format!("mask_of_{final_image}"))),
    );

    // Step 5: summary.
    let used_kr = t.tool_sequence().contains(&ToolName::KnowledgeRetrieval);
    t.segments.push(Segment::Thinking(format!(
        "The {anomaly} was refined over {n} generation(s){}; image {final_index} and its mask are final.",
        if used_kr { " with retrieved knowledge" } else { "" }
    )));
    t.segments.push(Segment::Answer(AnswerPayload {
        status: "success".into(),
        final_image_index: final_index,
        mask_generated: true,
        synthesis_logic: format!(
            "Generated an editing prompt for a {anomaly} on the {item}, produced {n} image(s) with quality feedback{}, and masked the accepted result.",
            if used_kr { " and knowledge retrieval" } else { "" }
        ),
    }));

    if let Some(v) = format_violation(&t) {
        return Err(BuildError::Malformed(v));
    }
    Ok(t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildFailure {
    pub index: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetStats {
    pub requested: usize,
    /// Successfully built trajectories.
    pub total: usize,
    pub per_class: BTreeMap<TaxonomyClass, usize>,
    pub with_kr: usize,
    /// Fraction of built trajectories containing knowledge retrieval (0 when empty).
    pub kr_rate: f64,
    pub failures: Vec<BuildFailure>,
}

/// Builds all specs (in parallel) and writes successful trajectories as JSONL in spec
/// order. Per-spec failures are recorded, not fatal.
pub fn build_dataset(
    specs: &[BuildSpec],
    backend: &BackendConfig,
    out: &Path,
) -> Result<(Vec<Trajectory>, DatasetStats), BuildError> {
    let built: Vec<Result<Trajectory, BuildError>> = specs
        .par_iter()
        .map(|s| build_trajectory(s, backend))
        .collect();

    let mut writer = BufWriter::new(File::create(out)?);
    let mut stats = DatasetStats {
        requested: specs.len(),
        per_class: TaxonomyClass::ALL.iter().map(|c| (*c, 0)).collect(),
        ..DatasetStats::default()
    };
    let mut trajectories = Vec::new();
    for (index, result) in built.into_iter().enumerate() {
        match result {
            Ok(t) => {
                writeln!(writer, "{}", t.to_jsonl_line())?;
                stats.total += 1;
                if let Some(class) = classify(&t) {
                    *stats.per_class.entry(class).or_default() += 1;
                }
                if t.tool_sequence().contains(&ToolName::KnowledgeRetrieval) {
                    stats.with_kr += 1;
                }
                trajectories.push(t);
            }
            Err(e) => stats.failures.push(BuildFailure {
                index,
                error: e.to_string(),
            }),
        }
    }
    writer.flush()?;
    if stats.total > 0 {
        stats.kr_rate = stats.with_kr as f64 / stats.total as f64;
    }
    Ok((trajectories, stats))
}

/// Per-segment supervision flags: assistant-authored segments are targets, tool
/// returns are context only.
pub fn sft_target_mask(t: &Trajectory) -> Vec<bool> {
    t.segments.iter().map(Segment::is_assistant).collect()
}
