//! Group-relative policy optimization and supervised fine-tuning loss kernels over
//! per-token log-probabilities.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrpoConfig {
    /// Clip half-width around 1 for the importance ratio.
    pub epsilon: f64,
    /// Weight of the per-token KL penalty against the reference policy.
    pub kl_beta: f64,
    pub filter_zero_advantage: bool,
    /// Groups whose reward std is below this get all-zero advantages.
    pub std_floor: f64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            epsilon: 0.2,
            kl_beta: 0.04,
            filter_zero_advantage: true,
            std_floor: 1e-8,
        }
    }
}

impl GrpoConfig {
    // Negated comparisons so NaN is rejected too.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), String> {
        if !(self.epsilon > 0.0) {
            return Err(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.kl_beta >= 0.0 && self.kl_beta.is_finite()) {
            return Err(format!(
                "kl_beta must be finite and non-negative, got {}",
                self.kl_beta
            ));
        }
        if !(self.std_floor >= 0.0) {
            return Err(format!(
                "std_floor must be non-negative, got {}",
                self.std_floor
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GrpoError {
    #[error("group has {0} rollout(s); at least 2 are required")]
    GroupTooSmall(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite input: {0}")]
    NonFinite(String),
}

/// One rollout's per-token log-probabilities under the current, sampling and
/// reference policies, with the supervision mask.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenLogprobs {
    pub new: Vec<f64>,
    pub old: Vec<f64>,
    #[serde(rename = "ref")]
    pub reference: Vec<f64>,
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupRollout {
    pub rewards: Vec<f64>,
    pub tokens: Vec<TokenLogprobs>,
}

impl GroupRollout {
    pub fn validate(&self) -> Result<(), GrpoError> {
        if self.rewards.len() < 2 {
            return Err(GrpoError::GroupTooSmall(self.rewards.len()));
        }
        if self.tokens.len() != self.rewards.len() {
            return Err(GrpoError::ShapeMismatch(format!(
                "{} rewards but {} token sequences",
                self.rewards.len(),
                self.tokens.len()
            )));
        }
        for (i, t) in self.tokens.iter().enumerate() {
            let n = t.new.len();
            if t.old.len() != n || t.reference.len() != n || t.mask.len() != n {
                return Err(GrpoError::ShapeMismatch(format!(
                    "rollout {i}: new {n}, old {}, ref {}, mask {}",
                    t.old.len(),
                    t.reference.len(),
                    t.mask.len()
                )));
            }
            if !t
                .new
                .iter()
                .chain(&t.old)
                .chain(&t.reference)
                .all(|x| x.is_finite())
            {
                return Err(GrpoError::NonFinite(format!(
                    "rollout {i} log-probabilities"
                )));
            }
        }
        if !self.rewards.iter().all(|r| r.is_finite()) {
            return Err(GrpoError::NonFinite("rewards".into()));
        }
        Ok(())
    }
}

/// `(r - mean) / std` with the population standard deviation; all zeros when the
/// std falls below `std_floor`.
pub fn group_advantages(rewards: &[f64], cfg: &GrpoConfig) -> Result<Vec<f64>, GrpoError> {
    if rewards.len() < 2 {
        return Err(GrpoError::GroupTooSmall(rewards.len()));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std.is_nan() || std < cfg.std_floor || std == 0.0 {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// Token-wise `exp(new - old)`.
pub fn importance_ratios(new: &[f64], old: &[f64]) -> Result<Vec<f64>, GrpoError> {
    if new.len() != old.len() {
        return Err(GrpoError::ShapeMismatch(format!(
            "new has {} tokens, old has {}",
            new.len(),
            old.len()
        )));
    }
    Ok(new.iter().zip(old).map(|(n, o)| (n - o).exp()).collect())
}

/// Non-negative per-token KL estimate `exp(ref - new) - (ref - new) - 1`.
pub fn kl_estimate(new: f64, reference: f64) -> f64 {
    let d = reference - new;
    // exp_m1 keeps the estimate non-negative near d = 0 where exp(d) - 1 would cancel.
    (d.exp_m1() - d).max(0.0)
}

/// `min(ρA, clip(ρ, 1-ε, 1+ε)A)`; also reports whether clipping was binding.
pub fn clipped_surrogate(ratio: f64, advantage: f64, epsilon: f64) -> (f64, bool) {
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    let raw = ratio * advantage;
    let cut = clipped * advantage;
    if cut < raw {
        (cut, true)
    } else {
        (raw, false)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutDiagnostics {
    pub advantage: f64,
    /// False when dropped by zero-advantage filtering.
    pub kept: bool,
    pub supervised_tokens: usize,
    pub clip_fraction: f64,
    pub mean_kl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrpoLoss {
    pub loss: f64,
    pub advantages: Vec<f64>,
    /// Supervised tokens contributing to the loss.
    pub tokens: usize,
    pub clip_fraction: f64,
    pub mean_kl: f64,
    /// Every rollout was filtered out; `loss` is 0.
    pub empty_after_filter: bool,
    pub rollouts: Vec<RolloutDiagnostics>,
}

/// Negated mean over all surviving supervised tokens of the clipped surrogate minus
/// the KL penalty. Each rollout's advantage is broadcast to its tokens.
pub fn grpo_loss(group: &GroupRollout, cfg: &GrpoConfig) -> Result<GrpoLoss, GrpoError> {
    group.validate()?;
    let advantages = group_advantages(&group.rewards, cfg)?;

    let mut sum = 0.0;
    let (mut tokens, mut clipped, mut kl_sum) = (0usize, 0usize, 0.0);
    let mut rollouts = Vec::with_capacity(advantages.len());
    for (t, &a) in group.tokens.iter().zip(&advantages) {
        let kept = !(cfg.filter_zero_advantage && a == 0.0);
        let (mut n, mut c, mut k) = (0usize, 0usize, 0.0);
        if kept {
            let ratios = importance_ratios(&t.new, &t.old)?;
            for i in (0..ratios.len()).filter(|&i| t.mask[i]) {
                let (surrogate, was_clipped) = clipped_surrogate(ratios[i], a, cfg.epsilon);
                let kl = kl_estimate(t.new[i], t.reference[i]);
                sum += surrogate - cfg.kl_beta * kl;
                n += 1;
                c += was_clipped as usize;
                k += kl;
            }
        }
        tokens += n;
        clipped += c;
        kl_sum += k;
        rollouts.push(RolloutDiagnostics {
            advantage: a,
            kept,
            supervised_tokens: n,
            clip_fraction: ratio_or_zero(c as f64, n),
            mean_kl: ratio_or_zero(k, n),
        });
    }

    let empty_after_filter = cfg.filter_zero_advantage && rollouts.iter().all(|r| !r.kept);
    Ok(GrpoLoss {
        loss: if tokens == 0 {
            0.0
        } else {
            -sum / tokens as f64
        },
        advantages,
        tokens,
        clip_fraction: ratio_or_zero(clipped as f64, tokens),
        mean_kl: ratio_or_zero(kl_sum, tokens),
        empty_after_filter,
        rollouts,
    })
}

fn ratio_or_zero(x: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        x / n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SftLoss {
    /// Negative sum of supervised log-probabilities.
    pub loss: f64,
    pub tokens: usize,
}

impl SftLoss {
    pub fn mean(&self) -> f64 {
        ratio_or_zero(self.loss, self.tokens)
    }
}

pub fn sft_loss(token_logprobs: &[f64], mask: &[bool]) -> Result<SftLoss, GrpoError> {
    if token_logprobs.len() != mask.len() {
        return Err(GrpoError::ShapeMismatch(format!(
            "{} log-probabilities but {} mask flags",
            token_logprobs.len(),
            mask.len()
        )));
    }
    let mut loss = 0.0;
    let mut tokens = 0;
    for (lp, _) in token_logprobs.iter().zip(mask).filter(|(_, &m)| m) {
        loss -= lp;
        tokens += 1;
    }
    Ok(SftLoss { loss, tokens })
}
