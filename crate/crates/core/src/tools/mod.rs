//! Tool invocation over interchangeable backends.
//!
//! A [`BackendConfig`] describes a backend; [`BackendConfig::session`] opens a
//! [`ToolBackend`] that owns the per-trajectory call state. Sessions are never
//! shared between trajectories, and calls within one session are sequential.

pub mod prompts;
mod remote;
mod replay;
mod simulated;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{
    validate_observation, ImageRef, ToolCallPayload, ToolName, ToolObservation, Trajectory,
};

pub use remote::{ChatMessage, RemoteClient, RemoteConfig, RetryPolicy};
pub use replay::ReplayBackend;
pub use simulated::{SimScript, SimulatedBackend, VerdictSpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ToolError {
    #[error("{tool} backend unavailable after {attempts} attempt(s): {message}")]
    BackendUnavailable {
        tool: String,
        attempts: u32,
        message: String,
    },
    #[error("{tool} backend returned an invalid response: {message}")]
    BadResponse { tool: String, message: String },
    #[error("image index {index} does not exist ({available} registered)")]
    DanglingImage { index: u64, available: u64 },
    #[error("invalid backend configuration: {0}")]
    InvalidConfig(String),
}

/// One trajectory's view of a tool backend.
pub trait ToolBackend: Send {
    /// Executes a schema-validated call against the trajectory built so far.
    fn invoke(
        &mut self,
        call: &ToolCallPayload,
        ctx: &Trajectory,
    ) -> Result<ToolObservation, ToolError>;

    /// Reconstructs a defect-free counterpart of an anomaly image.
    fn reverse_normalize(&mut self, anomaly_image: &ImageRef) -> Result<ImageRef, ToolError>;
}

impl<T: ToolBackend + ?Sized> ToolBackend for Box<T> {
    fn invoke(
        &mut self,
        call: &ToolCallPayload,
        ctx: &Trajectory,
    ) -> Result<ToolObservation, ToolError> {
        (**self).invoke(call, ctx)
    }

    fn reverse_normalize(&mut self, anomaly_image: &ImageRef) -> Result<ImageRef, ToolError> {
        (**self).reverse_normalize(anomaly_image)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
#[allow(clippy::large_enum_variant)]
pub enum BackendConfig {
    Simulated {
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        script: SimScript,
    },
    Remote(RemoteConfig),
}

impl BackendConfig {
    pub fn simulated(seed: u64, script: SimScript) -> Self {
        BackendConfig::Simulated { seed, script }
    }

    pub fn validate(&self) -> Result<(), ToolError> {
        match self {
            BackendConfig::Simulated { script, .. } => script.validate(),
            BackendConfig::Remote(cfg) => cfg.validate(),
        }
    }

    /// Base seed for simulated backends; remote backends have none.
    pub fn seed(&self) -> Option<u64> {
        match self {
            BackendConfig::Simulated { seed, .. } => Some(*seed),
            BackendConfig::Remote(_) => None,
        }
    }

    /// Copy with the simulated seed replaced; remote configs are returned unchanged.
    pub fn with_seed(&self, seed: u64) -> Self {
        match self {
            BackendConfig::Simulated { script, .. } => {
                BackendConfig::simulated(seed, script.clone())
            }
            remote => remote.clone(),
        }
    }

    /// Opens a fresh session with the configured seed.
    pub fn session(&self) -> Box<dyn ToolBackend> {
        match self {
            BackendConfig::Simulated { seed, .. } => self.session_with_seed(*seed),
            BackendConfig::Remote(cfg) => Box::new(RemoteClient::new(cfg.clone())),
        }
    }

    /// Opens a fresh session with an explicit seed. Remote backends ignore the seed.
    pub fn session_with_seed(&self, seed: u64) -> Box<dyn ToolBackend> {
        match self {
            BackendConfig::Simulated { script, .. } => {
                Box::new(SimulatedBackend::new(seed, script.clone()))
            }
            BackendConfig::Remote(cfg) => Box::new(RemoteClient::new(cfg.clone())),
        }
    }
}

/// Fails with `DanglingImage` when a call names an image the trajectory does not have.
pub fn check_image_refs(call: &ToolCallPayload, ctx: &Trajectory) -> Result<(), ToolError> {
    let available = ctx.image_count();
    match call.image_indices().into_iter().find(|&i| i > available) {
        Some(index) => Err(ToolError::DanglingImage { index, available }),
        None => Ok(()),
    }
}

/// Revalidates a backend's observation before it enters a trajectory.
pub fn check_observation(
    call: &ToolCallPayload,
    ctx: &Trajectory,
    obs: &ToolObservation,
) -> Result<(), ToolError> {
    let bad = |message: String| ToolError::BadResponse {
        tool: call.name.wire_name().into(),
        message,
    };
    if obs.tool() != call.name {
        return Err(bad(format!(
            "{} observation for {} call",
            obs.tool(),
            call.name
        )));
    }
    validate_observation(obs).map_err(|e| bad(e.to_string()))?;
    if let ToolObservation::Image(img) = obs {
        if img.new_image_index != ctx.image_count() + 1 {
            return Err(bad(format!(
                "new_image_index {} with {} existing images",
                img.new_image_index,
                ctx.image_count()
            )));
        }
    }
    Ok(())
}

/// Index the next image-generation call will receive.
pub fn next_image_index(ctx: &Trajectory) -> u64 {
    ctx.image_count() + 1
}

pub(crate) fn image_arg<'a>(
    call: &ToolCallPayload,
    ctx: &'a Trajectory,
    key: &str,
) -> Result<&'a ImageRef, ToolError> {
    let index = call.index_arg(key).unwrap_or(0);
    ctx.image(index).ok_or(ToolError::DanglingImage {
        index,
        available: ctx.image_count(),
    })
}

pub(crate) fn text_arg<'a>(call: &'a ToolCallPayload, key: &str) -> &'a str {
    call.str_arg(key).unwrap_or_default()
}

/// Convenience wrapper matching the single-call shape used by scripts and tests.
pub fn invoke(
    backend: &mut dyn ToolBackend,
    tool: ToolName,
    args: serde_json::Value,
    ctx: &Trajectory,
) -> Result<ToolObservation, ToolError> {
    backend.invoke(&ToolCallPayload::new(tool, args), ctx)
}
