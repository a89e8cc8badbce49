//! TOML run configuration.
//!
//! ```toml
//! [backend]            # required
//! kind = "simulated"   # or "remote"
//! seed = 7
//! [backend.script]
//! qe_score_sequence = [{ location_score = 2, quality_score = 2 }, { location_score = 4, quality_score = 5 }]
//!
//! [loop]
//! theta = 0.8
//!
//! [rewards]
//! alpha = 1.0
//!
//! [grpo]
//! epsilon = 0.2
//! ```
//!
//! Every section except `backend` falls back to its defaults. The optional
//! `[policy_model]` section (a remote backend table without `kind`) configures the
//! chat model used by the remote policy; when absent, a remote `backend` is reused.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent_loop::LoopConfig;
use crate::grpo::GrpoConfig;
use crate::rewards::{RewardWeights, TransitionTable};
use crate::tools::{BackendConfig, RemoteConfig};

pub const ENV_ENDPOINT: &str = "ANOMAGENT_ENDPOINT";
pub const ENV_API_KEY: &str = "ANOMAGENT_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub backend: BackendConfig,
    #[serde(default, rename = "loop")]
    pub agent_loop: LoopConfig,
    #[serde(default)]
    pub rewards: RewardWeights,
    #[serde(default)]
    pub transitions: TransitionTable,
    #[serde(default)]
    pub grpo: GrpoConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_model: Option<RemoteConfig>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            backend: BackendConfig::simulated(0, Default::default()),
            agent_loop: LoopConfig::default(),
            rewards: RewardWeights::default(),
            transitions: TransitionTable::default(),
            grpo: GrpoConfig::default(),
            policy_model: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {reason}")]
    Read {
        path: String,
        reason: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Parse(toml::de::Error),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Values from flags or the environment that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub endpoint: Option<String>,
    pub api_key: Option<String>,
}

impl Overrides {
    /// Fills unset endpoint and key from `ANOMAGENT_ENDPOINT` / `ANOMAGENT_API_KEY`.
    pub fn with_env(mut self) -> Self {
        let var = |k| std::env::var(k).ok().filter(|v: &String| !v.is_empty());
        self.endpoint = self.endpoint.or_else(|| var(ENV_ENDPOINT));
        self.api_key = self.api_key.or_else(|| var(ENV_API_KEY));
        self
    }
}

impl Config {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: Config = toml::from_str(s).map_err(ConfigError::Parse)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|reason| ConfigError::Read {
            path: path.display().to_string(),
            reason,
        })?;
        Config::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid =
            |section: &str, msg: String| ConfigError::Invalid(format!("[{section}] {msg}"));
        self.backend
            .validate()
            .map_err(|e| invalid("backend", e.to_string()))?;
        self.agent_loop.validate().map_err(|e| invalid("loop", e))?;
        self.rewards.validate().map_err(|e| invalid("rewards", e))?;
        self.grpo.validate().map_err(|e| invalid("grpo", e))?;
        if let Some(p) = &self.policy_model {
            p.validate()
                .map_err(|e| invalid("policy_model", e.to_string()))?;
        }
        Ok(())
    }

    /// Applies overrides: the seed replaces a simulated backend's seed; endpoint and
    /// key apply to every remote section.
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.backend = self.backend.with_seed(seed);
        }
        let patch = |r: &mut RemoteConfig| {
            if let Some(e) = &o.endpoint {
                r.endpoint = e.clone();
            }
            if let Some(k) = &o.api_key {
                r.api_key = Some(k.clone());
            }
        };
        if let BackendConfig::Remote(r) = &mut self.backend {
            patch(r);
        }
        if let Some(r) = &mut self.policy_model {
            patch(r);
        }
    }

    /// Chat model settings for the remote policy.
    pub fn policy_remote(&self) -> Option<&RemoteConfig> {
        self.policy_model.as_ref().or(match &self.backend {
            BackendConfig::Remote(r) => Some(r),
            BackendConfig::Simulated { .. } => None,
        })
    }

    /// Simulated backend seed, or 0 for remote backends.
    pub fn base_seed(&self) -> u64 {
        self.backend.seed().unwrap_or(0)
    }
}
