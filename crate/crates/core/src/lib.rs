//! Runtime and toolkit for a tool-calling anomaly synthesis agent.
//!
//! - [`protocol`]: trajectory model and the tagged tool-call wire format.
//! - [`tools`]: tool invocation over simulated or HTTP backends.
//! - [`agent_loop`]: the generate / evaluate / refine episode runner.
//! - [`trajectory_builder`]: supervised trajectories from real anomaly images.
//! - [`rewards`]: task, reflection and behavior rewards.
//! - [`grpo`]: group-relative advantages, clipped surrogate loss, SFT loss.
//! - [`metrics`]: Inception Score and intra-cluster distance over supplied inputs.

pub mod agent_loop;
pub mod config;
pub mod grpo;
pub mod metrics;
pub mod protocol;
pub mod rewards;
pub mod tools;
pub mod trajectory_builder;

/// Child seed `index` of `base` (SplitMix64 over `base + index * golden gamma`).
///
/// Every seeded command derives per-row seeds from the single `--seed` this way.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
