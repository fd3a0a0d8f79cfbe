//! JSON run configurations. Every struct rejects unknown fields, and
//! `load` validates semantics before any output is produced.

use llt_core::dp::{DpInstance, PlanConstants, Problem, ToyOptions};
use llt_core::localization::{JointModel, LpBall};
use llt_core::potentials::Potential;
use llt_core::prox::ProxConfig;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use sha2::{Digest, Sha256};
use std::path::Path;

use crate::Failure;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub target: Potential,
    pub noise: Potential,
    pub tau: usize,
    #[serde(default)]
    pub reg: f64,
    #[serde(default)]
    pub ball: Option<LpBall>,
}

impl ModelSpec {
    pub fn build(&self) -> Result<JointModel, Failure> {
        JointModel::regularized(self.target.clone(), self.noise.clone(), self.tau, self.reg, self.ball)
            .map_err(|e| Failure::from_core("model", e))
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LltConfig {
    pub potential: Potential,
    pub points: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalizeConfig {
    pub model: ModelSpec,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProxRunConfig {
    pub model: ModelSpec,
    pub chain: ProxConfig,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanConfig {
    pub instance: DpInstance,
    #[serde(default = "erm")]
    pub problem: Problem,
    #[serde(default)]
    pub constants: PlanConstants,
    /// Overrides the surrogate constant inside the planned `k`.
    #[serde(default)]
    pub theta: Option<f64>,
}

fn erm() -> Problem {
    Problem::Erm
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyConfig {
    pub instance: DpInstance,
    /// Per-sample loss vectors; synthetic losses from the run seed when omitted.
    #[serde(default)]
    pub losses: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub options: ToyOptions,
    pub seeds: u64,
}

/// A parsed configuration with the SHA-256 of its raw bytes.
pub struct Loaded<T> {
    pub config: T,
    pub hash: String,
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<Loaded<T>, Failure> {
    let bytes = std::fs::read(path).map_err(|e| Failure::Schema(format!("cannot read {}: {e}", path.display())))?;
    let config = serde_json::from_slice(&bytes)
        .map_err(|e| Failure::Schema(format!("{}: {e}", path.display())))?;
    Ok(Loaded {
        config,
        hash: hex_digest(&bytes),
    })
}
