//! Versioned JSON checkpoints: config echo, named tensors, optimizer state.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{ModelConfig, Policy, PolicyParameters};
use super::tensor::Matrix;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
}

impl AdamState {
    pub fn zeros(params: &PolicyParameters) -> Self {
        AdamState { t: 0, m: params.zeros_like(), v: params.zeros_like() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: ModelConfig,
    pub params: PolicyParameters,
    pub adam: Option<AdamState>,
}

impl Checkpoint {
    pub fn new(policy: &Policy, adam: Option<AdamState>) -> Self {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            config: policy.config.clone(),
            params: policy.params.clone(),
            adam,
        }
    }

    pub fn fresh(policy: Policy) -> Self {
        let adam = AdamState::zeros(&policy.params);
        Checkpoint { format_version: CHECKPOINT_FORMAT_VERSION, config: policy.config, params: policy.params, adam: Some(adam) }
    }

    /// Optimizer step count.
    pub fn step(&self) -> u64 {
        self.adam.as_ref().map_or(0, |a| a.t)
    }

    pub fn policy(&self) -> Result<Policy> {
        Policy::from_params(self.config.clone(), self.params.clone())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::Malformed { path: path.into(), line: e.line(), msg: e.to_string() })?;
        if ck.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Version { path: path.into(), found: ck.format_version, expected: CHECKPOINT_FORMAT_VERSION });
        }
        let policy = ck.policy()?;
        if !policy.params.all_finite() {
            return Err(Error::Malformed { path: path.into(), line: 1, msg: "non-finite parameter".into() });
        }
        if let Some(a) = &ck.adam {
            let shapes_ok = |ms: &[Matrix]| {
                ms.len() == ck.params.tensors.len()
                    && ms.iter().zip(&ck.params.tensors).all(|(m, p)| m.shape() == p.shape() && m.len() == p.len())
            };
            if !shapes_ok(&a.m) || !shapes_ok(&a.v) {
                return Err(Error::Malformed { path: path.into(), line: 1, msg: "optimizer state shape mismatch".into() });
            }
        }
        Ok(ck)
    }
}
