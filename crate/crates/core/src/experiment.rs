//! Train-and-evaluate recipes shared by the CLI, the studies and the
//! benchmark pipeline.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::envgen::{feature_dim, Episode, SplitName, SplitSpec, Vocabulary};
use crate::error::{Error, Result};
use crate::evalanalyze::{evaluate, summarize, EpisodeResult, EvalConfig, SplitMetrics, DEFAULT_SUCCESS_RADIUS};
use crate::policy::{train, ModelConfig, Policy, TrainExample, TrainOutcome, TrainSchedule, ValidationPoint};
use crate::rollout::OfflineDataset;

/// Model architecture knobs; vocabulary and feature widths come from the split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_blocks: usize,
    pub n_instr_blocks: usize,
    pub ffn_hidden: usize,
    pub injection: crate::policy::Injection,
    pub init_seed: u64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            d_model: 32,
            n_heads: 2,
            n_blocks: 2,
            n_instr_blocks: 1,
            ffn_hidden: 64,
            injection: crate::policy::Injection::Add,
            init_seed: 0,
        }
    }
}

impl ModelSpec {
    pub fn to_config(&self, split: &SplitSpec, conditioning: crate::conditioning::ConditioningMode) -> ModelConfig {
        let l = split.config.world.landmark_vocab as usize;
        let max_len = split.all_episodes().map(|e| e.instruction.len()).max().unwrap_or(1);
        ModelConfig {
            d_model: self.d_model,
            n_heads: self.n_heads,
            n_blocks: self.n_blocks,
            n_instr_blocks: self.n_instr_blocks,
            ffn_hidden: self.ffn_hidden,
            vocab: Vocabulary { landmarks: l }.size(),
            feat_dim: feature_dim(l),
            max_instr_len: max_len,
            injection: self.injection,
            conditioning,
            init_seed: self.init_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recipe {
    pub model: ModelSpec,
    pub schedule: TrainSchedule,
    pub conditioning: crate::conditioning::ConditioningMode,
    /// Rollout horizon for validation and evaluation.
    pub horizon: usize,
    pub success_radius: f64,
}

impl Recipe {
    pub fn eval_config(&self, split: SplitName) -> EvalConfig {
        EvalConfig { success_radius: self.success_radius, horizon: self.horizon, conditioning: self.conditioning, split }
    }
}

impl Default for Recipe {
    fn default() -> Self {
        Recipe {
            model: ModelSpec::default(),
            schedule: TrainSchedule::default(),
            conditioning: crate::conditioning::ConditioningMode::new(crate::conditioning::ConditioningKind::RewardSparse),
            horizon: 24,
            success_radius: DEFAULT_SUCCESS_RADIUS,
        }
    }
}

/// Pairs every trajectory with its episode and world.
pub fn training_examples<'a>(split: &'a SplitSpec, dataset: &'a OfflineDataset) -> Result<Vec<TrainExample<'a>>> {
    let index: HashMap<u64, &Episode> = split.episode_index();
    dataset
        .trajectories
        .iter()
        .map(|t| {
            let e = *index.get(&t.episode_id).ok_or(Error::UnknownEpisode(t.episode_id))?;
            Ok(TrainExample { graph: split.world(e.env_id), episode: e, trajectory: t })
        })
        .collect()
}

/// Trains on `dataset`, selecting by val_unseen success rate.
pub fn train_policy(split: &SplitSpec, dataset: &OfflineDataset, recipe: &Recipe) -> Result<TrainOutcome> {
    let examples = training_examples(split, dataset)?;
    let policy = Policy::new(recipe.model.to_config(split, recipe.conditioning))?;
    let cfg = recipe.eval_config(SplitName::ValUnseen);
    let mut validate = |p: &Policy| -> Result<ValidationPoint> {
        let m = summarize(&evaluate(p, split, &cfg)?);
        Ok(ValidationPoint { sr: m.sr, spl: m.spl })
    };
    train(policy, &examples, &recipe.schedule, &mut validate)
}

pub fn evaluate_split(policy: &Policy, split: &SplitSpec, recipe: &Recipe, which: SplitName) -> Result<(SplitMetrics, Vec<EpisodeResult>)> {
    let cfg = EvalConfig { conditioning: policy.config.conditioning, ..recipe.eval_config(which) };
    let results = evaluate(policy, split, &cfg)?;
    Ok((summarize(&results), results))
}
