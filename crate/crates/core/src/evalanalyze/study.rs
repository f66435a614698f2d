//! Subsample (k-fold) and training-seed studies.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::envgen::{SplitName, SplitSpec};
use crate::error::{Error, Result};
use crate::experiment::{evaluate_split, train_policy, Recipe};
use crate::rng;
use crate::rollout::OfflineDataset;

/// Sample standard deviation (n − 1 denominator); exactly 0 for fewer than
/// two values or identical values.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 || xs.iter().all(|&x| x == xs[0]) {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    /// Dataset fraction for k-fold rows, `None` for seed studies.
    pub fraction: Option<f64>,
    pub split: SplitName,
    /// Per-run success rates in [0, 1].
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyTable {
    pub kind: String,
    pub rows: Vec<StudyRow>,
    /// Trajectory episode ids used by each run, in run order.
    pub memberships: Vec<Vec<u64>>,
    /// Training seed of each run.
    pub seeds: Vec<u64>,
}

impl StudyTable {
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| Setting | Split | Average SR (%) | σ |\n|---|---|---|---|\n");
        for r in &self.rows {
            let setting = match r.fraction {
                Some(f) => format!("{:.0}%", f * 100.0),
                None => "seeds".into(),
            };
            s.push_str(&format!("| {setting} | {} | {:.2} | {:.2} |\n", r.split.as_str(), r.mean * 100.0, r.std * 100.0));
        }
        s
    }
}

const STUDY_SPLITS: [SplitName; 2] = [SplitName::ValSeen, SplitName::ValUnseen];

/// Deterministic subsample of `round(fraction · n)` trajectories (at least one).
pub fn subsample(n: usize, fraction: f64, fold: usize, study_seed: u64) -> Vec<usize> {
    let m = ((fraction * n as f64).round() as usize).clamp(1, n);
    let mut idx: Vec<usize> = (0..n).collect();
    let mut r = rng::stream(study_seed, &[rng::tag("kfold"), fraction.to_bits(), fold as u64]);
    idx.shuffle(&mut r);
    idx.truncate(m);
    idx.sort_unstable();
    idx
}

fn run(split: &SplitSpec, data: &OfflineDataset, recipe: &Recipe) -> Result<[f64; 2]> {
    let out = train_policy(split, data, recipe)?;
    let mut srs = [0.0; 2];
    for (s, which) in srs.iter_mut().zip(STUDY_SPLITS) {
        *s = evaluate_split(&out.best, split, recipe, which)?.0.sr;
    }
    Ok(srs)
}

fn rows(fraction: Option<f64>, runs: &[[f64; 2]]) -> Vec<StudyRow> {
    STUDY_SPLITS
        .iter()
        .enumerate()
        .map(|(j, &split)| {
            let values: Vec<f64> = runs.iter().map(|r| r[j]).collect();
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            StudyRow { fraction, split, std: sample_std(&values), mean, values }
        })
        .collect()
}

/// For each fraction, `k` seeded subsamples each train one model; success
/// rates on both validation splits are summarized by mean and sample σ.
pub fn kfold_study(
    split: &SplitSpec,
    dataset: &OfflineDataset,
    fractions: &[f64],
    k: usize,
    recipe: &Recipe,
    study_seed: u64,
) -> Result<StudyTable> {
    if k == 0 || fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
        return Err(Error::InvalidParam("k must be positive and fractions in (0, 1]".into()));
    }
    if dataset.trajectories.is_empty() {
        return Err(Error::InvalidParam("dataset is empty".into()));
    }
    let mut table = StudyTable { kind: "kfold".into(), rows: vec![], memberships: vec![], seeds: vec![] };
    for &f in fractions {
        let mut runs = Vec::with_capacity(k);
        for fold in 0..k {
            let idx = subsample(dataset.trajectories.len(), f, fold, study_seed);
            let sub = dataset.subset(&idx);
            table.memberships.push(sub.trajectories.iter().map(|t| t.episode_id).collect());
            table.seeds.push(recipe.schedule.seed);
            runs.push(run(split, &sub, recipe)?);
        }
        table.rows.extend(rows(Some(f), &runs));
    }
    Ok(table)
}

/// Fixed dataset, one training run per seed (training and init seeds both).
pub fn seed_study(split: &SplitSpec, dataset: &OfflineDataset, seeds: &[u64], recipe: &Recipe) -> Result<StudyTable> {
    if seeds.is_empty() {
        return Err(Error::InvalidParam("seed study needs at least one seed".into()));
    }
    let mut table = StudyTable { kind: "seeds".into(), rows: vec![], memberships: vec![], seeds: seeds.to_vec() };
    let mut runs = Vec::with_capacity(seeds.len());
    for &s in seeds {
        let mut r = recipe.clone();
        r.schedule.seed = s;
        r.model.init_seed = s;
        table.memberships.push(dataset.trajectories.iter().map(|t| t.episode_id).collect());
        runs.push(run(split, dataset, &r)?);
    }
    table.rows = rows(None, &runs);
    Ok(table)
}
