//! Deviation profiles of reference paths and tough/easy/T_i aggregates.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{EpisodeResult, ResultRecord};
use crate::envgen::{euclid, Episode, NavGraph, SplitSpec};
use crate::error::{Error, Result};

pub const MAX_RUN_TRACKED: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviationProfile {
    /// `away[t]`: step `t` increases the Euclidean distance to the goal.
    pub away: Vec<bool>,
    pub max_run: usize,
}

impl DeviationProfile {
    pub fn is_tough(&self) -> bool {
        self.max_run >= 1
    }

    pub fn in_t(&self, i: usize) -> bool {
        self.max_run >= i
    }
}

pub fn deviation_from_distances(dists: &[f64]) -> DeviationProfile {
    let away: Vec<bool> = dists.windows(2).map(|w| w[1] > w[0]).collect();
    let mut max_run = 0;
    let mut run = 0;
    for &a in &away {
        run = if a { run + 1 } else { 0 };
        max_run = max_run.max(run);
    }
    DeviationProfile { away, max_run }
}

pub fn deviation_profile(reference_path: &[usize], goal_coords: &[f64; 3], graph: &NavGraph) -> DeviationProfile {
    let d: Vec<f64> = reference_path.iter().map(|&n| euclid(graph.position(n), goal_coords)).collect();
    deviation_from_distances(&d)
}

/// Profiles for `episodes`, keyed by episode id.
pub fn profiles(split: &SplitSpec, episodes: &[Episode]) -> BTreeMap<u64, DeviationProfile> {
    episodes
        .iter()
        .map(|e| (e.episode_id, deviation_profile(&e.reference_path, &e.goal_coords, split.world(e.env_id))))
        .collect()
}

/// Per-episode success and SPL, the inputs of subset aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeScore {
    pub episode_id: u64,
    pub sr: f64,
    pub spl: f64,
}

impl From<&EpisodeResult> for EpisodeScore {
    fn from(r: &EpisodeResult) -> Self {
        EpisodeScore { episode_id: r.episode_id, sr: r.sr, spl: r.spl }
    }
}

impl From<&ResultRecord> for EpisodeScore {
    fn from(r: &ResultRecord) -> Self {
        EpisodeScore { episode_id: r.episode_id, sr: r.sr as f64, spl: r.spl_microunits as f64 / 1e6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n: usize,
    pub sr: f64,
    pub spl: f64,
}

fn aggregate<'a>(members: impl Iterator<Item = &'a EpisodeScore>) -> Option<Aggregate> {
    let (mut n, mut sr, mut spl) = (0usize, 0.0, 0.0);
    for r in members {
        n += 1;
        sr += r.sr;
        spl += r.spl;
    }
    (n > 0).then(|| Aggregate { n, sr: sr / n as f64, spl: spl / n as f64 })
}

/// Subset aggregates. Empty subsets are `None`, never zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetReport {
    pub total: usize,
    /// `counts[i]` = N_i: episodes with at least `i` consecutive away steps;
    /// `counts[0]` is the total.
    pub counts: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tough: Option<Aggregate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub easy: Option<Aggregate>,
    /// T_2..T_5 keyed by `i`; absent when empty.
    pub t: BTreeMap<usize, Aggregate>,
}

pub fn subset_eval(results: &[EpisodeScore], profiles: &BTreeMap<u64, DeviationProfile>) -> Result<SubsetReport> {
    let ids: BTreeSet<u64> = results.iter().map(|r| r.episode_id).collect();
    if ids.len() != results.len() {
        return Err(Error::InvalidParam("duplicate episode ids in results".into()));
    }
    if let Some(&missing) = ids.symmetric_difference(&profiles.keys().copied().collect()).next() {
        return Err(Error::UnknownEpisode(missing));
    }
    let prof = |r: &EpisodeScore| &profiles[&r.episode_id];
    let counts = (0..=MAX_RUN_TRACKED).map(|i| results.iter().filter(|r| prof(r).in_t(i)).count()).collect();
    let t = (2..=MAX_RUN_TRACKED)
        .filter_map(|i| aggregate(results.iter().filter(|r| prof(r).in_t(i))).map(|a| (i, a)))
        .collect();
    Ok(SubsetReport {
        total: results.len(),
        counts,
        tough: aggregate(results.iter().filter(|r| prof(r).is_tough())),
        easy: aggregate(results.iter().filter(|r| !prof(r).is_tough())),
        t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_examples() {
        let p = deviation_from_distances(&[5.0, 4.0, 2.0, 0.0]);
        assert_eq!(p.max_run, 0);
        assert!(!p.is_tough());
        let p = deviation_from_distances(&[5.0, 6.0, 7.0, 3.0, 0.0]);
        assert_eq!(p.away, vec![true, true, false, false]);
        assert!(p.in_t(1) && p.in_t(2) && !p.in_t(3));
        assert_eq!(deviation_from_distances(&[1.0]).max_run, 0);
    }
}
