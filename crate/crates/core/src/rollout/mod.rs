//! Behavior policies and offline dataset construction.

pub mod io;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envgen::paths::{dijkstra, next_hop};
use crate::envgen::{distance_to_goal, observe, step, AgentState, Episode, NavGraph, SplitSpec};
use crate::error::{Error, Result};
use crate::rng;

pub use io::{read_dataset, read_dataset_records, write_dataset, DatasetHeader, DATASET_FORMAT_VERSION};

/// Noise level of the noisy half of a mixture dataset.
pub const MIXTURE_NOISE: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BehaviorKind {
    Expert,
    Noisy(f64),
    Random,
    Mixture(f64),
}

impl BehaviorKind {
    pub fn name(&self) -> &'static str {
        match self {
            BehaviorKind::Expert => "expert",
            BehaviorKind::Noisy(_) => "noisy",
            BehaviorKind::Random => "random",
            BehaviorKind::Mixture(_) => "mixture",
        }
    }

    pub fn noise_p(&self) -> f64 {
        match *self {
            BehaviorKind::Expert => 0.0,
            BehaviorKind::Random => 1.0,
            BehaviorKind::Noisy(p) | BehaviorKind::Mixture(p) => p,
        }
    }

    pub fn from_parts(name: &str, noise_p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&noise_p) {
            return Err(Error::InvalidParam(format!("noise probability {noise_p} outside [0, 1]")));
        }
        Ok(match name {
            "expert" => BehaviorKind::Expert,
            "noisy" => BehaviorKind::Noisy(noise_p),
            "random" => BehaviorKind::Random,
            "mixture" => BehaviorKind::Mixture(noise_p),
            other => return Err(Error::InvalidParam(format!("unknown behavior kind {other:?}"))),
        })
    }

    /// Inverse of [`BehaviorSpec::label`]: `expert`, `random`, `mixture`
    /// or `noisy-<percent>`.
    pub fn parse_label(label: &str) -> Result<Self> {
        match label {
            "expert" => Ok(BehaviorKind::Expert),
            "random" => Ok(BehaviorKind::Random),
            "mixture" => Ok(BehaviorKind::Mixture(MIXTURE_NOISE)),
            l => {
                let pct = l
                    .strip_prefix("noisy-")
                    .and_then(|p| p.parse::<u32>().ok())
                    .filter(|&p| p <= 100)
                    .ok_or_else(|| Error::InvalidParam(format!("unknown behavior label {l:?}")))?;
                Ok(BehaviorKind::Noisy(pct as f64 / 100.0))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BehaviorSpec {
    pub kind: BehaviorKind,
    pub seed: u64,
    /// Whether the uniform random branch may pick STOP.
    pub random_includes_stop: bool,
}

impl BehaviorSpec {
    pub fn new(kind: BehaviorKind, seed: u64) -> Self {
        BehaviorSpec { kind, seed, random_includes_stop: true }
    }

    /// Short label used in file names and reports, e.g. `noisy-30`.
    pub fn label(&self) -> String {
        match self.kind {
            BehaviorKind::Noisy(p) => format!("noisy-{}", (p * 100.0).round() as u32),
            k => k.name().to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub state: AgentState,
    pub action: usize,
    pub dist_to_goal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub episode_id: u64,
    pub steps: Vec<TrajectoryStep>,
    pub final_state: AgentState,
    pub truncated: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Sequence of visited nodes, starting node included.
    pub fn nodes(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self.steps.iter().map(|s| s.state.node).collect();
        if self.truncated {
            out.push(self.final_state.node);
        }
        if out.is_empty() {
            out.push(self.final_state.node);
        }
        out
    }

    /// Total traversed length in meters.
    pub fn traversed_length(&self, graph: &NavGraph) -> f64 {
        self.nodes()
            .windows(2)
            .filter(|w| w[0] != w[1])
            .map(|w| graph.edge_length(w[0], w[1]).expect("trajectory follows edges"))
            .sum()
    }
}

/// Shortest-path expert: STOP at the goal, otherwise the next hop on the
/// lexicographically smallest shortest path.
pub fn expert_action(graph: &NavGraph, state: &AgentState, goal_node: usize) -> usize {
    expert_action_with(graph, state, &dijkstra(graph, goal_node))
}

/// Expert action given a precomputed distance field from the goal.
pub fn expert_action_with(graph: &NavGraph, state: &AgentState, to_goal: &[f64]) -> usize {
    let neighbors = graph.neighbors(state.node);
    match next_hop(graph, state.node, to_goal) {
        None => neighbors.len(),
        Some(v) => neighbors.iter().position(|&(n, _)| n == v).expect("next hop is a neighbor"),
    }
}

/// Rolls out the noisy expert with noise `p`, returning the trajectory and
/// the per-step "took random branch" indicators.
pub fn generate_trajectory_with_branches(
    graph: &NavGraph,
    episode: &Episode,
    p: f64,
    random_includes_stop: bool,
    horizon: usize,
    rng: &mut impl Rng,
) -> (Trajectory, Vec<bool>) {
    assert!(horizon >= 1, "horizon must be at least 1");
    let to_goal = dijkstra(graph, episode.goal_node);
    let mut state = episode.start;
    let mut steps = Vec::new();
    let mut branches = Vec::new();
    let mut stopped = false;
    while steps.len() < horizon {
        let n_candidates = observe(graph, &state).len();
        let dist = distance_to_goal(graph, &state, &episode.goal_coords);
        let random = rng.gen::<f64>() < p;
        let action = if random {
            let choices = if random_includes_stop { n_candidates } else { n_candidates - 1 };
            rng.gen_range(0..choices.max(1))
        } else {
            expert_action_with(graph, &state, &to_goal)
        };
        branches.push(random);
        steps.push(TrajectoryStep { state, action, dist_to_goal: dist });
        let (next, done) = step(graph, &state, action).expect("action drawn from candidates");
        state = next;
        if done {
            stopped = true;
            break;
        }
    }
    (Trajectory { episode_id: episode.episode_id, steps, final_state: state, truncated: !stopped }, branches)
}

fn episode_stream(seed: u64, episode_id: u64) -> rand_chacha::ChaCha8Rng {
    rng::stream(seed, &[rng::tag("episode"), episode_id])
}

/// One trajectory for `episode` under `behavior`, using the episode's own stream.
pub fn generate_trajectory(graph: &NavGraph, episode: &Episode, behavior: &BehaviorSpec, horizon: usize) -> Trajectory {
    generate_trajectory_traced(graph, episode, behavior, horizon).0
}

pub fn generate_trajectory_traced(
    graph: &NavGraph,
    episode: &Episode,
    behavior: &BehaviorSpec,
    horizon: usize,
) -> (Trajectory, Vec<bool>) {
    let mut r = episode_stream(behavior.seed, episode.episode_id);
    let p = match behavior.kind {
        BehaviorKind::Mixture(p) => {
            if r.gen_bool(0.5) {
                p
            } else {
                0.0
            }
        }
        k => k.noise_p(),
    };
    generate_trajectory_with_branches(graph, episode, p, behavior.random_includes_stop, horizon, &mut r)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineDataset {
    pub header: DatasetHeader,
    pub trajectories: Vec<Trajectory>,
}

impl OfflineDataset {
    pub fn behavior(&self) -> Result<BehaviorSpec> {
        self.header.behavior()
    }

    /// Same header, keeping only trajectories at `indices`.
    pub fn subset(&self, indices: &[usize]) -> OfflineDataset {
        OfflineDataset {
            header: self.header.clone(),
            trajectories: indices.iter().map(|&i| self.trajectories[i].clone()).collect(),
        }
    }
}

/// One trajectory per episode. Per-episode streams make the result
/// independent of worker count and scheduling.
pub fn build_dataset(
    split: &SplitSpec,
    episodes: &[Episode],
    behavior: &BehaviorSpec,
    horizon: usize,
    split_hash: &str,
) -> Result<OfflineDataset> {
    if episodes.is_empty() {
        return Err(Error::InvalidParam("cannot build a dataset from zero episodes".into()));
    }
    let trajectories = episodes
        .par_iter()
        .map(|e| generate_trajectory(split.world(e.env_id), e, behavior, horizon))
        .collect();
    Ok(OfflineDataset { header: DatasetHeader::new(behavior, horizon, split_hash), trajectories })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envgen::{make_splits, shortest_path, SplitConfig};

    fn spec() -> SplitSpec {
        make_splits(&SplitConfig {
            n_train_envs: 4,
            n_unseen_envs: 1,
            episodes_per_env: 60,
            val_episodes_per_env: 5,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn expert_action_cases() {
        let s = spec();
        let e = &s.train[0];
        let g = s.world(e.env_id);
        let at_goal = AgentState::start(e.goal_node);
        assert_eq!(expert_action(g, &at_goal, e.goal_node), g.neighbors(e.goal_node).len());
        let penult = e.reference_path[e.reference_path.len() - 2];
        let a = expert_action(g, &AgentState::start(penult), e.goal_node);
        assert_eq!(g.neighbors(penult)[a].0, e.goal_node);
        for node in 0..g.num_nodes() {
            if node == e.goal_node {
                continue;
            }
            let (_, path) = shortest_path(g, node, e.goal_node);
            let a = expert_action(g, &AgentState::start(node), e.goal_node);
            assert_eq!(g.neighbors(node)[a].0, path[1]);
        }
    }

    #[test]
    fn expert_trajectories_are_optimal() {
        let s = spec();
        let d = build_dataset(&s, &s.train, &BehaviorSpec::new(BehaviorKind::Expert, 5), s.default_horizon(), "h").unwrap();
        for (t, e) in d.trajectories.iter().zip(&s.train) {
            assert!(!t.truncated);
            assert_eq!(t.final_state.node, e.goal_node);
            let g = s.world(e.env_id);
            assert!((t.traversed_length(g) - e.shortest_len).abs() <= 1e-9);
            assert_eq!(t.nodes(), e.reference_path);
        }
    }

    #[test]
    fn noise_rate_is_calibrated() {
        let s = spec();
        let b = BehaviorSpec::new(BehaviorKind::Noisy(0.3), 17);
        let h = s.default_horizon();
        let (mut hits, mut total) = (0usize, 0usize);
        for seed_round in 0..20u64 {
            let b = BehaviorSpec { seed: b.seed + seed_round, ..b };
            for e in &s.train {
                let (_, br) = generate_trajectory_traced(s.world(e.env_id), e, &b, h);
                hits += br.iter().filter(|&&x| x).count();
                total += br.len();
            }
        }
        assert!(total >= 10_000, "only {total} steps");
        let rate = hits as f64 / total as f64;
        // 99% binomial interval half-width.
        let half = 2.576 * (0.3 * 0.7 / total as f64).sqrt();
        assert!((rate - 0.3).abs() <= half, "rate {rate} outside 0.3 ± {half}");
    }

    #[test]
    fn mean_length_grows_with_noise() {
        let s = spec();
        let h = s.default_horizon();
        let mean_steps = |p: f64| {
            let kind = if p == 1.0 { BehaviorKind::Random } else { BehaviorKind::Noisy(p) };
            let d = build_dataset(&s, &s.train, &BehaviorSpec::new(kind, 3), h, "h").unwrap();
            d.trajectories.iter().map(|t| t.len() as f64).sum::<f64>() / d.trajectories.len() as f64
        };
        let lens: Vec<f64> = [0.0, 0.15, 0.30].iter().map(|&p| mean_steps(p)).collect();
        assert!(lens.windows(2).all(|w| w[0] <= w[1]), "{lens:?}");
    }

    #[test]
    fn random_policy_is_reproducible_and_can_exclude_stop() {
        let s = spec();
        let e = &s.train[3];
        let g = s.world(e.env_id);
        let b = BehaviorSpec::new(BehaviorKind::Random, 1);
        assert_eq!(generate_trajectory(g, e, &b, 50), generate_trajectory(g, e, &b, 50));
        let no_stop = BehaviorSpec { random_includes_stop: false, ..b };
        let t = generate_trajectory(g, e, &no_stop, 50);
        assert!(t.truncated);
        assert_eq!(t.len(), 50);
    }

    #[test]
    fn worker_count_does_not_matter() {
        let s = spec();
        let b = BehaviorSpec::new(BehaviorKind::Mixture(MIXTURE_NOISE), 9);
        let h = s.default_horizon();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let a = one.install(|| build_dataset(&s, &s.train, &b, h, "x").unwrap());
        let c = three.install(|| build_dataset(&s, &s.train, &b, h, "x").unwrap());
        assert_eq!(a, c);
        assert_eq!(a.header.behavior_kind, "mixture");
        assert_eq!(a.header.seed, 9);
    }

    #[test]
    fn behavior_parsing() {
        assert_eq!(BehaviorKind::from_parts("noisy", 0.3).unwrap(), BehaviorKind::Noisy(0.3));
        assert!(BehaviorKind::from_parts("noisy", 1.3).is_err());
        assert!(BehaviorKind::from_parts("greedy", 0.3).is_err());
        assert_eq!(BehaviorSpec::new(BehaviorKind::Noisy(0.15), 0).label(), "noisy-15");
    }
}
