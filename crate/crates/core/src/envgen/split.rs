use std::collections::HashMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::dynamics::AgentState;
use super::instruction::synthesize_instruction;
use super::paths::shortest_path;
use super::world::{euclid, generate_world, NavGraph, WorldParams};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub episode_id: u64,
    pub env_id: u32,
    pub instruction: Vec<u32>,
    pub start: AgentState,
    pub goal_node: usize,
    pub goal_coords: [f64; 3],
    pub reference_path: Vec<usize>,
    pub shortest_len: f64,
}

impl Episode {
    pub fn hops(&self) -> usize {
        self.reference_path.len() - 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub seed: u64,
    pub n_train_envs: usize,
    pub n_unseen_envs: usize,
    pub episodes_per_env: usize,
    pub val_episodes_per_env: usize,
    /// Template for every environment; its seed is replaced per environment.
    pub world: WorldParams,
    /// Start nodes must lie strictly farther than this from the goal.
    pub min_goal_distance: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            seed: 1,
            n_train_envs: 8,
            n_unseen_envs: 2,
            episodes_per_env: 50,
            val_episodes_per_env: 25,
            world: WorldParams::default(),
            min_goal_distance: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    ValSeen,
    ValUnseen,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::ValSeen => "val_seen",
            SplitName::ValUnseen => "val_unseen",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(SplitName::Train),
            "val_seen" => Some(SplitName::ValSeen),
            "val_unseen" => Some(SplitName::ValUnseen),
            _ => None,
        }
    }
}

/// Worlds plus the train / val-seen / val-unseen episode lists over them.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub config: SplitConfig,
    pub worlds: Vec<NavGraph>,
    pub train: Vec<Episode>,
    pub val_seen: Vec<Episode>,
    pub val_unseen: Vec<Episode>,
}

impl SplitSpec {
    pub fn world(&self, env_id: u32) -> &NavGraph {
        &self.worlds[env_id as usize]
    }

    pub fn episodes(&self, which: SplitName) -> &[Episode] {
        match which {
            SplitName::Train => &self.train,
            SplitName::ValSeen => &self.val_seen,
            SplitName::ValUnseen => &self.val_unseen,
        }
    }

    pub fn all_episodes(&self) -> impl Iterator<Item = &Episode> {
        self.train.iter().chain(&self.val_seen).chain(&self.val_unseen)
    }

    pub fn episode_index(&self) -> HashMap<u64, &Episode> {
        self.all_episodes().map(|e| (e.episode_id, e)).collect()
    }

    /// Longest reference path, in edges, across every split.
    pub fn max_reference_hops(&self) -> usize {
        self.all_episodes().map(Episode::hops).max().unwrap_or(0)
    }

    /// Default rollout horizon: three times the longest reference path.
    pub fn default_horizon(&self) -> usize {
        (3 * self.max_reference_hops()).max(1)
    }

    pub fn train_env_ids(&self) -> std::ops::Range<u32> {
        0..self.config.n_train_envs as u32
    }

    pub fn unseen_env_ids(&self) -> std::ops::Range<u32> {
        self.config.n_train_envs as u32..(self.config.n_train_envs + self.config.n_unseen_envs) as u32
    }
}

pub fn env_world_params(config: &SplitConfig, env_id: u32) -> WorldParams {
    WorldParams { seed: rng::derive_seed(config.seed, &[rng::tag("env"), env_id as u64]), ..config.world.clone() }
}

/// Admissible (start, goal) pairs in deterministic shuffled order.
fn candidate_pairs(graph: &NavGraph, config: &SplitConfig) -> Vec<(usize, usize)> {
    let n = graph.num_nodes();
    let mut pairs = Vec::new();
    for goal in 0..n {
        // Edge lengths are Euclidean, so a direct edge is always the shortest
        // path; non-adjacent pairs are exactly those needing at least 2 edges.
        for start in 0..n {
            if start == goal || graph.edge_length(start, goal).is_some() {
                continue;
            }
            if euclid(graph.position(start), graph.position(goal)) <= config.min_goal_distance {
                continue;
            }
            pairs.push((start, goal));
        }
    }
    let mut r = rng::stream(config.seed, &[rng::tag("pairs"), graph.env_id as u64]);
    pairs.shuffle(&mut r);
    pairs
}

fn make_episode(graph: &NavGraph, episode_id: u64, start: usize, goal: usize) -> Result<Episode> {
    let (length, path) = shortest_path(graph, start, goal);
    let instruction = synthesize_instruction(graph, &path)?;
    Ok(Episode {
        episode_id,
        env_id: graph.env_id,
        instruction,
        start: AgentState::start(start),
        goal_node: goal,
        goal_coords: *graph.position(goal),
        reference_path: path,
        shortest_len: length,
    })
}

/// Generates every world and samples the three episode splits.
pub fn make_splits(config: &SplitConfig) -> Result<SplitSpec> {
    if config.n_train_envs == 0 || config.n_unseen_envs == 0 || config.episodes_per_env == 0 {
        return Err(Error::InvalidParam("environment and episode counts must be at least 1".into()));
    }
    let total_envs = config.n_train_envs + config.n_unseen_envs;
    let worlds = (0..total_envs as u32)
        .map(|env| generate_world(env, &env_world_params(config, env)))
        .collect::<Result<Vec<_>>>()?;

    let mut per_env_pairs = Vec::with_capacity(total_envs);
    for (env, graph) in worlds.iter().enumerate() {
        let pairs = candidate_pairs(graph, config);
        let need = if env < config.n_train_envs {
            config.episodes_per_env + config.val_episodes_per_env
        } else {
            config.val_episodes_per_env
        };
        if pairs.len() < need {
            return Err(Error::InvalidParam(format!(
                "environment {env} admits only {} start/goal pairs with a path of at least 2 edges, {need} needed",
                pairs.len()
            )));
        }
        per_env_pairs.push(pairs);
    }

    let mut next_id = 0u64;
    let mut take = |graph: &NavGraph, pairs: &[(usize, usize)]| -> Result<Vec<Episode>> {
        pairs
            .iter()
            .map(|&(s, g)| {
                let ep = make_episode(graph, next_id, s, g);
                next_id += 1;
                ep
            })
            .collect()
    };
    let ept = config.episodes_per_env;
    let epv = config.val_episodes_per_env;
    let mut train = Vec::new();
    for env in 0..config.n_train_envs {
        train.extend(take(&worlds[env], &per_env_pairs[env][..ept])?);
    }
    let mut val_seen = Vec::new();
    for env in 0..config.n_train_envs {
        val_seen.extend(take(&worlds[env], &per_env_pairs[env][ept..ept + epv])?);
    }
    let mut val_unseen = Vec::new();
    for env in config.n_train_envs..total_envs {
        val_unseen.extend(take(&worlds[env], &per_env_pairs[env][..epv])?);
    }

    Ok(SplitSpec { config: config.clone(), worlds, train, val_seen, val_unseen })
}
