//! Greedy policy rollouts, navigation metrics, subset analyses, studies and
//! reports.

pub mod report;
pub mod study;
pub mod subsets;

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conditioning::{rtg_test_token, test_token, ConditioningKind, ConditioningMode, ValStats};
use crate::envgen::{dijkstra, distance_to_goal, euclid, observe, step, AgentState, Episode, NavGraph, Observation, SplitName, SplitSpec};
use crate::error::{Error, Result};
use crate::policy::model::candidate_matrix;
use crate::policy::tape::{Tape, Var};
use crate::policy::{EncodedInstruction, Policy};
use crate::rollout::expert_action_with;

pub use report::{make_report, MethodRecord, Report};
pub use study::{kfold_study, sample_std, seed_study, StudyRow, StudyTable};
pub use subsets::{
    deviation_from_distances, deviation_profile, profiles, subset_eval, Aggregate, DeviationProfile, EpisodeScore, SubsetReport,
};

pub const DEFAULT_SUCCESS_RADIUS: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub success_radius: f64,
    pub horizon: usize,
    pub conditioning: ConditioningMode,
    pub split: SplitName,
}

impl EvalConfig {
    pub fn new(horizon: usize, conditioning: ConditioningMode, split: SplitName) -> Self {
        EvalConfig { success_radius: DEFAULT_SUCCESS_RADIUS, horizon, conditioning, split }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.success_radius > 0.0 && self.success_radius.is_finite()) {
            return Err(Error::InvalidParam(format!("success_radius must be positive, got {}", self.success_radius)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Stop,
    GoalDetected,
    Horizon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub episode_id: u64,
    /// Visited nodes, start included.
    pub nodes: Vec<usize>,
    pub actions: Vec<usize>,
    /// Conditioning token at every decision point, plus the zero token at a
    /// goal-detection step. Empty for unconditioned rollouts.
    pub tokens: Vec<f64>,
    pub final_state: AgentState,
    pub termination: Termination,
}

/// Per-episode action source for rollouts.
pub trait Agent {
    fn act(&mut self, state: &AgentState, obs: &Observation, token: Option<f64>) -> Result<usize>;
}

pub trait Controller: Sync {
    fn start<'a>(&'a self, graph: &'a NavGraph, episode: &'a Episode) -> Result<Box<dyn Agent + 'a>>;
}

/// Greedy policy agent carrying the recurrent state token on one tape.
struct PolicyAgent<'a> {
    policy: &'a Policy,
    tape: Tape,
    enc: EncodedInstruction,
    q: Var,
}

impl Agent for PolicyAgent<'_> {
    fn act(&mut self, _state: &AgentState, obs: &Observation, token: Option<f64>) -> Result<usize> {
        let c = self.tape.input(candidate_matrix(obs));
        let (logits, q) = self.policy.step(&mut self.tape, &self.enc, self.q, c, token)?;
        self.q = q;
        Ok(crate::policy::argmax(&self.tape.value(logits).data))
    }
}

impl Controller for Policy {
    fn start<'a>(&'a self, _graph: &'a NavGraph, episode: &'a Episode) -> Result<Box<dyn Agent + 'a>> {
        let mut tape = Tape::new();
        let enc = self.encode(&mut tape, &episode.instruction)?;
        let q = enc.q0;
        Ok(Box::new(PolicyAgent { policy: self, tape, enc, q }))
    }
}

/// Shortest-path oracle, for checking the rollout harness.
pub struct ExpertController;

struct ExpertAgent<'a> {
    graph: &'a NavGraph,
    to_goal: Vec<f64>,
}

impl Agent for ExpertAgent<'_> {
    fn act(&mut self, state: &AgentState, _obs: &Observation, _token: Option<f64>) -> Result<usize> {
        Ok(expert_action_with(self.graph, state, &self.to_goal))
    }
}

impl Controller for ExpertController {
    fn start<'a>(&'a self, graph: &'a NavGraph, episode: &'a Episode) -> Result<Box<dyn Agent + 'a>> {
        Ok(Box::new(ExpertAgent { graph, to_goal: dijkstra(graph, episode.goal_node) }))
    }
}

/// Greedy rollout with goal-detection termination. Before every decision the
/// agent checks its distance to the goal; within `success_radius` the episode
/// ends with the zero token. Otherwise it acts, and STOP or the horizon ends it.
pub fn rollout_policy(
    controller: &dyn Controller,
    graph: &NavGraph,
    episode: &Episode,
    cfg: &EvalConfig,
    stats: &ValStats,
) -> Result<Rollout> {
    let mode = cfg.conditioning;
    let mut agent = controller.start(graph, episode)?;
    let mut state = episode.start;
    let mut nodes = vec![state.node];
    let mut actions = Vec::new();
    let mut tokens = Vec::new();
    let mut rtg: Option<f64> = None;
    let mut traveled = 0.0;
    let termination = loop {
        let near = distance_to_goal(graph, &state, &episode.goal_coords) <= cfg.success_radius;
        let token = match mode.kind {
            ConditioningKind::Unconditioned => None,
            ConditioningKind::RewardDense | ConditioningKind::RewardSparse => Some(test_token(near)),
            ConditioningKind::ReturnToGo => {
                let t = rtg_test_token(rtg, traveled, near, stats, mode.rtg_init);
                rtg = Some(t);
                Some(t)
            }
        };
        if let Some(t) = token {
            tokens.push(t);
        }
        if near {
            break Termination::GoalDetected;
        }
        if actions.len() >= cfg.horizon {
            break Termination::Horizon;
        }
        let obs = observe(graph, &state);
        let a = agent.act(&state, &obs, token)?;
        let (next, stopped) = step(graph, &state, a)?;
        actions.push(a);
        if stopped {
            break Termination::Stop;
        }
        traveled = graph.edge_length(state.node, next.node).expect("moves follow edges");
        state = next;
        nodes.push(state.node);
    };
    Ok(Rollout { episode_id: episode.episode_id, nodes, actions, tokens, final_state: state, termination })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub episode_id: u64,
    pub tl: f64,
    pub ne: f64,
    pub sr: f64,
    pub spl: f64,
    pub termination: Termination,
    pub rollout: Rollout,
}

fn spl(success: bool, shortest: f64, tl: f64) -> f64 {
    if !success {
        return 0.0;
    }
    let denom = shortest.max(tl);
    if denom <= 0.0 {
        1.0
    } else {
        shortest / denom
    }
}

pub fn compute_metrics(rollout: &Rollout, episode: &Episode, graph: &NavGraph, cfg: &EvalConfig) -> Result<EpisodeResult> {
    let mut tl = 0.0;
    for w in rollout.nodes.windows(2) {
        tl += graph.edge_length(w[0], w[1]).ok_or_else(|| Error::Replay {
            episode_id: rollout.episode_id,
            step: 0,
            msg: format!("no edge {} -> {}", w[0], w[1]),
        })?;
    }
    let last = *rollout.nodes.last().expect("rollout has a start node");
    let ne = euclid(graph.position(last), &episode.goal_coords);
    let success = ne <= cfg.success_radius;
    Ok(EpisodeResult {
        episode_id: rollout.episode_id,
        tl,
        ne,
        sr: if success { 1.0 } else { 0.0 },
        spl: spl(success, episode.shortest_len, tl),
        termination: rollout.termination,
        rollout: rollout.clone(),
    })
}

/// Reference-path length statistics of an evaluation split, for the
/// returns-to-go initialization.
pub fn split_stats(episodes: &[Episode]) -> ValStats {
    ValStats::from_lengths(episodes.iter().map(|e| e.shortest_len))
}

/// Rolls out every episode of the configured split, in episode order.
pub fn evaluate(controller: &dyn Controller, split: &SplitSpec, cfg: &EvalConfig) -> Result<Vec<EpisodeResult>> {
    evaluate_episodes(controller, split, split.episodes(cfg.split), cfg)
}

pub fn evaluate_episodes(
    controller: &dyn Controller,
    split: &SplitSpec,
    episodes: &[Episode],
    cfg: &EvalConfig,
) -> Result<Vec<EpisodeResult>> {
    cfg.validate()?;
    let stats = split_stats(episodes);
    episodes
        .par_iter()
        .map(|e| {
            let g = split.world(e.env_id);
            let r = rollout_policy(controller, g, e, cfg, &stats)?;
            compute_metrics(&r, e, g, cfg)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub n: usize,
    pub tl: f64,
    pub ne: f64,
    pub sr: f64,
    pub spl: f64,
}

pub fn summarize(results: &[EpisodeResult]) -> SplitMetrics {
    let n = results.len();
    let mean = |f: &dyn Fn(&EpisodeResult) -> f64| {
        if n == 0 {
            0.0
        } else {
            results.iter().map(f).sum::<f64>() / n as f64
        }
    };
    SplitMetrics { n, tl: mean(&|r| r.tl), ne: mean(&|r| r.ne), sr: mean(&|r| r.sr), spl: mean(&|r| r.spl) }
}

/// One line of the results file, in integer millimeters and micro-units.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub episode_id: u64,
    #[serde(rename = "TL_mm")]
    pub tl_mm: i64,
    #[serde(rename = "NE_mm")]
    pub ne_mm: i64,
    #[serde(rename = "SR")]
    pub sr: u8,
    #[serde(rename = "SPL_microunits")]
    pub spl_microunits: i64,
    pub termination_cause: Termination,
}

impl From<&EpisodeResult> for ResultRecord {
    fn from(r: &EpisodeResult) -> Self {
        ResultRecord {
            episode_id: r.episode_id,
            tl_mm: (r.tl * 1000.0).round() as i64,
            ne_mm: (r.ne * 1000.0).round() as i64,
            sr: r.sr as u8,
            spl_microunits: (r.spl * 1e6).round() as i64,
            termination_cause: r.termination,
        }
    }
}

pub fn results_to_string(results: &[EpisodeResult]) -> String {
    let mut out = String::new();
    for r in results {
        out.push_str(&serde_json::to_string(&ResultRecord::from(r)).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_results(path: &Path, results: &[EpisodeResult]) -> Result<()> {
    fs::write(path, results_to_string(results)).map_err(|e| Error::io(path, e))
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Malformed { path: path.into(), line: i + 1, msg: e.to_string() })
        })
        .collect()
}
