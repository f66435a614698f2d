//! Agent state, candidate observations, and transitions.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::world::{euclid, NavGraph};
use crate::error::{Error, Result};

/// Heading every episode starts with.
pub const START_HEADING: f64 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub node: usize,
    /// Radians in [0, 2π).
    pub heading: f64,
    /// z-angle of the last traversed edge.
    pub elevation: f64,
}

impl AgentState {
    pub fn start(node: usize) -> Self {
        AgentState { node, heading: START_HEADING, elevation: 0.0 }
    }
}

/// Horizontal azimuth from `p` to `q` in [0, 2π).
pub fn azimuth(p: &[f64; 3], q: &[f64; 3]) -> f64 {
    (q[1] - p[1]).atan2(q[0] - p[0]).rem_euclid(2.0 * PI)
}

/// z-angle of the segment from `p` to `q`.
pub fn elevation_angle(p: &[f64; 3], q: &[f64; 3]) -> f64 {
    let horiz = (q[0] - p[0]).hypot(q[1] - p[1]);
    (q[2] - p[2]).atan2(horiz)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    /// `None` is the STOP action.
    pub target: Option<usize>,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub candidates: Vec<Candidate>,
}

impl Observation {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn stop_index(&self) -> usize {
        self.candidates.len() - 1
    }

    pub fn index_of(&self, node: usize) -> Option<usize> {
        self.candidates.iter().position(|c| c.target == Some(node))
    }
}

/// Candidate feature width for a landmark vocabulary of size `landmarks`.
pub fn feature_dim(landmarks: usize) -> usize {
    landmarks + 5
}

/// Neighbors sorted by node id, then STOP. Features are
/// `[landmark one-hot | sin rel heading | cos rel heading | length / radius | elevation delta | stop flag]`.
pub fn observe(graph: &NavGraph, state: &AgentState) -> Observation {
    let l = graph.params.landmark_vocab;
    let here = graph.position(state.node);
    let mut candidates: Vec<Candidate> = graph
        .neighbors(state.node)
        .iter()
        .map(|&(v, e)| {
            let there = graph.position(v);
            let rel = azimuth(here, there) - state.heading;
            let mut f = vec![0.0; feature_dim(l)];
            f[graph.nodes[v].landmark_id as usize] = 1.0;
            // Kept as two separate libm calls: whether the optimizer fuses
            // them into sincos depends on the build, and the two paths can
            // disagree in the last bit.
            f[l] = std::hint::black_box(rel).sin();
            f[l + 1] = std::hint::black_box(rel).cos();
            f[l + 2] = graph.edges[e].length / graph.params.connect_radius;
            f[l + 3] = elevation_angle(here, there) - state.elevation;
            Candidate { target: Some(v), features: f }
        })
        .collect();
    let mut stop = vec![0.0; feature_dim(l)];
    stop[l + 4] = 1.0;
    candidates.push(Candidate { target: None, features: stop });
    Observation { candidates }
}

/// Applies candidate `action` and reports whether the episode terminated (STOP).
pub fn step(graph: &NavGraph, state: &AgentState, action: usize) -> Result<(AgentState, bool)> {
    let neighbors = graph.neighbors(state.node);
    match action.cmp(&neighbors.len()) {
        std::cmp::Ordering::Equal => Ok((*state, true)),
        std::cmp::Ordering::Greater => Err(Error::ActionOutOfRange { action, candidates: neighbors.len() + 1 }),
        std::cmp::Ordering::Less => {
            let target = neighbors[action].0;
            let (p, q) = (graph.position(state.node), graph.position(target));
            Ok((AgentState { node: target, heading: azimuth(p, q), elevation: elevation_angle(p, q) }, false))
        }
    }
}

pub fn distance_to_goal(graph: &NavGraph, state: &AgentState, goal: &[f64; 3]) -> f64 {
    euclid(graph.position(state.node), goal)
}
