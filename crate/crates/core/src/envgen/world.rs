use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Vertical spacing between quantized height levels, in meters.
pub const LEVEL_HEIGHT: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldParams {
    pub seed: u64,
    pub num_nodes: usize,
    pub area_side: f64,
    pub connect_radius: f64,
    pub landmark_vocab: usize,
    pub height_levels: usize,
}

impl Default for WorldParams {
    fn default() -> Self {
        WorldParams {
            seed: 0,
            num_nodes: 40,
            area_side: 30.0,
            connect_radius: 6.5,
            landmark_vocab: 16,
            height_levels: 2,
        }
    }
}

impl WorldParams {
    pub fn validate(&self) -> Result<()> {
        if self.num_nodes == 0 {
            return Err(Error::InvalidParam("num_nodes must be at least 1".into()));
        }
        if !self.area_side.is_finite() || self.area_side <= 0.0 {
            return Err(Error::InvalidParam(format!("area_side must be finite and positive, got {}", self.area_side)));
        }
        if !self.connect_radius.is_finite() || self.connect_radius <= 0.0 {
            return Err(Error::InvalidParam(format!(
                "connect_radius must be finite and positive, got {}",
                self.connect_radius
            )));
        }
        if self.landmark_vocab < 2 {
            return Err(Error::InvalidParam("landmark_vocab must be at least 2".into()));
        }
        if self.height_levels == 0 {
            return Err(Error::InvalidParam("height_levels must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavNode {
    pub node_id: usize,
    pub position: [f64; 3],
    pub landmark_id: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub length: f64,
}

/// Undirected metric navigation graph.
#[derive(Debug, Clone, PartialEq)]
pub struct NavGraph {
    pub env_id: u32,
    pub params: WorldParams,
    pub nodes: Vec<NavNode>,
    pub edges: Vec<Edge>,
    /// Per-node neighbor lists `(neighbor, edge index)`, sorted by neighbor id.
    adjacency: Vec<Vec<(usize, usize)>>,
}

pub fn euclid(p: &[f64; 3], q: &[f64; 3]) -> f64 {
    let dx = p[0] - q[0];
    let dy = p[1] - q[1];
    let dz = p[2] - q[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

impl NavGraph {
    /// Builds a graph from raw parts, checking every structural invariant.
    pub fn from_parts(env_id: u32, params: WorldParams, nodes: Vec<NavNode>, mut edges: Vec<Edge>) -> Result<Self> {
        let n = nodes.len();
        for (i, node) in nodes.iter().enumerate() {
            if node.node_id != i {
                return Err(Error::InvalidParam(format!("node ids must be dense, found {} at {i}", node.node_id)));
            }
            if node.position.iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidParam(format!("node {i} has non-finite coordinates")));
            }
            if node.landmark_id as usize >= params.landmark_vocab {
                return Err(Error::InvalidParam(format!("node {i} landmark out of range")));
            }
        }
        let mut adjacency = vec![Vec::new(); n];
        for e in edges.iter_mut() {
            if e.a == e.b {
                return Err(Error::InvalidParam(format!("self-loop on node {}", e.a)));
            }
            if e.a >= n || e.b >= n {
                return Err(Error::InvalidParam(format!("edge ({}, {}) references a missing node", e.a, e.b)));
            }
            if e.a > e.b {
                std::mem::swap(&mut e.a, &mut e.b);
            }
            let expect = euclid(&nodes[e.a].position, &nodes[e.b].position);
            if (e.length - expect).abs() > 1e-9 * expect.max(1.0) {
                return Err(Error::InvalidParam(format!("edge ({}, {}) length disagrees with coordinates", e.a, e.b)));
            }
        }
        edges.sort_by(|x, y| (x.a, x.b).cmp(&(y.a, y.b)));
        for w in edges.windows(2) {
            if (w[0].a, w[0].b) == (w[1].a, w[1].b) {
                return Err(Error::InvalidParam(format!("duplicate edge ({}, {})", w[0].a, w[0].b)));
            }
        }
        for (idx, e) in edges.iter().enumerate() {
            adjacency[e.a].push((e.b, idx));
            adjacency[e.b].push((e.a, idx));
        }
        for list in adjacency.iter_mut() {
            list.sort_unstable();
        }
        let graph = NavGraph { env_id, params, nodes, edges, adjacency };
        if !graph.is_connected() {
            return Err(Error::InvalidParam("graph is not connected".into()));
        }
        Ok(graph)
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Neighbors of `node` sorted by id, with the connecting edge index.
    pub fn neighbors(&self, node: usize) -> &[(usize, usize)] {
        &self.adjacency[node]
    }

    pub fn edge_length(&self, a: usize, b: usize) -> Option<f64> {
        self.adjacency[a]
            .binary_search_by_key(&b, |&(n, _)| n)
            .ok()
            .map(|i| self.edges[self.adjacency[a][i].1].length)
    }

    pub fn position(&self, node: usize) -> &[f64; 3] {
        &self.nodes[node].position
    }

    fn is_connected(&self) -> bool {
        if self.nodes.is_empty() {
            return false;
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![0];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for &(v, _) in &self.adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count == self.nodes.len()
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Samples a random geometric graph and bridges it to connectivity.
pub fn generate_world(env_id: u32, params: &WorldParams) -> Result<NavGraph> {
    params.validate()?;
    let n = params.num_nodes;
    let mut pos_rng = rng::stream(params.seed, &[rng::tag("position")]);
    let mut lm_rng = rng::stream(params.seed, &[rng::tag("landmark")]);

    let nodes: Vec<NavNode> = (0..n)
        .map(|i| {
            let x = pos_rng.gen::<f64>() * params.area_side;
            let y = pos_rng.gen::<f64>() * params.area_side;
            let level = pos_rng.gen_range(0..params.height_levels);
            NavNode {
                node_id: i,
                position: [x, y, level as f64 * LEVEL_HEIGHT],
                landmark_id: lm_rng.gen_range(0..params.landmark_vocab as u32),
            }
        })
        .collect();

    let mut parent: Vec<usize> = (0..n).collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let d = euclid(&nodes[i].position, &nodes[j].position);
            if d <= params.connect_radius {
                edges.push(Edge { a: i, b: j, length: d });
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri] = rj;
                }
            }
        }
    }

    // Add the globally shortest inter-component edge until one component remains.
    loop {
        let roots: Vec<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
        if roots.iter().all(|&r| r == roots[0]) {
            break;
        }
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..n {
            for j in (i + 1)..n {
                if roots[i] != roots[j] {
                    let d = euclid(&nodes[i].position, &nodes[j].position);
                    if best.is_none_or(|(bd, _, _)| d < bd) {
                        best = Some((d, i, j));
                    }
                }
            }
        }
        let (d, i, j) = best.expect("at least two components");
        edges.push(Edge { a: i, b: j, length: d });
        let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
        parent[ri] = rj;
    }

    NavGraph::from_parts(env_id, params.clone(), nodes, edges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::VecDeque;

    fn bfs_reaches_all(g: &NavGraph) -> bool {
        let n = g.num_nodes();
        let mut adj = vec![Vec::new(); n];
        for e in &g.edges {
            adj[e.a].push(e.b);
            adj[e.b].push(e.a);
        }
        let mut seen = vec![false; n];
        let mut q = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(u) = q.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    q.push_back(v);
                }
            }
        }
        seen.iter().all(|&s| s)
    }

    #[test]
    fn seven_twelve_is_connected() {
        let p = WorldParams { seed: 7, num_nodes: 12, landmark_vocab: 8, ..Default::default() };
        let g = generate_world(0, &p).unwrap();
        assert_eq!(g.num_nodes(), 12);
        assert!(bfs_reaches_all(&g));
    }

    #[test]
    fn sparse_worlds_get_bridged() {
        // Tiny radius forces nearly every edge to come from bridging.
        for seed in 0..20 {
            let p = WorldParams { seed, num_nodes: 25, connect_radius: 0.5, ..Default::default() };
            let g = generate_world(0, &p).unwrap();
            assert!(bfs_reaches_all(&g));
            assert!(g.edges.len() >= 24);
            for e in &g.edges {
                let d = euclid(g.position(e.a), g.position(e.b));
                assert!((e.length - d).abs() <= 1e-9 * d);
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let p = WorldParams { seed: 3, ..Default::default() };
        assert_eq!(generate_world(1, &p).unwrap(), generate_world(1, &p).unwrap());
    }

    #[test]
    fn single_node_world() {
        let p = WorldParams { seed: 1, num_nodes: 1, ..Default::default() };
        let g = generate_world(0, &p).unwrap();
        assert_eq!(g.num_nodes(), 1);
        assert!(g.edges.is_empty());
    }

    #[test]
    fn rejects_bad_params() {
        let zero = WorldParams { num_nodes: 0, ..Default::default() };
        assert!(generate_world(0, &zero).is_err());
        let nan = WorldParams { area_side: f64::NAN, ..Default::default() };
        assert!(generate_world(0, &nan).is_err());
        let inf = WorldParams { connect_radius: f64::INFINITY, ..Default::default() };
        assert!(generate_world(0, &inf).is_err());
        let vocab = WorldParams { landmark_vocab: 1, ..Default::default() };
        assert!(generate_world(0, &vocab).is_err());
    }

    #[test]
    fn from_parts_rejects_self_loops_and_duplicates() {
        let params = WorldParams { num_nodes: 2, ..Default::default() };
        let nodes = vec![
            NavNode { node_id: 0, position: [0.0, 0.0, 0.0], landmark_id: 0 },
            NavNode { node_id: 1, position: [3.0, 4.0, 0.0], landmark_id: 1 },
        ];
        let self_loop = vec![Edge { a: 0, b: 0, length: 0.0 }];
        assert!(NavGraph::from_parts(0, params.clone(), nodes.clone(), self_loop).is_err());
        let dup = vec![Edge { a: 0, b: 1, length: 5.0 }, Edge { a: 1, b: 0, length: 5.0 }];
        assert!(NavGraph::from_parts(0, params.clone(), nodes.clone(), dup).is_err());
        let wrong = vec![Edge { a: 0, b: 1, length: 4.0 }];
        assert!(NavGraph::from_parts(0, params.clone(), nodes.clone(), wrong).is_err());
        let disconnected = vec![];
        assert!(NavGraph::from_parts(0, params, nodes, disconnected).is_err());
    }
}
