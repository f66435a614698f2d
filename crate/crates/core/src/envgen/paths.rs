use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::world::NavGraph;

#[derive(PartialEq)]
struct Frontier {
    dist: f64,
    node: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        other.dist.total_cmp(&self.dist).then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Single-source shortest path lengths.
pub fn dijkstra(graph: &NavGraph, source: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; graph.num_nodes()];
    dist[source] = 0.0;
    let mut heap = BinaryHeap::from([Frontier { dist: 0.0, node: source }]);
    while let Some(Frontier { dist: d, node: u }) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &(v, e) in graph.neighbors(u) {
            let nd = d + graph.edges[e].length;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(Frontier { dist: nd, node: v });
            }
        }
    }
    dist
}

fn on_shortest(len: f64, to_goal_v: f64, to_goal_u: f64) -> bool {
    (len + to_goal_v - to_goal_u).abs() <= 1e-9 * to_goal_u.max(1.0)
}

/// Next hop from `node` towards the node whose distance field is `to_goal`,
/// choosing the smallest node id among shortest-path successors.
pub fn next_hop(graph: &NavGraph, node: usize, to_goal: &[f64]) -> Option<usize> {
    if to_goal[node] == 0.0 {
        return None;
    }
    graph
        .neighbors(node)
        .iter()
        .find(|&&(v, e)| on_shortest(graph.edges[e].length, to_goal[v], to_goal[node]))
        .map(|&(v, _)| v)
}

/// Minimum-length path from `a` to `b`; among equal-length paths the
/// lexicographically smallest node sequence is returned.
pub fn shortest_path(graph: &NavGraph, a: usize, b: usize) -> (f64, Vec<usize>) {
    let to_goal = dijkstra(graph, b);
    let mut path = vec![a];
    let mut length = 0.0;
    let mut u = a;
    while u != b {
        let v = next_hop(graph, u, &to_goal).expect("graph is connected");
        length += graph.edge_length(u, v).expect("hop follows an edge");
        path.push(v);
        u = v;
    }
    (length, path)
}

/// Sum of edge lengths along `path`; `None` if consecutive nodes are not adjacent.
pub fn path_length(graph: &NavGraph, path: &[usize]) -> Option<f64> {
    path.windows(2).map(|w| graph.edge_length(w[0], w[1])).sum()
}
