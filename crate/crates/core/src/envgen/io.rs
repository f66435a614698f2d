//! World and split files.
//!
//! A world file is newline-delimited JSON: one header record carrying the
//! generation parameters and the body hash, then one record per node and one
//! per edge. A split file is a single JSON document naming its world files by
//! relative path and content hash.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::split::{Episode, SplitConfig, SplitSpec};
use super::world::{Edge, NavGraph, NavNode, WorldParams};
use crate::error::{Error, Result};
use crate::sha256_hex;

pub const WORLD_FORMAT_VERSION: u32 = 1;
pub const SPLIT_FORMAT_VERSION: u32 = 1;
pub const SPLIT_FILE_NAME: &str = "split.json";

#[derive(Serialize, Deserialize)]
struct WorldHeader {
    format_version: u32,
    env_id: u32,
    seed: u64,
    num_nodes: usize,
    area_side: f64,
    connect_radius: f64,
    landmark_vocab: usize,
    height_levels: usize,
    hash: String,
}

#[derive(Serialize, Deserialize)]
struct NodeRecord {
    node: usize,
    x: f64,
    y: f64,
    z: f64,
    landmark: u32,
}

#[derive(Serialize, Deserialize)]
struct EdgeRecord {
    a: usize,
    b: usize,
    length: f64,
}

pub fn world_to_string(graph: &NavGraph) -> String {
    let mut body = String::new();
    for n in &graph.nodes {
        let rec = NodeRecord {
            node: n.node_id,
            x: n.position[0],
            y: n.position[1],
            z: n.position[2],
            landmark: n.landmark_id,
        };
        body.push_str(&serde_json::to_string(&rec).expect("serializable"));
        body.push('\n');
    }
    for e in &graph.edges {
        body.push_str(&serde_json::to_string(&EdgeRecord { a: e.a, b: e.b, length: e.length }).expect("serializable"));
        body.push('\n');
    }
    let p = &graph.params;
    let header = WorldHeader {
        format_version: WORLD_FORMAT_VERSION,
        env_id: graph.env_id,
        seed: p.seed,
        num_nodes: p.num_nodes,
        area_side: p.area_side,
        connect_radius: p.connect_radius,
        landmark_vocab: p.landmark_vocab,
        height_levels: p.height_levels,
        hash: sha256_hex(body.as_bytes()),
    };
    let mut out = serde_json::to_string(&header).expect("serializable");
    out.push('\n');
    out.push_str(&body);
    out
}

fn malformed(path: &Path, line: usize, msg: impl ToString) -> Error {
    Error::Malformed { path: path.to_path_buf(), line, msg: msg.to_string() }
}

pub fn world_from_str(text: &str, path: &Path) -> Result<NavGraph> {
    let mut lines = text.split_inclusive('\n');
    let first = lines.next().ok_or_else(|| malformed(path, 1, "empty world file"))?;
    let header: WorldHeader = serde_json::from_str(first.trim_end()).map_err(|e| malformed(path, 1, e))?;
    if header.format_version != WORLD_FORMAT_VERSION {
        return Err(Error::Version { path: path.into(), found: header.format_version, expected: WORLD_FORMAT_VERSION });
    }
    let body = &text[first.len()..];
    let computed = sha256_hex(body.as_bytes());
    if computed != header.hash {
        return Err(Error::HashMismatch { path: path.into(), expected: header.hash, computed });
    }
    let mut nodes = Vec::with_capacity(header.num_nodes);
    let mut edges = Vec::new();
    for (i, raw) in lines.enumerate() {
        let lineno = i + 2;
        if !raw.ends_with('\n') {
            return Err(malformed(path, lineno, "truncated record"));
        }
        let raw = raw.trim_end();
        if nodes.len() < header.num_nodes {
            let r: NodeRecord = serde_json::from_str(raw).map_err(|e| malformed(path, lineno, e))?;
            nodes.push(NavNode { node_id: r.node, position: [r.x, r.y, r.z], landmark_id: r.landmark });
        } else {
            let r: EdgeRecord = serde_json::from_str(raw).map_err(|e| malformed(path, lineno, e))?;
            edges.push(Edge { a: r.a, b: r.b, length: r.length });
        }
    }
    let params = WorldParams {
        seed: header.seed,
        num_nodes: header.num_nodes,
        area_side: header.area_side,
        connect_radius: header.connect_radius,
        landmark_vocab: header.landmark_vocab,
        height_levels: header.height_levels,
    };
    params.validate()?;
    if nodes.len() != header.num_nodes {
        return Err(malformed(path, nodes.len() + 2, "fewer node records than declared"));
    }
    NavGraph::from_parts(header.env_id, params, nodes, edges)
        .map_err(|e| malformed(path, 0, e))
}

pub fn write_world(graph: &NavGraph, path: &Path) -> Result<()> {
    fs::write(path, world_to_string(graph)).map_err(|e| Error::io(path, e))
}

pub fn read_world(path: &Path) -> Result<NavGraph> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    world_from_str(&text, path)
}

#[derive(Serialize, Deserialize)]
struct WorldRef {
    env_id: u32,
    file: String,
    hash: String,
}

#[derive(Serialize, Deserialize)]
struct SplitFile {
    format_version: u32,
    config: SplitConfig,
    worlds: Vec<WorldRef>,
    train: Vec<Episode>,
    val_seen: Vec<Episode>,
    val_unseen: Vec<Episode>,
}

pub fn world_file_name(env_id: u32) -> String {
    format!("world_{env_id:04}.jsonl")
}

/// Writes every world plus `split.json` into `dir`; returns the split file path.
pub fn save_split(spec: &SplitSpec, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut refs = Vec::new();
    for g in &spec.worlds {
        let text = world_to_string(g);
        let file = world_file_name(g.env_id);
        let p = dir.join(&file);
        fs::write(&p, &text).map_err(|e| Error::io(&p, e))?;
        refs.push(WorldRef { env_id: g.env_id, file, hash: sha256_hex(text.as_bytes()) });
    }
    let doc = SplitFile {
        format_version: SPLIT_FORMAT_VERSION,
        config: spec.config.clone(),
        worlds: refs,
        train: spec.train.clone(),
        val_seen: spec.val_seen.clone(),
        val_unseen: spec.val_unseen.clone(),
    };
    let mut text = serde_json::to_string(&doc).expect("serializable");
    text.push('\n');
    let path = dir.join(SPLIT_FILE_NAME);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Loads a split file and the world files it references, verifying hashes
/// and episode consistency.
pub fn load_split(path: &Path) -> Result<SplitSpec> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: SplitFile = serde_json::from_str(&text).map_err(|e| malformed(path, e.line(), e))?;
    if doc.format_version != SPLIT_FORMAT_VERSION {
        return Err(Error::Version { path: path.into(), found: doc.format_version, expected: SPLIT_FORMAT_VERSION });
    }
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut worlds = Vec::with_capacity(doc.worlds.len());
    for (i, r) in doc.worlds.iter().enumerate() {
        let wp = dir.join(&r.file);
        let wtext = fs::read_to_string(&wp).map_err(|e| Error::io(&wp, e))?;
        let computed = sha256_hex(wtext.as_bytes());
        if computed != r.hash {
            return Err(Error::HashMismatch { path: wp, expected: r.hash.clone(), computed });
        }
        let g = world_from_str(&wtext, &wp)?;
        if g.env_id != r.env_id || g.env_id as usize != i {
            return Err(malformed(&wp, 1, "world env_id does not match split file order"));
        }
        worlds.push(g);
    }
    let spec = SplitSpec {
        config: doc.config,
        worlds,
        train: doc.train,
        val_seen: doc.val_seen,
        val_unseen: doc.val_unseen,
    };
    for e in spec.all_episodes() {
        let bad = |msg: &str| malformed(path, 0, format!("episode {}: {msg}", e.episode_id));
        let g = spec.worlds.get(e.env_id as usize).ok_or_else(|| bad("unknown env"))?;
        if e.reference_path.first() != Some(&e.start.node) || e.reference_path.last() != Some(&e.goal_node) {
            return Err(bad("reference path endpoints"));
        }
        if e.reference_path.iter().any(|&n| n >= g.num_nodes()) {
            return Err(bad("reference path node out of range"));
        }
        if super::paths::path_length(g, &e.reference_path) != Some(e.shortest_len) {
            return Err(bad("shortest_len disagrees with reference path"));
        }
    }
    Ok(spec)
}

/// Hash of the split file bytes, used to bind datasets to their split.
pub fn split_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}
