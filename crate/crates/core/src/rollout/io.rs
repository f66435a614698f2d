//! Newline-delimited dataset files.
//!
//! Line 1 is the header; each following line is one trajectory. Distances are
//! integer millimeters and headings integer milliradians so the content hash
//! is platform-stable. Full-precision values are restored by replay.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BehaviorKind, BehaviorSpec, OfflineDataset, Trajectory, TrajectoryStep};
use crate::envgen::{distance_to_goal, step, SplitSpec};
use crate::error::{Error, Result};
use crate::sha256_hex;

pub const DATASET_FORMAT_VERSION: u32 = 1;

fn is_true(b: &bool) -> bool {
    *b
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format_version: u32,
    pub behavior_kind: String,
    pub noise_p: f64,
    pub seed: u64,
    pub horizon: usize,
    pub split_hash: String,
    pub content_hash: String,
    #[serde(default = "yes", skip_serializing_if = "is_true")]
    pub random_includes_stop: bool,
}

impl DatasetHeader {
    pub fn new(behavior: &BehaviorSpec, horizon: usize, split_hash: &str) -> Self {
        DatasetHeader {
            format_version: DATASET_FORMAT_VERSION,
            behavior_kind: behavior.kind.name().to_string(),
            noise_p: behavior.kind.noise_p(),
            seed: behavior.seed,
            horizon,
            split_hash: split_hash.to_string(),
            content_hash: String::new(),
            random_includes_stop: behavior.random_includes_stop,
        }
    }

    pub fn behavior(&self) -> Result<BehaviorSpec> {
        Ok(BehaviorSpec {
            kind: BehaviorKind::from_parts(&self.behavior_kind, self.noise_p)?,
            seed: self.seed,
            random_includes_stop: self.random_includes_stop,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub node: usize,
    pub heading_milliradians: i64,
    pub action: usize,
    pub dist_mm: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub episode_id: u64,
    pub steps: Vec<StepRecord>,
    pub truncated: bool,
}

fn milli(x: f64) -> i64 {
    (x * 1000.0).round() as i64
}

fn record_of(t: &Trajectory) -> TrajectoryRecord {
    TrajectoryRecord {
        episode_id: t.episode_id,
        steps: t
            .steps
            .iter()
            .map(|s| StepRecord {
                node: s.state.node,
                heading_milliradians: milli(s.state.heading),
                action: s.action,
                dist_mm: milli(s.dist_to_goal),
            })
            .collect(),
        truncated: t.truncated,
    }
}

/// Serialized file contents.
pub fn dataset_to_string(dataset: &OfflineDataset) -> String {
    let mut body = String::new();
    for t in &dataset.trajectories {
        body.push_str(&serde_json::to_string(&record_of(t)).expect("serializable"));
        body.push('\n');
    }
    let header = DatasetHeader { content_hash: sha256_hex(body.as_bytes()), ..dataset.header.clone() };
    let mut out = serde_json::to_string(&header).expect("serializable");
    out.push('\n');
    out.push_str(&body);
    out
}

pub fn write_dataset(dataset: &OfflineDataset, path: &Path) -> Result<()> {
    fs::write(path, dataset_to_string(dataset)).map_err(|e| Error::io(path, e))
}

fn malformed(path: &Path, line: usize, msg: impl ToString) -> Error {
    Error::Malformed { path: path.to_path_buf(), line, msg: msg.to_string() }
}

/// Parses and integrity-checks a dataset file without replaying it.
pub fn read_dataset_records(path: &Path) -> Result<(DatasetHeader, Vec<TrajectoryRecord>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_records(&text, path)
}

fn parse_records(text: &str, path: &Path) -> Result<(DatasetHeader, Vec<TrajectoryRecord>)> {
    let mut lines = text.split_inclusive('\n');
    let first = lines.next().ok_or_else(|| malformed(path, 1, "empty dataset file"))?;
    let version: serde_json::Value = serde_json::from_str(first.trim_end()).map_err(|e| malformed(path, 1, e))?;
    let found = version.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != DATASET_FORMAT_VERSION {
        return Err(Error::Version { path: path.into(), found, expected: DATASET_FORMAT_VERSION });
    }
    let mut header: DatasetHeader = serde_json::from_value(version).map_err(|e| malformed(path, 1, e))?;
    let mut records = Vec::new();
    for (i, raw) in lines.enumerate() {
        let lineno = i + 2;
        if !raw.ends_with('\n') {
            return Err(malformed(path, lineno, "truncated record (missing newline)"));
        }
        let rec: TrajectoryRecord = serde_json::from_str(raw.trim_end()).map_err(|e| malformed(path, lineno, e))?;
        if rec.steps.is_empty() {
            return Err(malformed(path, lineno, "trajectory without steps"));
        }
        if rec.steps.len() > header.horizon {
            return Err(malformed(path, lineno, "trajectory longer than horizon"));
        }
        records.push(rec);
    }
    let computed = sha256_hex(&text.as_bytes()[first.len()..]);
    if computed != header.content_hash {
        return Err(Error::HashMismatch { path: path.into(), expected: std::mem::take(&mut header.content_hash), computed });
    }
    Ok((header, records))
}

/// Replays one record against its episode and world, restoring exact
/// distances and headings.
pub fn replay_record(rec: &TrajectoryRecord, split: &SplitSpec, horizon: usize) -> Result<Trajectory> {
    let index = split.episode_index();
    replay_with(rec, &index, split, horizon)
}

fn replay_with(
    rec: &TrajectoryRecord,
    index: &std::collections::HashMap<u64, &crate::envgen::Episode>,
    split: &SplitSpec,
    horizon: usize,
) -> Result<Trajectory> {
    let episode = *index.get(&rec.episode_id).ok_or(Error::UnknownEpisode(rec.episode_id))?;
    let graph = split.world(episode.env_id);
    let fail = |step: usize, msg: String| Error::Replay { episode_id: rec.episode_id, step, msg };
    let mut state = episode.start;
    let mut steps = Vec::with_capacity(rec.steps.len());
    let last = rec.steps.len() - 1;
    for (t, s) in rec.steps.iter().enumerate() {
        if s.node != state.node {
            return Err(fail(t, format!("logged node {} but replay is at {}", s.node, state.node)));
        }
        if s.heading_milliradians != milli(state.heading) {
            return Err(fail(t, "heading disagrees with replay".into()));
        }
        let dist = distance_to_goal(graph, &state, &episode.goal_coords);
        if s.dist_mm != milli(dist) {
            return Err(fail(t, format!("logged distance {} mm but replay gives {dist} m", s.dist_mm)));
        }
        steps.push(TrajectoryStep { state, action: s.action, dist_to_goal: dist });
        let (next, done) = step(graph, &state, s.action).map_err(|e| fail(t, e.to_string()))?;
        if done && t != last {
            return Err(fail(t, "STOP before the final step".into()));
        }
        if !done && t == last && !rec.truncated {
            return Err(fail(t, "untruncated trajectory does not end with STOP".into()));
        }
        if done && rec.truncated {
            return Err(fail(t, "truncated trajectory ends with STOP".into()));
        }
        state = next;
    }
    if rec.truncated && rec.steps.len() != horizon {
        return Err(fail(last, "truncated before reaching the horizon".into()));
    }
    Ok(Trajectory { episode_id: rec.episode_id, steps, final_state: state, truncated: rec.truncated })
}

/// Reads a dataset and replays every trajectory against `split`.
pub fn read_dataset(path: &Path, split: &SplitSpec) -> Result<OfflineDataset> {
    let (header, records) = read_dataset_records(path)?;
    header.behavior()?;
    let index = split.episode_index();
    let trajectories = records
        .iter()
        .map(|r| replay_with(r, &index, split, header.horizon))
        .collect::<Result<Vec<_>>>()?;
    let mut header = header;
    header.content_hash.clear();
    Ok(OfflineDataset { header, trajectories })
}
