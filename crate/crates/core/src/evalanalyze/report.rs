//! Benchmark tables: one row per method, TL/NE/SR/SPL per split.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::SplitMetrics;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRecord {
    pub dataset: String,
    pub method: String,
    /// Keyed by split name.
    pub splits: BTreeMap<String, SplitMetrics>,
    pub dataset_hash: String,
    pub config_hash: String,
    pub checkpoint_hash: String,
}

/// Metric values as displayed: TL and NE in meters to two decimals, SR and
/// SPL in percent to one decimal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cells {
    pub tl: f64,
    pub ne: f64,
    pub sr: f64,
    pub spl: f64,
}

fn round(x: f64, digits: i32) -> f64 {
    let p = 10f64.powi(digits);
    (x * p).round() / p
}

impl From<&SplitMetrics> for Cells {
    fn from(m: &SplitMetrics) -> Self {
        Cells { tl: round(m.tl, 2), ne: round(m.ne, 2), sr: round(m.sr * 100.0, 1), spl: round(m.spl * 100.0, 1) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub config_hash: String,
    pub checkpoint_hash: String,
    pub cells: BTreeMap<String, Cells>,
    /// `"<split>.SR"` / `"<split>.SPL"` entries where this row is best.
    pub best: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetTable {
    pub dataset: String,
    pub dataset_hash: String,
    pub splits: Vec<String>,
    pub rows: Vec<ReportRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub tables: Vec<DatasetTable>,
    pub markdown: String,
    pub json: String,
}

fn fmt_cell(v: f64, digits: usize, best: bool) -> String {
    let s = format!("{v:.digits$}");
    if best {
        format!("**{s}**")
    } else {
        s
    }
}

pub fn make_report(records: &[MethodRecord]) -> Result<Report> {
    if records.is_empty() {
        return Err(Error::InvalidParam("report needs at least one run record".into()));
    }
    let mut by_dataset: BTreeMap<&str, Vec<&MethodRecord>> = BTreeMap::new();
    for r in records {
        by_dataset.entry(&r.dataset).or_default().push(r);
    }
    let mut tables = Vec::new();
    for (dataset, mut recs) in by_dataset {
        recs.sort_by(|a, b| a.method.cmp(&b.method));
        let hash = &recs[0].dataset_hash;
        if recs.iter().any(|r| &r.dataset_hash != hash) {
            return Err(Error::InvalidParam(format!("dataset {dataset} has records with different hashes")));
        }
        let mut splits: Vec<String> = recs.iter().flat_map(|r| r.splits.keys().cloned()).collect();
        splits.sort();
        splits.dedup();
        let mut rows: Vec<ReportRow> = recs
            .iter()
            .map(|r| ReportRow {
                method: r.method.clone(),
                config_hash: r.config_hash.clone(),
                checkpoint_hash: r.checkpoint_hash.clone(),
                cells: r.splits.iter().map(|(k, m)| (k.clone(), Cells::from(m))).collect(),
                best: vec![],
            })
            .collect();
        for s in &splits {
            for (metric, get) in [("SR", (|c: &Cells| c.sr) as fn(&Cells) -> f64), ("SPL", |c: &Cells| c.spl)] {
                let top = rows.iter().filter_map(|r| r.cells.get(s).map(get)).fold(f64::NEG_INFINITY, f64::max);
                for r in rows.iter_mut() {
                    if r.cells.get(s).map(get) == Some(top) {
                        r.best.push(format!("{s}.{metric}"));
                    }
                }
            }
        }
        tables.push(DatasetTable { dataset: dataset.to_string(), dataset_hash: hash.clone(), splits, rows });
    }

    let mut md = String::from("# Benchmark results\n");
    for t in &tables {
        md.push_str(&format!("\n## Dataset `{}`\n\ndataset sha256: `{}`\n\n| Method |", t.dataset, t.dataset_hash));
        for s in &t.splits {
            md.push_str(&format!(" {s} TL | {s} NE | {s} SR | {s} SPL |"));
        }
        md.push_str("\n|---|");
        md.push_str(&"---|".repeat(4 * t.splits.len()));
        md.push('\n');
        for r in &t.rows {
            md.push_str(&format!("| {} |", r.method));
            for s in &t.splits {
                match r.cells.get(s) {
                    Some(c) => {
                        let b = |m: &str| r.best.contains(&format!("{s}.{m}"));
                        md.push_str(&format!(
                            " {} | {} | {} | {} |",
                            fmt_cell(c.tl, 2, false),
                            fmt_cell(c.ne, 2, false),
                            fmt_cell(c.sr, 1, b("SR")),
                            fmt_cell(c.spl, 1, b("SPL"))
                        ));
                    }
                    None => md.push_str(" - | - | - | - |"),
                }
            }
            md.push('\n');
        }
        md.push_str("\n| Method | config sha256 | checkpoint sha256 |\n|---|---|---|\n");
        for r in &t.rows {
            md.push_str(&format!("| {} | `{}` | `{}` |\n", r.method, r.config_hash, r.checkpoint_hash));
        }
    }
    let json = serde_json::to_string_pretty(&tables).expect("report serializes") + "\n";
    Ok(Report { tables, markdown: md, json })
}
