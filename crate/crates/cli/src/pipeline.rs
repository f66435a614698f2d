//! The `bench` recipe and the per-stage bodies it shares with the
//! single-purpose subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use navbench::conditioning::ConditioningMode;
use navbench::envgen::SplitName;
use navbench::evalanalyze::{make_report, MethodRecord};
use navbench::experiment::{evaluate_split, train_policy, Recipe};
use navbench::policy::{Checkpoint, LogEntry};
use navbench::rollout::{BehaviorKind, BehaviorSpec};
use navbench::{sha256_hex, Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::BenchConfig;
use crate::manifest::{file_hash, write_atomic, Stage};
use crate::{analyze, data_gen, load_dataset_checked, load_split_checked, world_gen};

const EVAL_SPLITS: [SplitName; 2] = [SplitName::ValSeen, SplitName::ValUnseen];

fn with_suffix(p: &Path, suffix: &str) -> PathBuf {
    let mut name = p.file_stem().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(suffix);
    p.with_file_name(name)
}

pub fn log_path(ckpt: &Path) -> PathBuf {
    with_suffix(ckpt, ".log.json")
}

pub fn last_path(ckpt: &Path) -> PathBuf {
    with_suffix(ckpt, ".last.json")
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TrainLogFile {
    pub best_iteration: usize,
    pub recipe: Recipe,
    pub log: Vec<LogEntry>,
}

pub fn recipe_hash(recipe: &Recipe) -> String {
    sha256_hex(serde_json::to_string(recipe).expect("json").as_bytes())
}

/// Trains on `data`, writing the selected checkpoint to `out`, the final
/// optimizer state next to it and the training log.
pub fn train_stage(cfg: &BenchConfig, split_path: &Path, data: &Path, mode: ConditioningMode, out: &Path) -> Result<()> {
    let (spec, hash) = load_split_checked(split_path)?;
    let ds = load_dataset_checked(data, &spec, &hash)?;
    let recipe = cfg.recipe(mode, ds.header.horizon)?;
    let outcome = train_policy(&spec, &ds, &recipe)?;
    write_atomic(out, (Checkpoint::new(&outcome.best, None).to_json() + "\n").as_bytes())?;
    write_atomic(&last_path(out), (outcome.last.to_json() + "\n").as_bytes())?;
    let log = TrainLogFile { best_iteration: outcome.best_iteration, recipe, log: outcome.log };
    write_atomic(&log_path(out), (serde_json::to_string_pretty(&log).expect("json") + "\n").as_bytes())
}

#[allow(clippy::too_many_arguments)]
fn eval_stage(
    cfg: &BenchConfig,
    split_path: &Path,
    data: &Path,
    ckpt: &Path,
    dataset: &str,
    mode: ConditioningMode,
    results: &[PathBuf],
    record: &Path,
) -> Result<()> {
    let (spec, _) = load_split_checked(split_path)?;
    let ds_header = navbench::rollout::read_dataset_records(data)?.0;
    let recipe = cfg.recipe(mode, ds_header.horizon)?;
    let policy = Checkpoint::load(ckpt)?.policy()?;
    let mut splits = std::collections::BTreeMap::new();
    for (which, path) in EVAL_SPLITS.iter().zip(results) {
        let (m, res) = evaluate_split(&policy, &spec, &recipe, *which)?;
        write_atomic(path, navbench::evalanalyze::results_to_string(&res).as_bytes())?;
        splits.insert(which.as_str().to_string(), m);
    }
    let rec = MethodRecord {
        dataset: dataset.to_string(),
        method: mode.as_str().to_string(),
        splits,
        dataset_hash: file_hash(data)?,
        config_hash: recipe_hash(&recipe),
        checkpoint_hash: file_hash(ckpt)?,
    };
    write_atomic(record, (serde_json::to_string_pretty(&rec).expect("json") + "\n").as_bytes())
}

/// Reads `<runs>/records/*.json` and writes `report.md` and `report.json`.
pub fn report_stage(runs: &Path, out: &Path) -> Result<()> {
    let dir = runs.join("records");
    let mut files: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(|e| Error::Io { path: dir.clone(), source: e })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    report_files(&files, out)
}

pub fn report_files(files: &[PathBuf], out: &Path) -> Result<()> {
    let records: Vec<MethodRecord> = files
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(|e| Error::Io { path: p.clone(), source: e })?;
            serde_json::from_str(&text).map_err(|e| Error::Malformed { path: p.clone(), line: e.line(), msg: e.to_string() })
        })
        .collect::<Result<_>>()?;
    let report = make_report(&records)?;
    write_atomic(&out.join("report.md"), report.markdown.as_bytes())?;
    write_atomic(&out.join("report.json"), report.json.as_bytes())
}

/// Worlds → datasets → training per (dataset, method) → evaluation →
/// subset analysis → report. Completed stages are skipped.
pub fn bench(cfg: &BenchConfig) -> Result<PathBuf> {
    let root = cfg.output_dir();
    fs::create_dir_all(&root).map_err(|e| Error::Io { path: root.clone(), source: e })?;
    write_atomic(&root.join("config.toml"), cfg.to_toml().as_bytes())?;
    let manifests = root.join("manifests");
    let split_path = world_gen(cfg, &root.join("split"))?;

    let mut records = Vec::new();
    for label in &cfg.data.behaviors {
        let kind = BehaviorKind::parse_label(label).map_err(|e| Error::Config(e.to_string()))?;
        let behavior = BehaviorSpec { kind, seed: cfg.data.seed, random_includes_stop: cfg.data.random_includes_stop };
        let data = root.join("data").join(format!("{label}.jsonl"));
        Stage {
            root: &root,
            manifest: manifests.join(format!("data-{label}.json")),
            name: format!("data gen {label}"),
            config: serde_json::json!({ "behavior": behavior, "horizon": cfg.data.horizon }),
            inputs: vec![split_path.clone()],
            outputs: vec![data.clone()],
        }
        .run(|| data_gen(&split_path, &behavior, cfg.data.horizon, &data))?;

        for method in &cfg.bench.methods {
            let mode = ConditioningMode::parse(method)?;
            let run = format!("{label}-{method}");
            let ckpt = root.join("ckpt").join(format!("{run}.json"));
            Stage {
                root: &root,
                manifest: manifests.join(format!("train-{run}.json")),
                name: format!("train {run}"),
                config: serde_json::json!({ "model": cfg.model, "train": cfg.train, "eval": cfg.eval, "conditioning": mode }),
                inputs: vec![split_path.clone(), data.clone()],
                outputs: vec![ckpt.clone(), last_path(&ckpt), log_path(&ckpt)],
            }
            .run(|| train_stage(cfg, &split_path, &data, mode, &ckpt))?;

            let results: Vec<PathBuf> =
                EVAL_SPLITS.iter().map(|s| root.join("results").join(format!("{run}-{}.ndjson", s.as_str()))).collect();
            let record = root.join("records").join(format!("{run}.json"));
            let mut outputs = results.clone();
            outputs.push(record.clone());
            Stage {
                root: &root,
                manifest: manifests.join(format!("eval-{run}.json")),
                name: format!("eval {run}"),
                config: serde_json::json!({ "eval": cfg.eval, "conditioning": mode }),
                inputs: vec![split_path.clone(), data.clone(), ckpt.clone()],
                outputs,
            }
            .run(|| eval_stage(cfg, &split_path, &data, &ckpt, label, mode, &results, &record))?;

            let analysis = root.join("analysis").join(format!("{run}.json"));
            let mut inputs = vec![split_path.clone()];
            inputs.extend(results.iter().cloned());
            Stage {
                root: &root,
                manifest: manifests.join(format!("analyze-{run}.json")),
                name: format!("analyze {run}"),
                config: serde_json::json!({}),
                inputs,
                outputs: vec![analysis.clone()],
            }
            .run(|| analyze(&split_path, &results, &analysis))?;
            records.push(record);
        }
    }

    let report = root.join("report.md");
    Stage {
        root: &root,
        manifest: manifests.join("report.json"),
        name: "report".into(),
        config: serde_json::json!({}),
        inputs: records.clone(),
        outputs: vec![report.clone(), root.join("report.json")],
    }
    .run(|| report_files(&records, &root))?;
    Ok(report)
}
