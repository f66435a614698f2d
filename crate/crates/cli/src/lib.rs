//! `navbench` command-line driver.

pub mod config;
pub mod manifest;
pub mod pipeline;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use navbench::conditioning::{ConditioningKind, ConditioningMode};
use navbench::envgen::io::{load_split, save_split, split_hash, SPLIT_FILE_NAME};
use navbench::envgen::{make_splits, SplitName, SplitSpec};
use navbench::evalanalyze::{
    evaluate, profiles, read_results, results_to_string, subset_eval, summarize, EpisodeScore, EvalConfig,
};
use navbench::policy::Checkpoint;
use navbench::rollout::{build_dataset, read_dataset, write_dataset, BehaviorKind, BehaviorSpec, OfflineDataset};
use navbench::{Error, Result};

use config::{BenchConfig, Scale};
use manifest::{write_atomic, Stage};

#[derive(Parser, Debug)]
#[command(name = "navbench", version, about = "Offline RL benchmark for instruction-guided navigation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML config file layered over the scale preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "desk")]
    scale: Scale,
    /// Config override, e.g. `--set train.iters=500`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn load(&self) -> Result<BenchConfig> {
        BenchConfig::load(self.scale, self.config.as_deref(), &self.set)
    }
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// World generation.
    World {
        #[command(subcommand)]
        cmd: WorldCmd,
    },
    /// Offline dataset generation.
    Data {
        #[command(subcommand)]
        cmd: DataCmd,
    },
    /// Train a policy on a dataset.
    Train {
        #[command(flatten)]
        common: Common,
        /// Split file; defaults to `<output.dir>/split/split.json`.
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Overrides the `conditioning` config key.
        #[arg(long)]
        conditioning: Option<String>,
        /// Checkpoint of the selected (best validation SR) parameters.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on one split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        /// `train`, `val_seen` or `val_unseen`.
        #[arg(long, default_value = "val_unseen")]
        split: String,
        #[arg(long)]
        split_file: Option<PathBuf>,
        /// Test-time conditioning; defaults to the checkpoint's mode.
        #[arg(long)]
        conditioning: Option<String>,
        /// Per-episode results file (newline-delimited JSON).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Deviation profiles and tough/easy/T_i subset aggregates.
    Analyze {
        /// Split file.
        #[arg(long)]
        split: PathBuf,
        /// Results files to aggregate; without them only counts are reported.
        #[arg(long)]
        results: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full pipeline: worlds, datasets, training, evaluation, analysis, report.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Overrides `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the results table from a bench run directory.
    Report {
        /// Run directory containing `records/`.
        #[arg(long)]
        runs: PathBuf,
        /// Output directory for `report.md` and `report.json`.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
enum WorldCmd {
    /// Generate worlds and train/val_seen/val_unseen episodes.
    Gen {
        #[command(flatten)]
        common: Common,
        /// Overrides `split.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; defaults to `<output.dir>/split`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
enum DataCmd {
    /// Log one trajectory per training episode under a behavior policy.
    Gen {
        #[command(flatten)]
        common: Common,
        /// Split file; generated from the config when absent.
        #[arg(long)]
        split: Option<PathBuf>,
        /// `expert`, `noisy`, `random` or `mixture`.
        #[arg(long)]
        behavior: String,
        #[arg(long)]
        noise_p: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long, action = clap::ArgAction::Set)]
        random_includes_stop: Option<bool>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses `argv` (program name first) and runs the command. Returns the
/// process exit status: 0 success, 1 stage failure, 2 usage error.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let pool = match thread_pool() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    match pool.install(|| dispatch(cli.cmd)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, Error::Config(_)) {
                2
            } else {
                1
            }
        }
    }
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("ORL_NAV_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config(format!("ORL_NAV_THREADS must be a positive integer, got {v:?}")))?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::Config(e.to_string()))
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io { path: path.into(), source: e }
}

fn default_split_path(cfg: &BenchConfig) -> PathBuf {
    cfg.output_dir().join("split").join(SPLIT_FILE_NAME)
}

fn resolve_split_file(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(SPLIT_FILE_NAME)
    } else {
        path.to_path_buf()
    }
}

fn load_split_checked(path: &Path) -> Result<(SplitSpec, String)> {
    let p = resolve_split_file(path);
    Ok((load_split(&p)?, split_hash(&p)?))
}

fn load_dataset_checked(path: &Path, split: &SplitSpec, hash: &str) -> Result<OfflineDataset> {
    let ds = read_dataset(path, split)?;
    if ds.header.split_hash != hash {
        return Err(Error::HashMismatch {
            path: path.into(),
            expected: ds.header.split_hash.clone(),
            computed: hash.to_string(),
        });
    }
    Ok(ds)
}

fn stage_manifest(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn parent_or_dot(p: &Path) -> &Path {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    }
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::World { cmd: WorldCmd::Gen { common, seed, out } } => {
            let mut cfg = common.load()?;
            if let Some(s) = seed {
                cfg.split.seed = s;
            }
            let dir = out.unwrap_or_else(|| cfg.output_dir().join("split"));
            let split_path = world_gen(&cfg, &dir)?;
            println!("{}", split_path.display());
            Ok(())
        }
        Cmd::Data { cmd: DataCmd::Gen { common, split, behavior, noise_p, seed, horizon, random_includes_stop, out } } => {
            let mut cfg = common.load()?;
            if let Some(s) = seed {
                cfg.data.seed = s;
            }
            if let Some(r) = random_includes_stop {
                cfg.data.random_includes_stop = r;
            }
            if let Some(h) = horizon {
                cfg.data.horizon = h;
            }
            let kind = match (behavior.as_str(), noise_p) {
                ("noisy", None) => return Err(Error::Config("--behavior noisy needs --noise-p".into())),
                (b, p) => BehaviorKind::from_parts(
                    b,
                    p.unwrap_or(match b {
                        "mixture" => navbench::rollout::MIXTURE_NOISE,
                        "random" => 1.0,
                        _ => 0.0,
                    }),
                )
                .map_err(|e| Error::Config(e.to_string()))?,
            };
            let split_path = match split {
                Some(p) => resolve_split_file(&p),
                None => {
                    let dir = parent_or_dot(&out).join("split");
                    world_gen(&cfg, &dir)?
                }
            };
            let behavior = BehaviorSpec { kind, seed: cfg.data.seed, random_includes_stop: cfg.data.random_includes_stop };
            let stage = Stage {
                root: parent_or_dot(&out),
                manifest: stage_manifest(&out),
                name: "data gen".into(),
                config: serde_json::json!({ "behavior": behavior, "horizon": cfg.data.horizon }),
                inputs: vec![split_path.clone()],
                outputs: vec![out.clone()],
            };
            stage.run(|| data_gen(&split_path, &behavior, cfg.data.horizon, &out))?;
            println!("{}", out.display());
            Ok(())
        }
        Cmd::Train { common, split, data, conditioning, out } => {
            let cfg = common.load()?;
            let split_path = split.map(|p| resolve_split_file(&p)).unwrap_or_else(|| default_split_path(&cfg));
            let mode = ConditioningMode::parse(conditioning.as_deref().unwrap_or(&cfg.conditioning))?;
            let stage = Stage {
                root: parent_or_dot(&out),
                manifest: stage_manifest(&out),
                name: "train".into(),
                config: serde_json::json!({ "model": cfg.model, "train": cfg.train, "eval": cfg.eval, "conditioning": mode }),
                inputs: vec![split_path.clone(), data.clone()],
                outputs: vec![out.clone(), pipeline::log_path(&out)],
            };
            stage.run(|| pipeline::train_stage(&cfg, &split_path, &data, mode, &out))?;
            println!("{}", out.display());
            Ok(())
        }
        Cmd::Eval { common, ckpt, split, split_file, conditioning, out } => {
            let cfg = common.load()?;
            let which = SplitName::parse(&split)
                .ok_or_else(|| Error::Config(format!("unknown split {split:?}; expected train, val_seen or val_unseen")))?;
            let split_path = split_file.map(|p| resolve_split_file(&p)).unwrap_or_else(|| default_split_path(&cfg));
            let (spec, _) = load_split_checked(&split_path)?;
            let ck = Checkpoint::load(&ckpt)?;
            let policy = ck.policy()?;
            let mode = match conditioning {
                Some(c) => ConditioningMode::parse(&c)?,
                None => policy.config.conditioning,
            };
            check_eval_mode(policy.config.conditioning, mode)?;
            let horizon = if cfg.eval.horizon > 0 { cfg.eval.horizon } else { spec.default_horizon() };
            let ecfg = EvalConfig { success_radius: cfg.eval.success_radius, horizon, conditioning: mode, split: which };
            let results = evaluate(&policy, &spec, &ecfg)?;
            if let Some(out) = &out {
                let stage = Stage {
                    root: parent_or_dot(out),
                    manifest: stage_manifest(out),
                    name: "eval".into(),
                    config: serde_json::json!({ "eval": ecfg }),
                    inputs: vec![split_path.clone(), ckpt.clone()],
                    outputs: vec![out.clone()],
                };
                stage.run(|| write_atomic(out, results_to_string(&results).as_bytes()))?;
            }
            println!("{}", serde_json::to_string(&summarize(&results)).expect("json"));
            Ok(())
        }
        Cmd::Analyze { split, results, out } => {
            let split_path = resolve_split_file(&split);
            let mut inputs = vec![split_path.clone()];
            inputs.extend(results.iter().cloned());
            let stage = Stage {
                root: parent_or_dot(&out),
                manifest: stage_manifest(&out),
                name: "analyze".into(),
                config: serde_json::json!({}),
                inputs,
                outputs: vec![out.clone()],
            };
            stage.run(|| analyze(&split_path, &results, &out))?;
            println!("{}", out.display());
            Ok(())
        }
        Cmd::Bench { common, out } => {
            let mut cfg = common.load()?;
            if let Some(o) = out {
                cfg.output.dir = o.to_string_lossy().into_owned();
            }
            let report = pipeline::bench(&cfg)?;
            println!("{}", report.display());
            Ok(())
        }
        Cmd::Report { runs, out } => {
            pipeline::report_stage(&runs, &out)?;
            println!("{}", out.join("report.md").display());
            Ok(())
        }
    }
}

/// A conditioned checkpoint needs a token family it was trained with.
fn check_eval_mode(trained: ConditioningMode, test: ConditioningMode) -> Result<()> {
    let family = |m: ConditioningMode| match m.kind {
        ConditioningKind::Unconditioned => 0,
        ConditioningKind::RewardDense | ConditioningKind::RewardSparse => 1,
        ConditioningKind::ReturnToGo => 2,
    };
    if family(trained) != family(test) {
        return Err(Error::Config(format!(
            "checkpoint trained with {} cannot be evaluated with {}",
            trained.as_str(),
            test.as_str()
        )));
    }
    Ok(())
}

/// Generates worlds and episodes into `dir`; returns the split file path.
pub fn world_gen(cfg: &BenchConfig, dir: &Path) -> Result<PathBuf> {
    let split_path = dir.join(SPLIT_FILE_NAME);
    let sc = cfg.split_config();
    let n_worlds = sc.n_train_envs + sc.n_unseen_envs;
    let mut outputs = vec![split_path.clone()];
    outputs.extend((0..n_worlds as u32).map(|e| dir.join(navbench::envgen::io::world_file_name(e))));
    let stage = Stage {
        root: dir,
        manifest: dir.join("world_gen.manifest.json"),
        name: "world gen".into(),
        config: serde_json::to_value(&sc).expect("json"),
        inputs: vec![],
        outputs,
    };
    stage.run(|| {
        let spec = make_splits(&sc)?;
        save_split(&spec, dir)?;
        Ok(())
    })?;
    Ok(split_path)
}

pub fn data_gen(split_path: &Path, behavior: &BehaviorSpec, horizon: usize, out: &Path) -> Result<()> {
    let (spec, hash) = load_split_checked(split_path)?;
    let h = if horizon > 0 { horizon } else { spec.default_horizon() };
    let ds = build_dataset(&spec, &spec.train, behavior, h, &hash)?;
    if let Some(d) = out.parent() {
        std::fs::create_dir_all(d).map_err(|e| io_err(d, e))?;
    }
    write_dataset(&ds, out)
}

#[derive(serde::Serialize)]
struct AnalysisEntry {
    source: String,
    report: navbench::evalanalyze::SubsetReport,
}

pub fn analyze(split_path: &Path, results: &[PathBuf], out: &Path) -> Result<()> {
    let (spec, _) = load_split_checked(split_path)?;
    let mut entries = Vec::new();
    if results.is_empty() {
        for which in [SplitName::ValSeen, SplitName::ValUnseen] {
            let eps = spec.episodes(which);
            let prof = profiles(&spec, eps);
            let scores: Vec<EpisodeScore> =
                eps.iter().map(|e| EpisodeScore { episode_id: e.episode_id, sr: 0.0, spl: 0.0 }).collect();
            let mut report = subset_eval(&scores, &prof)?;
            report.tough = None;
            report.easy = None;
            report.t.clear();
            entries.push(AnalysisEntry { source: which.as_str().into(), report });
        }
    } else {
        let index = spec.episode_index();
        for r in results {
            let recs = read_results(r)?;
            let eps: Vec<navbench::envgen::Episode> = recs
                .iter()
                .map(|x| index.get(&x.episode_id).map(|e| (*e).clone()).ok_or(Error::UnknownEpisode(x.episode_id)))
                .collect::<Result<_>>()?;
            let scores: Vec<EpisodeScore> = recs.iter().map(EpisodeScore::from).collect();
            entries.push(AnalysisEntry {
                source: r.file_name().unwrap_or(r.as_os_str()).to_string_lossy().into_owned(),
                report: subset_eval(&scores, &profiles(&spec, &eps))?,
            });
        }
    }
    write_atomic(out, (serde_json::to_string_pretty(&entries).expect("json") + "\n").as_bytes())
}
