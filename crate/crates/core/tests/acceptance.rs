//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.
//!
//! `NAVBENCH_ACCEPTANCE_ONLY=1,4,9` restricts the run to the listed criteria.

use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use navbench::conditioning::{ConditioningMode, DEFAULT_ZERO_EPS};
use navbench::envgen::io::{save_split, split_hash, world_to_string};
use navbench::envgen::{
    euclid, make_splits, AgentState, Episode, NavGraph, Observation, SplitConfig, SplitName, SplitSpec,
};
use navbench::evalanalyze::{
    evaluate, kfold_study, make_report, profiles, results_to_string, seed_study, subset_eval, Agent,
    Controller, DeviationProfile, EpisodeScore, EvalConfig, MethodRecord, StudyTable, Termination,
};
use navbench::evalanalyze::subsets::MAX_RUN_TRACKED;
use navbench::experiment::{evaluate_split, train_policy, training_examples, Recipe};
use navbench::policy::tape::Tape;
use navbench::policy::{
    candidate_matrix, compute_gradients, trajectory_loss, Checkpoint, Injection, Policy, TrainExample,
};
use navbench::rollout::{
    build_dataset, generate_trajectory_traced, BehaviorKind, BehaviorSpec, OfflineDataset,
};
use navbench::rollout::io::dataset_to_string;
use navbench::{envgen::observe, sha256_hex, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Result<Verdict> {
    Ok(Verdict { pass, detail: detail.into() })
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol * a.abs().max(b.abs())
}

fn pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("thread pool")
}

fn desk_split() -> SplitSpec {
    make_splits(&SplitConfig {
        n_train_envs: 8,
        n_unseen_envs: 4,
        episodes_per_env: 100,
        val_episodes_per_env: 50,
        ..Default::default()
    })
    .expect("desk split")
}

fn mode(s: &str) -> ConditioningMode {
    ConditioningMode::parse(s).expect("mode")
}

// ---------------------------------------------------------------- oracles

/// Uniform random walker that stops with probability 0.1 per decision.
struct RandomWalker {
    seed: u64,
}

struct Walk {
    rng: ChaCha8Rng,
}

impl Agent for Walk {
    fn act(&mut self, _state: &AgentState, obs: &Observation, _token: Option<f64>) -> Result<usize> {
        if self.rng.gen::<f64>() < 0.1 {
            return Ok(obs.stop_index());
        }
        Ok(self.rng.gen_range(0..obs.len() - 1))
    }
}

impl Controller for RandomWalker {
    fn start<'a>(&'a self, _graph: &'a NavGraph, episode: &'a Episode) -> Result<Box<dyn Agent + 'a>> {
        Ok(Box::new(Walk { rng: ChaCha8Rng::seed_from_u64(self.seed ^ episode.episode_id.rotate_left(17)) }))
    }
}

fn dist3(p: &[f64; 3], q: &[f64; 3]) -> f64 {
    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
}

fn oracle_path_len(g: &NavGraph, nodes: &[usize]) -> f64 {
    nodes.windows(2).map(|w| dist3(g.position(w[0]), g.position(w[1]))).sum()
}

fn criterion_1() -> Result<Verdict> {
    let split = make_splits(&SplitConfig {
        seed: 11,
        n_train_envs: 4,
        n_unseen_envs: 2,
        episodes_per_env: 150,
        val_episodes_per_env: 100,
        ..Default::default()
    })?;
    let radius = 3.0;
    let mut failures = Vec::new();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();

    // Training tokens on logged noisy trajectories.
    for (k, e) in split.all_episodes().enumerate() {
        let g = split.world(e.env_id);
        let b = BehaviorSpec::new(BehaviorKind::Noisy(0.4), 100 + (k % 3) as u64);
        let (traj, _) = generate_trajectory_traced(g, e, &b, 30);
        let mut nodes: Vec<usize> = traj.steps.iter().map(|s| s.state.node).collect();
        nodes.push(traj.final_state.node);
        let od: Vec<f64> = nodes.iter().map(|&n| dist3(g.position(n), &e.goal_coords)).collect();
        let dists: Vec<f64> = traj.steps.iter().map(|s| s.dist_to_goal).collect();
        let final_dist = euclid(g.position(traj.final_state.node), &e.goal_coords);
        for (name, m) in [("dense", "dense"), ("sparse", "sparse"), ("rtg-train", "rtg-max")] {
            let got = mode(m).train_tokens(&dists, final_dist)?;
            for t in 0..dists.len() {
                let delta = od[t] - od[t + 1];
                let want = match name {
                    "dense" => delta,
                    "sparse" => {
                        if delta.abs() <= DEFAULT_ZERO_EPS {
                            0.0
                        } else {
                            delta.signum()
                        }
                    }
                    _ => od[t],
                };
                let v = got[t].expect("conditioned token");
                let ok = if name == "sparse" { v == want } else { rel_close(v, want, 1e-9) };
                if !ok {
                    failures.push(format!("{name} token ep {} step {t}: {v} vs {want}", e.episode_id));
                }
            }
            *counts.entry(name).or_default() += 1;
        }
    }

    // Test-time tokens and metrics on random-walk rollouts.
    for which in [SplitName::Train, SplitName::ValSeen, SplitName::ValUnseen] {
        let eps = split.episodes(which);
        let ref_lens: Vec<f64> = eps.iter().map(|e| oracle_path_len(split.world(e.env_id), &e.reference_path)).collect();
        let max_len = ref_lens.iter().cloned().fold(0.0, f64::max);
        let avg_len = ref_lens.iter().sum::<f64>() / ref_lens.len() as f64;
        for m in ["none", "sparse", "dense", "rtg-max", "rtg-avg"] {
            let cfg = EvalConfig::new(25, mode(m), which);
            let walker = RandomWalker { seed: 7 + m.len() as u64 };
            let results = evaluate(&walker, &split, &cfg)?;
            for ((r, e), &ref_len) in results.iter().zip(eps).zip(&ref_lens) {
                let g = split.world(e.env_id);
                let ro = &r.rollout;
                let near: Vec<bool> =
                    ro.nodes.iter().map(|&n| dist3(g.position(n), &e.goal_coords) <= radius).collect();
                let want: Vec<f64> = match m {
                    "none" => vec![],
                    "sparse" | "dense" => near.iter().map(|&n| if n { 0.0 } else { 1.0 }).collect(),
                    _ => {
                        let mut out = Vec::new();
                        let mut prev = if m == "rtg-max" { max_len } else { avg_len };
                        for (i, &n) in near.iter().enumerate() {
                            let v = if n {
                                0.0
                            } else if i == 0 {
                                prev
                            } else {
                                (prev - dist3(g.position(ro.nodes[i - 1]), g.position(ro.nodes[i]))).max(0.0)
                            };
                            out.push(v);
                            prev = v;
                        }
                        out
                    }
                };
                let tok_ok = want.len() == ro.tokens.len()
                    && want.iter().zip(&ro.tokens).all(|(a, b)| rel_close(*a, *b, 1e-9));
                if !tok_ok {
                    failures.push(format!("{m} test tokens ep {}: {:?} vs {:?}", e.episode_id, ro.tokens, want));
                }
                let near_end = *near.last().expect("start node");
                if near_end != (ro.termination == Termination::GoalDetected) {
                    failures.push(format!("termination ep {}", e.episode_id));
                }
                let key = match m {
                    "none" => None,
                    "sparse" | "dense" => Some("test"),
                    _ => Some("rtg-test"),
                };
                if let Some(k) = key {
                    *counts.entry(k).or_default() += 1;
                }

                let tl = oracle_path_len(g, &ro.nodes);
                let ne = dist3(g.position(*ro.nodes.last().expect("start node")), &e.goal_coords);
                let sr = if ne <= radius { 1.0 } else { 0.0 };
                let spl = if sr == 1.0 { if tl.max(ref_len) > 0.0 { ref_len / tl.max(ref_len) } else { 1.0 } } else { 0.0 };
                for (name, got, want) in [("TL", r.tl, tl), ("NE", r.ne, ne), ("SR", r.sr, sr), ("SPL", r.spl, spl)] {
                    if !rel_close(got, want, 1e-9) {
                        failures.push(format!("{name} ep {} ({m}): {got} vs {want}", e.episode_id));
                    }
                }
                *counts.entry("metrics").or_default() += 1;
            }
        }
    }
    let min = counts.values().copied().min().unwrap_or(0);
    let detail = format!(
        "cases {}; {} mismatches{}",
        counts.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" "),
        failures.len(),
        failures.first().map(|f| format!(", first: {f}")).unwrap_or_default()
    );
    verdict(failures.is_empty() && min >= 1000, detail)
}

// --------------------------------------------------------------- gradients

fn tensor_class(name: &str) -> String {
    name.split('.').filter(|p| p.parse::<usize>().is_err()).collect::<Vec<_>>().join(".")
}

fn criterion_2() -> Result<Verdict> {
    let split = make_splits(&SplitConfig {
        seed: 5,
        n_train_envs: 2,
        n_unseen_envs: 1,
        episodes_per_env: 4,
        val_episodes_per_env: 2,
        ..Default::default()
    })?;
    let behavior = BehaviorSpec::new(BehaviorKind::Noisy(0.3), 9);
    let data = build_dataset(&split, &split.train[..2], &behavior, 6, "gradcheck")?;
    let examples = training_examples(&split, &data)?;
    let h = 1e-5;
    let floor = 1e-5;
    let per_class = 200;
    let mut worst = (0.0f64, String::new());
    let mut configs = 0;
    let mut min_samples = usize::MAX;
    let mut classes_seen = usize::MAX;
    for injection in [Injection::Add, Injection::Concat, Injection::AddLearned] {
        for m in ["none", "dense", "sparse", "rtg-max"] {
            let cond = mode(m);
            let mut recipe = Recipe::default();
            recipe.model.d_model = 8;
            recipe.model.ffn_hidden = 8;
            recipe.model.injection = injection;
            recipe.model.init_seed = 21;
            let mut policy = Policy::new(recipe.model.to_config(&split, cond))?;
            let g = compute_gradients(&policy, &examples, &cond)?;
            let loss = |p: &Policy| -> f64 {
                examples.iter().map(|ex| trajectory_loss(p, ex, &cond).expect("loss")).sum::<f64>()
                    / examples.len() as f64
            };
            let mut classes: BTreeMap<String, Vec<(usize, usize)>> = BTreeMap::new();
            for (ti, name) in policy.params.names.iter().enumerate() {
                let entries = classes.entry(tensor_class(name)).or_default();
                entries.extend((0..policy.params.tensors[ti].len()).map(|k| (ti, k)));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(configs as u64);
            for entries in classes.values() {
                // Classes with fewer than `per_class` scalars are sampled with
                // replacement, which covers every entry with high probability.
                for _ in 0..per_class {
                    let (ti, k) = entries[rng.gen_range(0..entries.len())];
                    let orig = policy.params.tensors[ti].data[k];
                    policy.params.tensors[ti].data[k] = orig + h;
                    let up = loss(&policy);
                    policy.params.tensors[ti].data[k] = orig - h;
                    let down = loss(&policy);
                    policy.params.tensors[ti].data[k] = orig;
                    let fd = (up - down) / (2.0 * h);
                    let an = g.grads[ti].data[k];
                    let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(floor);
                    if rel > worst.0 || !rel.is_finite() {
                        worst = (rel, format!("{:?}/{m} {}[{k}] analytic {an:.3e} fd {fd:.3e}", injection, policy.params.names[ti]));
                    }
                }
                min_samples = min_samples.min(per_class);
            }
            classes_seen = classes_seen.min(classes.len());
            configs += 1;
        }
    }
    let pass = worst.0 <= 1e-4 && worst.0.is_finite();
    verdict(
        pass,
        format!(
            "{configs} configs, >= {classes_seen} tensor classes each x {min_samples} samples, h={h:e}, floor={floor:e}; max rel err {:.2e} at {}",
            worst.0, worst.1
        ),
    )
}

// ------------------------------------------------------------- determinism

struct PipelineHashes {
    worlds: String,
    split_file: String,
    dataset: String,
    checkpoint: String,
    results: String,
    report: String,
}

fn pipeline_once(threads: usize, train_threads: usize) -> Result<PipelineHashes> {
    let dir = tempfile::tempdir().expect("tempdir");
    let cfg = SplitConfig { n_train_envs: 3, n_unseen_envs: 2, episodes_per_env: 12, val_episodes_per_env: 6, ..Default::default() };
    let split = pool(threads).install(|| make_splits(&cfg))?;
    let worlds: String = split.worlds.iter().map(world_to_string).collect();
    let split_path = save_split(&split, dir.path())?;
    let split_file = split_hash(&split_path)?;
    let h = split.default_horizon();
    let data = pool(threads).install(|| {
        build_dataset(&split, &split.train, &BehaviorSpec::new(BehaviorKind::Noisy(0.3), 4), h, &split_file)
    })?;
    let data_text = dataset_to_string(&data);
    let mut recipe = Recipe::default();
    recipe.model.d_model = 8;
    recipe.model.ffn_hidden = 16;
    recipe.horizon = h;
    recipe.schedule.iterations = 40;
    recipe.schedule.eval_every = 20;
    recipe.schedule.batch_size = 4;
    let out = pool(train_threads).install(|| train_policy(&split, &data, &recipe))?;
    let ckpt = Checkpoint::new(&out.best, None).to_json();
    let mut splits = BTreeMap::new();
    let mut results_text = String::new();
    for which in [SplitName::ValSeen, SplitName::ValUnseen] {
        let (m, r) = pool(threads).install(|| evaluate_split(&out.best, &split, &recipe, which))?;
        results_text.push_str(&results_to_string(&r));
        splits.insert(which.as_str().to_string(), m);
    }
    let record = MethodRecord {
        dataset: "noisy-30".into(),
        method: "sparse".into(),
        splits,
        dataset_hash: sha256_hex(data_text.as_bytes()),
        config_hash: sha256_hex(serde_json::to_string(&recipe).expect("recipe json").as_bytes()),
        checkpoint_hash: sha256_hex(ckpt.as_bytes()),
    };
    let report = make_report(&[record])?;
    Ok(PipelineHashes {
        worlds: sha256_hex(worlds.as_bytes()),
        split_file,
        dataset: sha256_hex(data_text.as_bytes()),
        checkpoint: sha256_hex(ckpt.as_bytes()),
        results: sha256_hex(results_text.as_bytes()),
        report: sha256_hex(format!("{}{}", report.markdown, report.json).as_bytes()),
    })
}

fn criterion_3() -> Result<Verdict> {
    let a = pipeline_once(1, 1)?;
    let b = pipeline_once(1, 1)?;
    let c = pipeline_once(4, 1)?;
    let mut diffs = Vec::new();
    for (name, x, y, z) in [
        ("worlds", &a.worlds, &b.worlds, &c.worlds),
        ("split", &a.split_file, &b.split_file, &c.split_file),
        ("dataset", &a.dataset, &b.dataset, &c.dataset),
        ("checkpoint", &a.checkpoint, &b.checkpoint, &c.checkpoint),
        ("results", &a.results, &b.results, &c.results),
        ("report", &a.report, &b.report, &c.report),
    ] {
        if x != y || x != z {
            diffs.push(name);
        }
    }
    verdict(
        diffs.is_empty(),
        format!(
            "3 runs (1/1/4 workers): worlds {} dataset {} checkpoint {} report {}{}",
            &a.worlds[..12],
            &a.dataset[..12],
            &a.checkpoint[..12],
            &a.report[..12],
            if diffs.is_empty() { String::new() } else { format!("; differing: {diffs:?}") }
        ),
    )
}

// -------------------------------------------------------- noise calibration

fn criterion_4() -> Result<Verdict> {
    let split = desk_split();
    let h = split.default_horizon();
    let (mut steps, mut random) = (0usize, 0usize);
    let mut seed = 0;
    while steps < 10_000 {
        for e in split.all_episodes() {
            let b = BehaviorSpec::new(BehaviorKind::Noisy(0.30), seed);
            let (_, branches) = generate_trajectory_traced(split.world(e.env_id), e, &b, h);
            steps += branches.len();
            random += branches.iter().filter(|&&x| x).count();
        }
        seed += 1;
    }
    let rate = random as f64 / steps as f64;
    let expert = build_dataset(&split, &split.train, &BehaviorSpec::new(BehaviorKind::Expert, 1), h, "calib")?;
    let index = split.episode_index();
    let reached = expert
        .trajectories
        .iter()
        .filter(|t| !t.truncated && t.final_state.node == index[&t.episode_id].goal_node)
        .count();
    let n = expert.trajectories.len();
    verdict(
        (rate - 0.30).abs() <= 0.02 && reached == n,
        format!("random-branch rate {rate:.4} over {steps} steps; expert reached goal in {reached}/{n}"),
    )
}

// ----------------------------------------------------- trained comparisons

const DATASETS: [(&str, BehaviorKind); 4] = [
    ("expert", BehaviorKind::Expert),
    ("noisy-15", BehaviorKind::Noisy(0.15)),
    ("noisy-30", BehaviorKind::Noisy(0.30)),
    ("random", BehaviorKind::Random),
];
const SEEDS: [u64; 3] = [0, 1, 2];

#[derive(Clone, Copy)]
struct Scores {
    seen: f64,
    unseen: f64,
}

struct Grid {
    split: SplitSpec,
    datasets: HashMap<&'static str, OfflineDataset>,
    runs: HashMap<(&'static str, &'static str, u64), Scores>,
}

impl Grid {
    fn new() -> Result<Self> {
        let split = desk_split();
        let h = split.default_horizon();
        let mut datasets = HashMap::new();
        for (label, kind) in DATASETS {
            datasets.insert(label, build_dataset(&split, &split.train, &BehaviorSpec::new(kind, 1), h, "desk")?);
        }
        Ok(Grid { split, datasets, runs: HashMap::new() })
    }

    fn recipe(&self, m: &str, seed: u64) -> Recipe {
        let mut r = Recipe::default();
        r.conditioning = mode(m);
        r.horizon = self.split.default_horizon();
        r.schedule.iterations = 3000;
        r.schedule.eval_every = 750;
        r.schedule.seed = seed;
        r.model.init_seed = seed;
        r
    }

    fn get(&mut self, data: &'static str, m: &'static str, seed: u64) -> Result<Scores> {
        if let Some(s) = self.runs.get(&(data, m, seed)) {
            return Ok(*s);
        }
        let t = Instant::now();
        let recipe = self.recipe(m, seed);
        let out = train_policy(&self.split, &self.datasets[data], &recipe)?;
        let seen = evaluate_split(&out.best, &self.split, &recipe, SplitName::ValSeen)?.0.sr;
        let unseen = evaluate_split(&out.best, &self.split, &recipe, SplitName::ValUnseen)?.0.sr;
        println!(
            "    run {data}/{m} seed {seed}: best@{} val_seen {:.1}% val_unseen {:.1}% ({:.0}s)",
            out.best_iteration,
            seen * 100.0,
            unseen * 100.0,
            t.elapsed().as_secs_f64()
        );
        let s = Scores { seen, unseen };
        self.runs.insert((data, m, seed), s);
        Ok(s)
    }

    fn mean_unseen(&mut self, data: &'static str, m: &'static str) -> Result<(f64, Vec<f64>)> {
        let mut v = Vec::new();
        for s in SEEDS {
            v.push(self.get(data, m, s)?.unseen);
        }
        Ok((v.iter().sum::<f64>() / v.len() as f64, v))
    }
}

fn pct(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{:.1}", x * 100.0)).collect::<Vec<_>>().join("/")
}

fn criterion_5(grid: &mut Grid) -> Result<Verdict> {
    let n_train = grid.split.train.len();
    let s = grid.get("expert", "none", 0)?;
    verdict(
        s.seen >= 0.5 && n_train >= 800 && grid.split.config.n_unseen_envs >= 2,
        format!("{n_train} train episodes; unconditioned on expert data: val_seen SR {:.1}%", s.seen * 100.0),
    )
}

fn criterion_6(grid: &mut Grid) -> Result<Verdict> {
    let (sparse, vs) = grid.mean_unseen("random", "sparse")?;
    let (none, vn) = grid.mean_unseen("random", "none")?;
    let gap = (sparse - none) * 100.0;
    verdict(
        gap >= 15.0,
        format!("random data val_unseen SR: sparse {} vs none {} -> gap {gap:.1} pts", pct(&vs), pct(&vn)),
    )
}

fn criterion_7(grid: &mut Grid) -> Result<Verdict> {
    let mut gaps = Vec::new();
    for (label, _) in DATASETS {
        let (s, _) = grid.mean_unseen(label, "sparse")?;
        let (n, _) = grid.mean_unseen(label, "none")?;
        gaps.push((label, (s - n) * 100.0));
    }
    let ok = gaps.windows(2).all(|w| w[1].1 >= w[0].1 - 3.0);
    verdict(ok, format!("sparse - none gaps: {}", gaps.iter().map(|(l, g)| format!("{l} {g:.1}")).collect::<Vec<_>>().join(", ")))
}

fn criterion_8(grid: &mut Grid) -> Result<Verdict> {
    let (sparse, vs) = grid.mean_unseen("noisy-30", "sparse")?;
    let (dense, vd) = grid.mean_unseen("noisy-30", "dense")?;
    verdict(
        sparse * 100.0 >= dense * 100.0 - 3.0,
        format!("noisy-30 val_unseen SR: sparse {} (mean {:.1}) vs dense {} (mean {:.1})", pct(&vs), sparse * 100.0, pct(&vd), dense * 100.0),
    )
}

// ------------------------------------------------------------------ subsets

fn oracle_has_run(away: &[bool], i: usize) -> bool {
    i == 0 || (i <= away.len() && (0..=away.len() - i).any(|j| away[j..j + i].iter().all(|&a| a)))
}

fn criterion_9() -> Result<Verdict> {
    let split = desk_split();
    let mut failures = Vec::new();
    let mut checked = 0;
    let mut counts_seen = Vec::new();
    for which in [SplitName::ValSeen, SplitName::ValUnseen] {
        let eps = split.episodes(which);
        let prof = profiles(&split, eps);
        for e in eps {
            let p = &prof[&e.episode_id];
            let g = split.world(e.env_id);
            let d: Vec<f64> = e.reference_path.iter().map(|&n| dist3(g.position(n), &e.goal_coords)).collect();
            let away: Vec<bool> = d.windows(2).map(|w| w[1] > w[0]).collect();
            if p.away != away {
                failures.push(format!("away flags of episode {}", e.episode_id));
            }
            for i in 1..MAX_RUN_TRACKED {
                if p.in_t(i + 1) && !p.in_t(i) {
                    failures.push(format!("T{} not within T{i} for episode {}", i + 1, e.episode_id));
                }
            }
            if p.is_tough() != oracle_has_run(&away, 1) {
                failures.push(format!("tough flag of episode {}", e.episode_id));
            }
        }
        let cfg = EvalConfig::new(split.default_horizon(), mode("none"), which);
        for seed in 0..20u64 {
            let results = evaluate(&RandomWalker { seed }, &split, &cfg)?;
            let scores: Vec<EpisodeScore> = results.iter().map(EpisodeScore::from).collect();
            let report = subset_eval(&scores, &prof)?;
            check_subsets(&scores, &prof, &report, &mut failures);
            if seed == 0 {
                counts_seen.push(format!("{} N={:?}", which.as_str(), report.counts));
            }
            checked += 1;
        }
    }
    // Synthetic profiles reach the deeper T_i subsets that shortest paths rarely do.
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..500 {
        let n = rng.gen_range(1..60);
        let mut prof = BTreeMap::new();
        let mut scores = Vec::new();
        for id in 0..n as u64 {
            let len = rng.gen_range(1..14);
            let d: Vec<f64> = (0..len).map(|_| rng.gen_range(0..6) as f64).collect();
            prof.insert(id, navbench::evalanalyze::deviation_from_distances(&d));
            let sr = if rng.gen_bool(0.5) { 1.0 } else { 0.0 };
            scores.push(EpisodeScore { episode_id: id, sr, spl: sr * rng.gen::<f64>() });
        }
        let report = subset_eval(&scores, &prof)?;
        check_subsets(&scores, &prof, &report, &mut failures);
        checked += 1;
    }
    verdict(
        failures.is_empty(),
        format!(
            "{checked} result sets; {}; {} mismatches{}",
            counts_seen.join(", "),
            failures.len(),
            failures.first().map(|f| format!(", first: {f}")).unwrap_or_default()
        ),
    )
}

fn check_subsets(
    scores: &[EpisodeScore],
    prof: &BTreeMap<u64, DeviationProfile>,
    report: &navbench::evalanalyze::SubsetReport,
    failures: &mut Vec<String>,
) {
    let member = |s: &EpisodeScore, i: usize| oracle_has_run(&prof[&s.episode_id].away, i);
    for i in 0..=MAX_RUN_TRACKED {
        let n = scores.iter().filter(|s| member(s, i)).count();
        if report.counts.get(i) != Some(&n) {
            failures.push(format!("N{i}: {:?} vs {n}", report.counts.get(i)));
        }
    }
    let agg = |f: &dyn Fn(&EpisodeScore) -> bool| -> Option<(usize, f64, f64)> {
        let xs: Vec<&EpisodeScore> = scores.iter().filter(|s| f(s)).collect();
        if xs.is_empty() {
            return None;
        }
        let n = xs.len() as f64;
        Some((xs.len(), xs.iter().map(|s| s.sr).sum::<f64>() / n, xs.iter().map(|s| s.spl).sum::<f64>() / n))
    };
    let same = |got: Option<(usize, f64, f64)>, want: Option<(usize, f64, f64)>| match (got, want) {
        (None, None) => true,
        (Some(a), Some(b)) => a.0 == b.0 && rel_close(a.1, b.1, 1e-12) && rel_close(a.2, b.2, 1e-12),
        _ => false,
    };
    let tough = report.tough.map(|a| (a.n, a.sr, a.spl));
    let easy = report.easy.map(|a| (a.n, a.sr, a.spl));
    if !same(tough, agg(&|s| member(s, 1))) {
        failures.push("tough aggregate".into());
    }
    if !same(easy, agg(&|s| !member(s, 1))) {
        failures.push("easy aggregate".into());
    }
    for i in 2..=MAX_RUN_TRACKED {
        let got = report.t.get(&i).map(|a| (a.n, a.sr, a.spl));
        if !same(got, agg(&|s| member(s, i))) {
            failures.push(format!("T{i} aggregate"));
        }
    }
}

// ------------------------------------------------------------- zero tokens

fn criterion_10() -> Result<Verdict> {
    let split = desk_split();
    let h = split.default_horizon();
    let data = build_dataset(&split, &split.train[..200], &BehaviorSpec::new(BehaviorKind::Noisy(0.3), 3), h, "zero")?;
    let examples = training_examples(&split, &data)?;
    let (mut steps, mut mismatches) = (0usize, 0usize);
    for (seed, m) in [(0u64, "sparse"), (1, "dense"), (2, "rtg-max")] {
        let mut recipe = Recipe::default();
        recipe.model.init_seed = seed;
        let cond = Policy::new(recipe.model.to_config(&split, mode(m)))?;
        let plain = Policy::from_params(recipe.model.to_config(&split, mode("none")), cond.params.clone())?;
        for ex in &examples {
            let (n, bad) = compare_zero_token(&cond, &plain, ex)?;
            steps += n;
            mismatches += bad;
        }
    }
    verdict(
        mismatches == 0 && steps > 0,
        format!("{steps} decision steps over {} trajectories x 3 inits; {mismatches} differing logit vectors", examples.len()),
    )
}

fn compare_zero_token(cond: &Policy, plain: &Policy, ex: &TrainExample) -> Result<(usize, usize)> {
    let mut t1 = Tape::new();
    let mut t2 = Tape::new();
    let e1 = cond.encode(&mut t1, &ex.episode.instruction)?;
    let e2 = plain.encode(&mut t2, &ex.episode.instruction)?;
    let (mut q1, mut q2) = (e1.q0, e2.q0);
    let mut bad = 0;
    for s in &ex.trajectory.steps {
        let c = candidate_matrix(&observe(ex.graph, &s.state));
        let c1 = t1.input(c.clone());
        let c2 = t2.input(c);
        let (l1, n1) = cond.step(&mut t1, &e1, q1, c1, Some(0.0))?;
        let (l2, n2) = plain.step(&mut t2, &e2, q2, c2, None)?;
        let b1: Vec<u64> = t1.value(l1).data.iter().map(|x| x.to_bits()).collect();
        let b2: Vec<u64> = t2.value(l2).data.iter().map(|x| x.to_bits()).collect();
        let s1: Vec<u64> = t1.value(n1).data.iter().map(|x| x.to_bits()).collect();
        let s2: Vec<u64> = t2.value(n2).data.iter().map(|x| x.to_bits()).collect();
        if b1 != b2 || s1 != s2 {
            bad += 1;
        }
        q1 = n1;
        q2 = n2;
    }
    Ok((ex.trajectory.len(), bad))
}

// ------------------------------------------------------------------ studies

fn study_tables(seed: u64) -> Result<(StudyTable, StudyTable)> {
    let split = make_splits(&SplitConfig {
        n_train_envs: 3,
        n_unseen_envs: 2,
        episodes_per_env: 20,
        val_episodes_per_env: 10,
        ..Default::default()
    })?;
    let h = split.default_horizon();
    let data = build_dataset(&split, &split.train, &BehaviorSpec::new(BehaviorKind::Noisy(0.3), 2), h, "study")?;
    let mut recipe = Recipe::default();
    recipe.model.d_model = 8;
    recipe.model.ffn_hidden = 16;
    recipe.horizon = h;
    recipe.schedule.iterations = 60;
    recipe.schedule.eval_every = 30;
    recipe.schedule.batch_size = 4;
    recipe.schedule.lr = 3e-3;
    let kfold = kfold_study(&split, &data, &[0.25, 0.5, 0.75], 3, &recipe, seed)?;
    let seeds = seed_study(&split, &data, &[seed, seed + 1, seed + 2], &recipe)?;
    Ok((kfold, seeds))
}

fn criterion_11() -> Result<Verdict> {
    let (k1, s1) = study_tables(5)?;
    let (k2, s2) = study_tables(5)?;
    let mut problems = Vec::new();
    if k1.rows.len() != 6 || k1.rows.iter().any(|r| r.values.len() != 3) {
        problems.push("k-fold table shape".to_string());
    }
    let fractions: Vec<Option<f64>> = k1.rows.iter().map(|r| r.fraction).collect();
    if fractions != [Some(0.25), Some(0.25), Some(0.5), Some(0.5), Some(0.75), Some(0.75)] {
        problems.push(format!("k-fold fractions {fractions:?}"));
    }
    if s1.rows.len() != 2 || s1.rows.iter().any(|r| r.values.len() != 3 || r.fraction.is_some()) {
        problems.push("seed table shape".to_string());
    }
    for r in k1.rows.iter().chain(&s1.rows) {
        if !r.std.is_finite() || !r.mean.is_finite() {
            problems.push(format!("non-finite summary in {:?}", r.split));
        }
        let mean = r.values.iter().sum::<f64>() / r.values.len() as f64;
        let var = r.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r.values.len() - 1) as f64;
        if !rel_close(r.mean, mean, 1e-12) || (r.std - var.sqrt()).abs() > 1e-12 {
            problems.push("mean/std disagree with recomputation".into());
        }
    }
    let bits = |t: &StudyTable| t.rows.iter().flat_map(|r| [r.mean.to_bits(), r.std.to_bits()]).collect::<Vec<_>>();
    if bits(&k1) != bits(&k2) || bits(&s1) != bits(&s2) || k1.memberships != k2.memberships {
        problems.push("tables differ between identical study seeds".into());
    }
    let md = k1.to_markdown();
    if md.lines().count() != 2 + k1.rows.len() {
        problems.push("markdown rows".into());
    }
    verdict(
        problems.is_empty(),
        format!(
            "k-fold sigma (%) {}; seed sigma (%) {}{}",
            k1.rows.iter().map(|r| format!("{:.1}", r.std * 100.0)).collect::<Vec<_>>().join("/"),
            s1.rows.iter().map(|r| format!("{:.1}", r.std * 100.0)).collect::<Vec<_>>().join("/"),
            if problems.is_empty() { String::new() } else { format!("; problems: {problems:?}") }
        ),
    )
}

// --------------------------------------------------------------------- main

fn main() {
    let only: Option<Vec<usize>> = std::env::var("NAVBENCH_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |i: usize| only.as_ref().map_or(true, |o| o.contains(&i));
    let names = [
        "token/metric oracles",
        "gradient fidelity",
        "determinism",
        "noise calibration",
        "learnability sanity",
        "random-data trend",
        "noise-robustness trend",
        "sparse vs dense",
        "subset machinery",
        "zero-token equivalence",
        "study protocols",
    ];
    let mut grid: Option<Grid> = None;
    let mut failed = 0;
    for (i, name) in names.iter().enumerate() {
        let id = i + 1;
        if !wanted(id) {
            continue;
        }
        let t = Instant::now();
        if (5..=8).contains(&id) && grid.is_none() {
            match Grid::new() {
                Ok(g) => grid = Some(g),
                Err(e) => {
                    failed += 1;
                    println!("FAIL [{id:>2}] {name}: error: {e}");
                    continue;
                }
            }
        }
        let out = match (id, grid.as_mut()) {
            (1, _) => criterion_1(),
            (2, _) => criterion_2(),
            (3, _) => criterion_3(),
            (4, _) => criterion_4(),
            (5, Some(g)) => criterion_5(g),
            (6, Some(g)) => criterion_6(g),
            (7, Some(g)) => criterion_7(g),
            (8, Some(g)) => criterion_8(g),
            (9, _) => criterion_9(),
            (10, _) => criterion_10(),
            _ => criterion_11(),
        };
        let secs = t.elapsed().as_secs_f64();
        match out {
            Ok(v) => {
                if !v.pass {
                    failed += 1;
                }
                println!("{} [{id:>2}] {name} ({secs:.1}s): {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
            }
            Err(e) => {
                failed += 1;
                println!("FAIL [{id:>2}] {name} ({secs:.1}s): error: {e}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
