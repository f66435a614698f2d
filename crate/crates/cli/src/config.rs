//! Benchmark configuration: TOML sections layered over a scale preset, then
//! `--set section.key=value` overrides.

use std::fs;
use std::path::{Path, PathBuf};

use navbench::conditioning::ConditioningMode;
use navbench::envgen::{SplitConfig, WorldParams};
use navbench::experiment::{ModelSpec, Recipe};
use navbench::policy::{Injection, TrainSchedule};
use navbench::rollout::BehaviorKind;
use navbench::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Tiny,
    Desk,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSection {
    pub num_nodes: usize,
    pub area_side: f64,
    pub connect_radius: f64,
    pub landmark_vocab: usize,
    pub height_levels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    pub seed: u64,
    pub train_envs: usize,
    pub unseen_envs: usize,
    pub episodes_per_env: usize,
    pub val_episodes_per_env: usize,
    pub min_goal_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub seed: u64,
    /// Behavior labels: `expert`, `noisy-<percent>`, `random`, `mixture`.
    pub behaviors: Vec<String>,
    /// Rollout horizon; 0 means three times the longest reference path.
    pub horizon: usize,
    pub random_includes_stop: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub d_model: usize,
    pub heads: usize,
    pub blocks: usize,
    pub instr_blocks: usize,
    pub ffn: usize,
    pub injection: String,
    pub init_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    pub batch: usize,
    pub iters: usize,
    pub seed: u64,
    pub eval_every: usize,
    /// Gradient-norm clip; 0 disables it.
    pub grad_clip: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub success_radius: f64,
    /// 0 uses the dataset horizon.
    pub horizon: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    /// Conditioning modes trained per dataset.
    pub methods: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    /// `none | dense | sparse | rtg-max | rtg-avg`, used by `train` and `eval`.
    pub conditioning: String,
    pub output: OutputSection,
    pub world: WorldSection,
    pub split: SplitSection,
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub bench: BenchSection,
}

impl BenchConfig {
    pub fn preset(scale: Scale) -> Self {
        let desk = BenchConfig {
            conditioning: "sparse".into(),
            output: OutputSection { dir: "navbench-out".into() },
            world: WorldSection { num_nodes: 40, area_side: 30.0, connect_radius: 6.5, landmark_vocab: 16, height_levels: 2 },
            split: SplitSection {
                seed: 1,
                train_envs: 8,
                unseen_envs: 4,
                episodes_per_env: 100,
                val_episodes_per_env: 50,
                min_goal_distance: 3.0,
            },
            data: DataSection {
                seed: 1,
                behaviors: ["expert", "noisy-15", "noisy-30", "random", "mixture"].map(String::from).to_vec(),
                horizon: 0,
                random_includes_stop: true,
            },
            model: ModelSection { d_model: 32, heads: 2, blocks: 2, instr_blocks: 1, ffn: 64, injection: "add".into(), init_seed: 0 },
            train: TrainSection { lr: 1e-3, batch: 16, iters: 3000, seed: 0, eval_every: 750, grad_clip: 5.0 },
            eval: EvalSection { success_radius: 3.0, horizon: 0 },
            bench: BenchSection { methods: ["none", "sparse", "dense", "rtg-max"].map(String::from).to_vec() },
        };
        match scale {
            Scale::Desk => desk,
            Scale::Tiny => BenchConfig {
                world: WorldSection { num_nodes: 24, ..desk.world },
                split: SplitSection { train_envs: 2, unseen_envs: 1, episodes_per_env: 8, val_episodes_per_env: 4, ..desk.split },
                model: ModelSection { d_model: 8, ffn: 16, ..desk.model },
                train: TrainSection { batch: 4, iters: 20, eval_every: 10, ..desk.train },
                ..desk
            },
            Scale::Full => BenchConfig {
                split: SplitSection { train_envs: 16, unseen_envs: 4, episodes_per_env: 250, val_episodes_per_env: 100, ..desk.split },
                model: ModelSection { d_model: 64, ffn: 128, ..desk.model },
                train: TrainSection { lr: 1e-5, batch: 64, iters: 500_000, eval_every: 10_000, ..desk.train },
                ..desk
            },
        }
    }

    /// Preset, then the file (if any), then `key=value` overrides.
    pub fn load(scale: Scale, file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut root = toml::Value::try_from(Self::preset(scale)).expect("preset serializes");
        if let Some(path) = file {
            let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            let doc: toml::Value = text.parse().map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            merge(&mut root, doc, "")?;
        }
        for o in overrides {
            apply_override(&mut root, o)?;
        }
        let cfg: BenchConfig = root.try_into().map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        ConditioningMode::parse(&self.conditioning)?;
        Injection::parse(&self.model.injection)?;
        for b in &self.data.behaviors {
            BehaviorKind::parse_label(b).map_err(|e| Error::Config(e.to_string()))?;
        }
        for m in &self.bench.methods {
            ConditioningMode::parse(m)?;
        }
        self.split_config().world.validate()?;
        self.schedule().validate()?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn output_dir(&self) -> PathBuf {
        PathBuf::from(&self.output.dir)
    }

    pub fn split_config(&self) -> SplitConfig {
        let w = &self.world;
        SplitConfig {
            seed: self.split.seed,
            n_train_envs: self.split.train_envs,
            n_unseen_envs: self.split.unseen_envs,
            episodes_per_env: self.split.episodes_per_env,
            val_episodes_per_env: self.split.val_episodes_per_env,
            world: WorldParams {
                seed: 0,
                num_nodes: w.num_nodes,
                area_side: w.area_side,
                connect_radius: w.connect_radius,
                landmark_vocab: w.landmark_vocab,
                height_levels: w.height_levels,
            },
            min_goal_distance: self.split.min_goal_distance,
        }
    }

    pub fn schedule(&self) -> TrainSchedule {
        let t = &self.train;
        TrainSchedule {
            lr: t.lr,
            batch_size: t.batch,
            iterations: t.iters,
            seed: t.seed,
            eval_every: t.eval_every,
            grad_clip: (t.grad_clip > 0.0).then_some(t.grad_clip),
            ..TrainSchedule::default()
        }
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        let m = &self.model;
        Ok(ModelSpec {
            d_model: m.d_model,
            n_heads: m.heads,
            n_blocks: m.blocks,
            n_instr_blocks: m.instr_blocks,
            ffn_hidden: m.ffn,
            injection: Injection::parse(&m.injection)?,
            init_seed: m.init_seed,
        })
    }

    /// Training/evaluation recipe for `conditioning` with the given horizon.
    pub fn recipe(&self, conditioning: ConditioningMode, horizon: usize) -> Result<Recipe> {
        Ok(Recipe {
            model: self.model_spec()?,
            schedule: self.schedule(),
            conditioning,
            horizon: if self.eval.horizon > 0 { self.eval.horizon } else { horizon },
            success_radius: self.eval.success_radius,
        })
    }
}

fn merge(dst: &mut toml::Value, src: toml::Value, at: &str) -> Result<()> {
    match (dst, src) {
        (toml::Value::Table(d), toml::Value::Table(s)) => {
            for (k, v) in s {
                let path = if at.is_empty() { k.clone() } else { format!("{at}.{k}") };
                match d.get_mut(&k) {
                    Some(slot) => merge(slot, v, &path)?,
                    None => return Err(Error::Config(format!("unknown config key {path}"))),
                }
            }
            Ok(())
        }
        (d, s) => {
            if std::mem::discriminant(d) != std::mem::discriminant(&s) && !(d.is_float() && s.is_integer()) {
                return Err(Error::Config(format!("{at}: expected {}, found {}", d.type_str(), s.type_str())));
            }
            *d = match (&*d, s) {
                (toml::Value::Float(_), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
                (_, s) => s,
            };
            Ok(())
        }
    }
}

/// Applies `section.key=value`; the value is read as a TOML literal, or as a
/// bare string when it does not parse.
pub fn apply_override(root: &mut toml::Value, kv: &str) -> Result<()> {
    let (key, raw) = kv.split_once('=').ok_or_else(|| Error::Config(format!("override {kv:?} is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut patch = value;
    for part in key.split('.').rev() {
        let mut t = toml::Table::new();
        t.insert(part.to_string(), patch);
        patch = toml::Value::Table(t);
    }
    merge(root, patch, "")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for s in [Scale::Tiny, Scale::Desk, Scale::Full] {
            let c = BenchConfig::preset(s);
            c.validate().unwrap();
            let back: BenchConfig = toml::from_str(&c.to_toml()).unwrap();
            assert_eq!(back, c);
        }
    }

    #[test]
    fn file_and_overrides_layer() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("bench.cfg");
        fs::write(&f, "conditioning = \"dense\"\n[model]\nd_model = 16\ninjection = \"concat\"\n[train]\nlr = 1\n").unwrap();
        let c = BenchConfig::load(Scale::Desk, Some(&f), &["train.iters=7".into(), "model.blocks=1".into(), "conditioning=none".into()])
            .unwrap();
        assert_eq!(c.model.d_model, 16);
        assert_eq!(c.model.injection, "concat");
        assert_eq!(c.train.lr, 1.0);
        assert_eq!(c.train.iters, 7);
        assert_eq!(c.model.blocks, 1);
        assert_eq!(c.conditioning, "none");
        assert_eq!(c.train.batch, 16);
    }

    #[test]
    fn bad_keys_and_values_are_rejected() {
        assert!(BenchConfig::load(Scale::Tiny, None, &["model.width=3".into()]).is_err());
        assert!(BenchConfig::load(Scale::Tiny, None, &["train.iters=abc".into()]).is_err());
        assert!(BenchConfig::load(Scale::Tiny, None, &["conditioning=weird".into()]).is_err());
        assert!(BenchConfig::load(Scale::Tiny, None, &["noequals".into()]).is_err());
        assert!(BenchConfig::load(Scale::Tiny, None, &["data.behaviors=[\"noisy-x\"]".into()]).is_err());
    }
}
