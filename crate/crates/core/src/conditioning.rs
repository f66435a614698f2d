//! Per-step conditioning scalars: reward tokens and returns-to-go.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Default tolerance for the zero branch of the sparse token, in meters.
pub const DEFAULT_ZERO_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConditioningKind {
    Unconditioned,
    RewardDense,
    RewardSparse,
    ReturnToGo,
}

/// Test-time initial value of the returns-to-go token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RtgInit {
    MaxValLen,
    AvgValLen,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditioningMode {
    pub kind: ConditioningKind,
    pub rtg_init: RtgInit,
    pub zero_eps: f64,
}

impl ConditioningMode {
    pub const fn new(kind: ConditioningKind) -> Self {
        ConditioningMode { kind, rtg_init: RtgInit::MaxValLen, zero_eps: DEFAULT_ZERO_EPS }
    }

    pub const fn rtg(init: RtgInit) -> Self {
        ConditioningMode { kind: ConditioningKind::ReturnToGo, rtg_init: init, zero_eps: DEFAULT_ZERO_EPS }
    }

    pub fn is_conditioned(&self) -> bool {
        self.kind != ConditioningKind::Unconditioned
    }

    /// Config spelling: `none | dense | sparse | rtg-max | rtg-avg`.
    pub fn as_str(&self) -> &'static str {
        match (self.kind, self.rtg_init) {
            (ConditioningKind::Unconditioned, _) => "none",
            (ConditioningKind::RewardDense, _) => "dense",
            (ConditioningKind::RewardSparse, _) => "sparse",
            (ConditioningKind::ReturnToGo, RtgInit::MaxValLen) => "rtg-max",
            (ConditioningKind::ReturnToGo, RtgInit::AvgValLen) => "rtg-avg",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => ConditioningMode::new(ConditioningKind::Unconditioned),
            "dense" => ConditioningMode::new(ConditioningKind::RewardDense),
            "sparse" => ConditioningMode::new(ConditioningKind::RewardSparse),
            "rtg-max" => ConditioningMode::rtg(RtgInit::MaxValLen),
            "rtg-avg" => ConditioningMode::rtg(RtgInit::AvgValLen),
            other => return Err(Error::Config(format!("unknown conditioning mode {other:?}"))),
        })
    }

    /// Training-time tokens for a logged trajectory.
    ///
    /// `dists[t]` is the distance to goal before action `t`; `final_dist`
    /// is the distance at the final state. Returns `None` per step for the
    /// unconditioned mode.
    pub fn train_tokens(&self, dists: &[f64], final_dist: f64) -> Result<Vec<Option<f64>>> {
        let next = |t: usize| if t + 1 < dists.len() { dists[t + 1] } else { final_dist };
        (0..dists.len())
            .map(|t| {
                Ok(match self.kind {
                    ConditioningKind::Unconditioned => None,
                    ConditioningKind::RewardDense => Some(dense_train_token(dists[t], next(t))?),
                    ConditioningKind::RewardSparse => Some(sparse_train_token(dists[t], next(t), self.zero_eps)?),
                    ConditioningKind::ReturnToGo => Some(rtg_train_token(dists[t])),
                })
            })
            .collect()
    }
}

impl Serialize for ConditioningMode {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for ConditioningMode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        ConditioningMode::parse(&s).map_err(serde::de::Error::custom)
    }
}

fn check(d: f64) -> Result<()> {
    if d.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParam(format!("distance must be finite, got {d}")))
    }
}

/// Change in distance to goal; positive when approaching.
pub fn dense_train_token(d_t: f64, d_next: f64) -> Result<f64> {
    check(d_t)?;
    check(d_next)?;
    Ok(d_t - d_next)
}

/// Sign of the change in distance, with `|δ| ≤ zero_eps` mapped to 0.
pub fn sparse_train_token(d_t: f64, d_next: f64, zero_eps: f64) -> Result<f64> {
    let delta = dense_train_token(d_t, d_next)?;
    Ok(if delta > zero_eps {
        1.0
    } else if delta < -zero_eps {
        -1.0
    } else {
        0.0
    })
}

/// Fixed test-time reward token.
pub fn test_token(at_goal: bool) -> f64 {
    if at_goal {
        0.0
    } else {
        1.0
    }
}

pub fn rtg_train_token(d_t: f64) -> f64 {
    d_t
}

/// Reference-path length statistics of an evaluation split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValStats {
    pub max_len: f64,
    pub avg_len: f64,
}

impl ValStats {
    pub fn from_lengths(lengths: impl IntoIterator<Item = f64>) -> Self {
        let (mut max, mut sum, mut n) = (0.0f64, 0.0, 0usize);
        for l in lengths {
            max = max.max(l);
            sum += l;
            n += 1;
        }
        ValStats { max_len: max, avg_len: if n == 0 { 0.0 } else { sum / n as f64 } }
    }
}

/// Test-time returns-to-go token. `prev = None` initializes it.
pub fn rtg_test_token(prev: Option<f64>, traveled: f64, near_goal: bool, stats: &ValStats, init: RtgInit) -> f64 {
    if near_goal {
        return 0.0;
    }
    match prev {
        None => match init {
            RtgInit::MaxValLen => stats.max_len,
            RtgInit::AvgValLen => stats.avg_len,
        },
        Some(p) => (p - traveled).max(0.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn token_examples() {
        assert_eq!(dense_train_token(5.0, 3.0).unwrap(), 2.0);
        assert_eq!(dense_train_token(4.0, 4.0).unwrap(), 0.0);
        assert_eq!(dense_train_token(2.0, 6.0).unwrap(), -4.0);
        assert!(dense_train_token(f64::NAN, 1.0).is_err());
        assert!(sparse_train_token(1.0, f64::INFINITY, DEFAULT_ZERO_EPS).is_err());
        assert_eq!(sparse_train_token(5.0, 3.0, DEFAULT_ZERO_EPS).unwrap(), 1.0);
        assert_eq!(sparse_train_token(3.0, 5.0, DEFAULT_ZERO_EPS).unwrap(), -1.0);
        assert_eq!(sparse_train_token(4.0, 4.0, DEFAULT_ZERO_EPS).unwrap(), 0.0);
        assert_eq!(test_token(false), 1.0);
        assert_eq!(test_token(true), 0.0);
        assert_eq!(rtg_train_token(7.2), 7.2);
        assert_eq!(rtg_train_token(0.0), 0.0);
    }

    #[test]
    fn rtg_examples() {
        let stats = ValStats { max_len: 30.0, avg_len: 12.0 };
        assert_eq!(rtg_test_token(None, 0.0, false, &stats, RtgInit::MaxValLen), 30.0);
        assert_eq!(rtg_test_token(None, 0.0, false, &stats, RtgInit::AvgValLen), 12.0);
        assert_eq!(rtg_test_token(Some(30.0), 2.5, false, &stats, RtgInit::MaxValLen), 27.5);
        assert_eq!(rtg_test_token(Some(1.0), 2.5, false, &stats, RtgInit::MaxValLen), 0.0);
        assert_eq!(rtg_test_token(Some(10.0), 1.0, true, &stats, RtgInit::MaxValLen), 0.0);
        let s = ValStats::from_lengths([10.0, 30.0, 20.0]);
        assert_eq!(s, ValStats { max_len: 30.0, avg_len: 20.0 });
    }

    #[test]
    fn mode_strings() {
        for s in ["none", "dense", "sparse", "rtg-max", "rtg-avg"] {
            assert_eq!(ConditioningMode::parse(s).unwrap().as_str(), s);
        }
        assert!(ConditioningMode::parse("rtg").is_err());
    }

    #[test]
    fn train_tokens_use_next_distance() {
        let dense = ConditioningMode::new(ConditioningKind::RewardDense);
        let t = dense.train_tokens(&[5.0, 3.0, 4.0], 4.0).unwrap();
        assert_eq!(t, vec![Some(2.0), Some(-1.0), Some(0.0)]);
        let none = ConditioningMode::new(ConditioningKind::Unconditioned);
        assert_eq!(none.train_tokens(&[1.0], 1.0).unwrap(), vec![None]);
    }

    proptest! {
        #[test]
        fn sparse_is_sign_of_dense(a in 0.0f64..100.0, b in 0.0f64..100.0) {
            let d = dense_train_token(a, b).unwrap();
            let s = sparse_train_token(a, b, DEFAULT_ZERO_EPS).unwrap();
            if (a - b).abs() > DEFAULT_ZERO_EPS {
                prop_assert_eq!(s, d.signum());
            } else {
                prop_assert_eq!(s, 0.0);
            }
        }

        #[test]
        fn sparse_is_scale_free(a in 0.0f64..100.0, b in 0.0f64..100.0, c in 1e-3f64..1e3) {
            prop_assume!((a - b).abs() > 1e-6);
            prop_assert_eq!(
                sparse_train_token(c * a, c * b, DEFAULT_ZERO_EPS).unwrap(),
                sparse_train_token(a, b, DEFAULT_ZERO_EPS).unwrap()
            );
        }

        #[test]
        fn dense_telescopes(ds in proptest::collection::vec(0.0f64..50.0, 1..40), fin in 0.0f64..50.0) {
            let toks = ConditioningMode::new(ConditioningKind::RewardDense).train_tokens(&ds, fin).unwrap();
            let sum: f64 = toks.iter().map(|t| t.unwrap()).sum();
            prop_assert!((sum - (ds[0] - fin)).abs() <= 1e-9);
        }

        #[test]
        fn rtg_is_non_increasing(steps in proptest::collection::vec(0.0f64..5.0, 1..30)) {
            let stats = ValStats { max_len: 25.0, avg_len: 10.0 };
            let mut tok = rtg_test_token(None, 0.0, false, &stats, RtgInit::MaxValLen);
            for s in steps {
                let next = rtg_test_token(Some(tok), s, false, &stats, RtgInit::MaxValLen);
                prop_assert!(next <= tok && next >= 0.0);
                tok = next;
            }
            prop_assert_eq!(rtg_test_token(Some(tok), 0.0, true, &stats, RtgInit::MaxValLen), 0.0);
        }
    }
}
