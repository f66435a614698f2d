//! Teacher-forced behavior-cloning loss and batch gradients.

use rayon::prelude::*;

use super::model::{candidate_matrix, Policy};
use super::tape::{Tape, Var};
use super::tensor::Matrix;
use crate::conditioning::ConditioningMode;
use crate::envgen::{distance_to_goal, observe, Episode, NavGraph};
use crate::error::{Error, Result};
use crate::rollout::Trajectory;

/// A logged trajectory with the world and episode it was recorded in.
#[derive(Debug, Clone, Copy)]
pub struct TrainExample<'a> {
    pub graph: &'a NavGraph,
    pub episode: &'a Episode,
    pub trajectory: &'a Trajectory,
}

/// Builds the summed per-step cross-entropy on `tape`.
fn build_loss(policy: &Policy, tape: &mut Tape, ex: &TrainExample, mode: &ConditioningMode) -> Result<Var> {
    let traj = ex.trajectory;
    let dists: Vec<f64> = traj.steps.iter().map(|s| s.dist_to_goal).collect();
    let final_dist = distance_to_goal(ex.graph, &traj.final_state, &ex.episode.goal_coords);
    let tokens = mode.train_tokens(&dists, final_dist)?;
    let enc = policy.encode(tape, &ex.episode.instruction)?;
    let mut q = enc.q0;
    let mut terms = Vec::with_capacity(traj.len());
    for (step, token) in traj.steps.iter().zip(tokens) {
        let obs = observe(ex.graph, &step.state);
        if step.action >= obs.len() {
            return Err(Error::ActionOutOfRange { action: step.action, candidates: obs.len() });
        }
        let c = tape.input(candidate_matrix(&obs));
        let (logits, q_next) = policy.step(tape, &enc, q, c, token)?;
        terms.push(tape.cross_entropy(logits, step.action));
        q = q_next;
    }
    if terms.is_empty() {
        return Ok(tape.input(Matrix::zeros(1, 1)));
    }
    Ok(tape.sum(&terms))
}

/// Forward-only trajectory loss.
pub fn trajectory_loss(policy: &Policy, ex: &TrainExample, mode: &ConditioningMode) -> Result<f64> {
    let mut tape = Tape::new();
    let root = build_loss(policy, &mut tape, ex, mode)?;
    Ok(tape.scalar(root))
}

/// Loss and dense parameter gradients for one trajectory.
pub fn trajectory_gradients(policy: &Policy, ex: &TrainExample, mode: &ConditioningMode) -> Result<(f64, Vec<Matrix>)> {
    let mut tape = Tape::new();
    let root = build_loss(policy, &mut tape, ex, mode)?;
    let loss = tape.scalar(root);
    let sparse = tape.backward(root);
    let mut grads = policy.params.zeros_like();
    for (g, s) in grads.iter_mut().zip(sparse) {
        if let Some(s) = s {
            *g = s;
        }
    }
    Ok((loss, grads))
}

#[derive(Debug, Clone)]
pub struct BatchGradients {
    /// Mean over trajectories of the summed per-step loss.
    pub loss: f64,
    pub grads: Vec<Matrix>,
}

/// Mean loss and gradient over a batch. Per-trajectory results are reduced
/// in batch order, so the outcome does not depend on the worker count.
pub fn compute_gradients(policy: &Policy, batch: &[TrainExample], mode: &ConditioningMode) -> Result<BatchGradients> {
    if batch.is_empty() {
        return Err(Error::InvalidParam("empty batch".into()));
    }
    let parts: Vec<Result<(f64, Vec<Matrix>)>> =
        batch.par_iter().map(|ex| trajectory_gradients(policy, ex, mode)).collect();
    let inv = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut grads = policy.params.zeros_like();
    for (ex, part) in batch.iter().zip(parts) {
        let (l, g) = part?;
        if !l.is_finite() {
            return Err(Error::NonFinite {
                iteration: 0,
                detail: format!("episode {} produced loss {l}", ex.episode.episode_id),
            });
        }
        loss += l;
        for (acc, gi) in grads.iter_mut().zip(&g) {
            acc.add_assign(gi);
        }
    }
    for g in &mut grads {
        g.data.iter_mut().for_each(|x| *x *= inv);
    }
    if let Some(name) = grads
        .iter()
        .zip(&policy.params.names)
        .find(|(g, _)| g.data.iter().any(|x| !x.is_finite()))
        .map(|(_, n)| n)
    {
        return Err(Error::NonFinite { iteration: 0, detail: format!("non-finite gradient in {name}") });
    }
    Ok(BatchGradients { loss: loss * inv, grads })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conditioning::{ConditioningKind, ConditioningMode};
    use crate::envgen::{feature_dim, make_splits, SplitConfig, SplitSpec, Vocabulary};
    use crate::policy::model::{Injection, ModelConfig};
    use crate::rollout::{generate_trajectory, BehaviorKind, BehaviorSpec};

    fn fixture() -> (SplitSpec, Vec<Trajectory>) {
        let spec = make_splits(&SplitConfig {
            n_train_envs: 2,
            n_unseen_envs: 1,
            episodes_per_env: 6,
            val_episodes_per_env: 2,
            ..Default::default()
        })
        .unwrap();
        let b = BehaviorSpec::new(BehaviorKind::Noisy(0.3), 5);
        let trajs = spec.train.iter().map(|e| generate_trajectory(spec.world(e.env_id), e, &b, 12)).collect();
        (spec, trajs)
    }

    fn config(spec: &SplitSpec, injection: Injection, mode: ConditioningMode) -> ModelConfig {
        let l = spec.config.world.landmark_vocab as usize;
        let mut c = ModelConfig::new(Vocabulary { landmarks: l }.size(), feature_dim(l), mode);
        c.d_model = 8;
        c.n_heads = 2;
        c.ffn_hidden = 8;
        c.injection = injection;
        c.max_instr_len = 64;
        c
    }

    fn examples<'a>(spec: &'a SplitSpec, trajs: &'a [Trajectory]) -> Vec<TrainExample<'a>> {
        spec.train
            .iter()
            .zip(trajs)
            .map(|(e, t)| TrainExample { graph: spec.world(e.env_id), episode: e, trajectory: t })
            .collect()
    }

    #[test]
    fn zero_scale_gives_uniform_loss() {
        let (spec, trajs) = fixture();
        let mut p = Policy::new(config(&spec, Injection::Add, ConditioningMode::new(ConditioningKind::RewardSparse))).unwrap();
        let i = p.params.names.iter().position(|n| n == "out.scale").unwrap();
        p.params.tensors[i].data[0] = 0.0;
        for ex in examples(&spec, &trajs) {
            let expected: f64 =
                ex.trajectory.steps.iter().map(|s| (observe(ex.graph, &s.state).len() as f64).ln()).sum();
            let got = trajectory_loss(&p, &ex, &p.config.conditioning.clone()).unwrap();
            assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        }
    }

    #[test]
    fn zero_tokens_match_unconditioned_forward() {
        let (spec, trajs) = fixture();
        let cond = Policy::new(config(&spec, Injection::Add, ConditioningMode::new(ConditioningKind::RewardSparse))).unwrap();
        let plain_cfg = config(&spec, Injection::Add, ConditioningMode::new(ConditioningKind::Unconditioned));
        let plain = Policy::from_params(plain_cfg, cond.params.clone()).unwrap();
        for ex in examples(&spec, &trajs) {
            let mut t1 = Tape::new();
            let mut t2 = Tape::new();
            let e1 = cond.encode(&mut t1, &ex.episode.instruction).unwrap();
            let e2 = plain.encode(&mut t2, &ex.episode.instruction).unwrap();
            let (mut q1, mut q2) = (e1.q0, e2.q0);
            for s in &ex.trajectory.steps {
                let m = candidate_matrix(&observe(ex.graph, &s.state));
                let c1 = t1.input(m.clone());
                let c2 = t2.input(m);
                let (l1, n1) = cond.step(&mut t1, &e1, q1, c1, Some(0.0)).unwrap();
                let (l2, n2) = plain.step(&mut t2, &e2, q2, c2, None).unwrap();
                assert_eq!(t1.value(l1), t2.value(l2));
                q1 = n1;
                q2 = n2;
            }
        }
    }

    fn fd_check(injection: Injection, mode: ConditioningMode) {
        let (spec, trajs) = fixture();
        let mut cfg = config(&spec, injection, mode);
        cfg.init_seed = 3;
        let p = Policy::new(cfg).unwrap();
        let exs = examples(&spec, &trajs);
        let batch = &exs[..3];
        let g = compute_gradients(&p, batch, &mode).unwrap();
        let loss_at = |q: &Policy| -> f64 {
            batch.iter().map(|ex| trajectory_loss(q, ex, &mode).unwrap()).sum::<f64>() / batch.len() as f64
        };
        let h = 1e-5;
        for (ti, name) in p.params.names.iter().enumerate() {
            let n = p.params.tensors[ti].len();
            for k in [0, n / 2, n - 1] {
                let mut plus = p.clone();
                plus.params.tensors[ti].data[k] += h;
                let mut minus = p.clone();
                minus.params.tensors[ti].data[k] -= h;
                let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
                let an = g.grads[ti].data[k];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-5);
                assert!(rel < 1e-4, "{name}[{k}]: analytic {an} fd {fd} rel {rel}");
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences_add() {
        fd_check(Injection::Add, ConditioningMode::new(ConditioningKind::RewardSparse));
    }

    #[test]
    fn gradients_match_finite_differences_concat() {
        fd_check(Injection::Concat, ConditioningMode::new(ConditioningKind::RewardDense));
    }

    #[test]
    fn gradients_match_finite_differences_learned() {
        fd_check(Injection::AddLearned, ConditioningMode::rtg(crate::conditioning::RtgInit::MaxValLen));
    }

    #[test]
    fn gradients_match_finite_differences_unconditioned() {
        fd_check(Injection::Concat, ConditioningMode::new(ConditioningKind::Unconditioned));
    }

    #[test]
    fn batch_gradients_do_not_depend_on_workers() {
        let (spec, trajs) = fixture();
        let mode = ConditioningMode::new(ConditioningKind::RewardSparse);
        let p = Policy::new(config(&spec, Injection::Concat, mode)).unwrap();
        let exs = examples(&spec, &trajs);
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| compute_gradients(&p, &exs, &mode).unwrap())
        };
        let (a, b) = (run(1), run(4));
        assert_eq!(a.loss.to_bits(), b.loss.to_bits());
        assert_eq!(a.grads, b.grads);
    }

    #[test]
    fn loss_matches_logsumexp_oracle() {
        use crate::policy::model::{encode_instruction, policy_step};
        let (spec, trajs) = fixture();
        let mode = ConditioningMode::new(ConditioningKind::RewardDense);
        let p = Policy::new(config(&spec, Injection::Concat, mode)).unwrap();
        let ex = examples(&spec, &trajs).into_iter().find(|e| e.trajectory.len() >= 2).unwrap();
        let mut two = ex.trajectory.clone();
        two.steps.truncate(2);
        two.final_state = ex.trajectory.steps.get(2).map_or(ex.trajectory.final_state, |s| s.state);
        let ex2 = TrainExample { trajectory: &two, ..ex };
        let d: Vec<f64> = two.steps.iter().map(|s| s.dist_to_goal).collect();
        let d_end = distance_to_goal(ex.graph, &two.final_state, &ex.episode.goal_coords);
        let tokens = [d[0] - d[1], d[1] - d_end];
        let instr = encode_instruction(&p, &ex.episode.instruction).unwrap();
        let mut q = instr.q0.clone();
        let mut expected = 0.0;
        for (s, tok) in two.steps.iter().zip(tokens) {
            let out = policy_step(&p, &instr, &q, &observe(ex.graph, &s.state), Some(tok)).unwrap();
            let m = out.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + out.logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
            expected += lse - out.logits[s.action];
            q = out.q_next;
        }
        let got = trajectory_loss(&p, &ex2, &mode).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn confident_correct_logits_have_vanishing_loss_and_gradient() {
        let mut tape = Tape::new();
        let logits = tape.param(0, &Matrix::row_vector(vec![0.0, 40.0, 0.0]));
        let l = tape.cross_entropy(logits, 1);
        assert!(tape.scalar(l) <= 1e-6);
        let g = tape.backward(l);
        assert!(g[0].as_ref().unwrap().squared_norm().sqrt() <= 1e-6);
    }

    #[test]
    fn gradients_are_repeatable() {
        let (spec, trajs) = fixture();
        let mode = ConditioningMode::new(ConditioningKind::RewardSparse);
        let p = Policy::new(config(&spec, Injection::AddLearned, mode)).unwrap();
        let exs = examples(&spec, &trajs);
        let a = compute_gradients(&p, &exs, &mode).unwrap();
        let b = compute_gradients(&p, &exs, &mode).unwrap();
        assert_eq!(a.grads, b.grads);
        assert!(compute_gradients(&p, &[], &mode).is_err());
    }

    #[test]
    fn action_out_of_range_is_rejected() {
        let (spec, mut trajs) = fixture();
        trajs[0].steps[0].action = 99;
        let mode = ConditioningMode::new(ConditioningKind::Unconditioned);
        let p = Policy::new(config(&spec, Injection::Add, mode)).unwrap();
        let exs = examples(&spec, &trajs);
        assert!(matches!(compute_gradients(&p, &exs, &mode), Err(Error::ActionOutOfRange { action: 99, .. })));
    }
}
