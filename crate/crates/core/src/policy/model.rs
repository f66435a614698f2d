//! Conditional attention policy with a recurrent state token.
//!
//! Per decision step the state token and the candidate tokens form one
//! sequence. Each block injects the conditioning scalar into the state token,
//! cross-attends over the instruction features, injects again, then runs
//! self-attention and a feed-forward layer. Action logits are scaled dot
//! products between the final state token and the final candidate tokens;
//! the final state token is carried to the next step.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::tensor::Matrix;
use crate::conditioning::ConditioningMode;
use crate::envgen::Observation;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Injection {
    /// `q + token`, broadcast over every coordinate.
    Add,
    /// `[q, token·w + b] W + c` with a quarter-width token embedding.
    Concat,
    /// `q + token·w` with a learned direction `w` initialized to ones.
    AddLearned,
}

impl Injection {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "add" => Ok(Injection::Add),
            "concat" => Ok(Injection::Concat),
            "add-learned" => Ok(Injection::AddLearned),
            other => Err(Error::Config(format!("unknown injection {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_blocks: usize,
    pub n_instr_blocks: usize,
    pub ffn_hidden: usize,
    pub vocab: usize,
    pub feat_dim: usize,
    pub max_instr_len: usize,
    pub injection: Injection,
    pub conditioning: ConditioningMode,
    pub init_seed: u64,
}

impl ModelConfig {
    pub fn new(vocab: usize, feat_dim: usize, conditioning: ConditioningMode) -> Self {
        ModelConfig {
            d_model: 32,
            n_heads: 2,
            n_blocks: 2,
            n_instr_blocks: 1,
            ffn_hidden: 64,
            vocab,
            feat_dim,
            max_instr_len: 128,
            injection: Injection::Add,
            conditioning,
            init_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParam(m));
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad(format!("d_model {} must be a positive multiple of n_heads {}", self.d_model, self.n_heads));
        }
        if self.injection == Injection::Concat && self.d_model % 4 != 0 {
            return bad(format!("concat injection needs d_model divisible by 4, got {}", self.d_model));
        }
        if self.n_blocks == 0 || self.vocab == 0 || self.feat_dim == 0 || self.max_instr_len == 0 || self.ffn_hidden == 0 {
            return bad("block count, vocab, feature width, ffn width and max instruction length must be positive".into());
        }
        Ok(())
    }
}

/// Named parameter tensors in a fixed layout order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParameters {
    pub names: Vec<String>,
    pub tensors: Vec<Matrix>,
}

impl PolicyParameters {
    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Matrix::len).sum()
    }

    pub fn zeros_like(&self) -> Vec<Matrix> {
        self.tensors.iter().map(|t| Matrix::zeros(t.rows, t.cols)).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|x| x.is_finite()))
    }
}

#[derive(Debug, Clone, Copy)]
enum Init {
    /// Uniform in ±1/√fan_in with fan_in = rows.
    Uniform,
    /// Uniform in ±1 for embedding tables (one-hot input).
    Table,
    Zeros,
    Ones,
}

#[derive(Debug, Clone, Copy)]
struct Attn {
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    g: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct Ffn {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone, Copy)]
struct EncoderBlock {
    attn: Attn,
    ln1: Norm,
    ffn: Ffn,
    ln2: Norm,
}

#[derive(Debug, Clone, Copy)]
enum Inject {
    Add,
    Learned { w: usize },
    Concat { wr: usize, br: usize, wc: usize, bc: usize },
}

#[derive(Debug, Clone, Copy)]
struct StepBlock {
    inject_pre: Option<Inject>,
    cross: Attn,
    ln_cross: Norm,
    inject_mid: Option<Inject>,
    selfattn: Attn,
    ln_self: Norm,
    ffn: Ffn,
    ln_ffn: Norm,
}

#[derive(Debug, Clone)]
struct Layout {
    names: Vec<String>,
    shapes: Vec<(usize, usize)>,
    inits: Vec<Init>,
    embed: usize,
    pos: usize,
    encoder: Vec<EncoderBlock>,
    q0_w: usize,
    q0_b: usize,
    cand_w: usize,
    cand_b: usize,
    blocks: Vec<StepBlock>,
    out_scale: usize,
}

struct LayoutBuilder {
    names: Vec<String>,
    shapes: Vec<(usize, usize)>,
    inits: Vec<Init>,
}

impl LayoutBuilder {
    fn add(&mut self, name: String, rows: usize, cols: usize, init: Init) -> usize {
        self.names.push(name);
        self.shapes.push((rows, cols));
        self.inits.push(init);
        self.names.len() - 1
    }

    fn attn(&mut self, prefix: &str, d: usize) -> Attn {
        Attn {
            wq: self.add(format!("{prefix}.wq"), d, d, Init::Uniform),
            bq: self.add(format!("{prefix}.bq"), 1, d, Init::Zeros),
            wk: self.add(format!("{prefix}.wk"), d, d, Init::Uniform),
            bk: self.add(format!("{prefix}.bk"), 1, d, Init::Zeros),
            wv: self.add(format!("{prefix}.wv"), d, d, Init::Uniform),
            bv: self.add(format!("{prefix}.bv"), 1, d, Init::Zeros),
            wo: self.add(format!("{prefix}.wo"), d, d, Init::Uniform),
            bo: self.add(format!("{prefix}.bo"), 1, d, Init::Zeros),
        }
    }

    fn norm(&mut self, prefix: &str, d: usize) -> Norm {
        Norm {
            g: self.add(format!("{prefix}.gain"), 1, d, Init::Ones),
            b: self.add(format!("{prefix}.bias"), 1, d, Init::Zeros),
        }
    }

    fn ffn(&mut self, prefix: &str, d: usize, h: usize) -> Ffn {
        Ffn {
            w1: self.add(format!("{prefix}.w1"), d, h, Init::Uniform),
            b1: self.add(format!("{prefix}.b1"), 1, h, Init::Zeros),
            w2: self.add(format!("{prefix}.w2"), h, d, Init::Uniform),
            b2: self.add(format!("{prefix}.b2"), 1, d, Init::Zeros),
        }
    }

    fn inject(&mut self, prefix: &str, cfg: &ModelConfig) -> Option<Inject> {
        if !cfg.conditioning.is_conditioned() {
            return None;
        }
        let d = cfg.d_model;
        Some(match cfg.injection {
            Injection::Add => Inject::Add,
            Injection::AddLearned => Inject::Learned { w: self.add(format!("{prefix}.w"), 1, d, Init::Ones) },
            Injection::Concat => {
                let q = d / 4;
                Inject::Concat {
                    wr: self.add(format!("{prefix}.reward_w"), 1, q, Init::Uniform),
                    br: self.add(format!("{prefix}.reward_b"), 1, q, Init::Zeros),
                    wc: self.add(format!("{prefix}.restore_w"), d + q, d, Init::Uniform),
                    bc: self.add(format!("{prefix}.restore_b"), 1, d, Init::Zeros),
                }
            }
        })
    }
}

impl Layout {
    fn new(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let mut b = LayoutBuilder { names: vec![], shapes: vec![], inits: vec![] };
        let embed = b.add("embed".into(), cfg.vocab, d, Init::Table);
        let pos = b.add("pos".into(), cfg.max_instr_len, d, Init::Table);
        let encoder = (0..cfg.n_instr_blocks)
            .map(|i| EncoderBlock {
                attn: b.attn(&format!("instr.{i}.attn"), d),
                ln1: b.norm(&format!("instr.{i}.ln1"), d),
                ffn: b.ffn(&format!("instr.{i}.ffn"), d, cfg.ffn_hidden),
                ln2: b.norm(&format!("instr.{i}.ln2"), d),
            })
            .collect();
        let q0_w = b.add("state_init.w".into(), d, d, Init::Uniform);
        let q0_b = b.add("state_init.b".into(), 1, d, Init::Zeros);
        let cand_w = b.add("cand.w".into(), cfg.feat_dim, d, Init::Uniform);
        let cand_b = b.add("cand.b".into(), 1, d, Init::Zeros);
        let blocks = (0..cfg.n_blocks)
            .map(|i| StepBlock {
                inject_pre: b.inject(&format!("block.{i}.inject_pre"), cfg),
                cross: b.attn(&format!("block.{i}.cross"), d),
                ln_cross: b.norm(&format!("block.{i}.ln_cross"), d),
                inject_mid: b.inject(&format!("block.{i}.inject_mid"), cfg),
                selfattn: b.attn(&format!("block.{i}.self"), d),
                ln_self: b.norm(&format!("block.{i}.ln_self"), d),
                ffn: b.ffn(&format!("block.{i}.ffn"), d, cfg.ffn_hidden),
                ln_ffn: b.norm(&format!("block.{i}.ln_ffn"), d),
            })
            .collect();
        let out_scale = b.add("out.scale".into(), 1, 1, Init::Ones);
        Layout {
            names: b.names,
            shapes: b.shapes,
            inits: b.inits,
            embed,
            pos,
            encoder,
            q0_w,
            q0_b,
            cand_w,
            cand_b,
            blocks,
            out_scale,
        }
    }
}

/// Seeded scaled-uniform initialization.
pub fn init_params(config: &ModelConfig) -> Result<PolicyParameters> {
    config.validate()?;
    let layout = Layout::new(config);
    let mut r = rng::stream(config.init_seed, &[rng::tag("init")]);
    let tensors = layout
        .shapes
        .iter()
        .zip(&layout.inits)
        .map(|(&(rows, cols), init)| match init {
            Init::Zeros => Matrix::zeros(rows, cols),
            Init::Ones => Matrix::filled(rows, cols, 1.0),
            Init::Uniform | Init::Table => {
                let bound = match init {
                    Init::Uniform => 1.0 / (rows as f64).sqrt(),
                    _ => 1.0,
                };
                Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| r.gen_range(-bound..bound)).collect())
            }
        })
        .collect();
    Ok(PolicyParameters { names: layout.names, tensors })
}

/// Tape-resident instruction encoding for one episode.
#[derive(Debug, Clone)]
pub struct EncodedInstruction {
    pub features: Var,
    pub q0: Var,
    /// Cross-attention keys and values per step block.
    kv: Vec<(Var, Var)>,
}

/// A policy: configuration, parameter layout and parameters.
#[derive(Debug, Clone)]
pub struct Policy {
    pub config: ModelConfig,
    layout: Layout,
    pub params: PolicyParameters,
}

impl PartialEq for Policy {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params == other.params
    }
}

impl Policy {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let params = init_params(&config)?;
        Ok(Policy { layout: Layout::new(&config), config, params })
    }

    /// Wraps existing parameters, checking names and shapes against the layout.
    pub fn from_params(config: ModelConfig, params: PolicyParameters) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.names != layout.names {
            return Err(Error::Shape("parameter names do not match the model layout".into()));
        }
        for ((name, t), shape) in params.names.iter().zip(&params.tensors).zip(&layout.shapes) {
            if t.shape() != *shape || t.data.len() != shape.0 * shape.1 {
                return Err(Error::Shape(format!("{name}: expected {shape:?}, found {:?}", t.shape())));
            }
        }
        Ok(Policy { config, layout, params })
    }

    fn p(&self, tape: &mut Tape, id: usize) -> Var {
        tape.param(id, &self.params.tensors[id])
    }

    fn linear(&self, tape: &mut Tape, x: Var, w: usize, b: usize) -> Var {
        let w = self.p(tape, w);
        let b = self.p(tape, b);
        let h = tape.matmul(x, w);
        tape.add_row(h, b)
    }

    fn norm(&self, tape: &mut Tape, x: Var, n: Norm) -> Var {
        let g = self.p(tape, n.g);
        let b = self.p(tape, n.b);
        tape.layer_norm(x, g, b)
    }

    fn ffn(&self, tape: &mut Tape, x: Var, f: Ffn) -> Var {
        let h = self.linear(tape, x, f.w1, f.b1);
        let h = tape.gelu(h);
        self.linear(tape, h, f.w2, f.b2)
    }

    fn keys_values(&self, tape: &mut Tape, src: Var, a: Attn) -> (Var, Var) {
        (self.linear(tape, src, a.wk, a.bk), self.linear(tape, src, a.wv, a.bv))
    }

    fn attend(&self, tape: &mut Tape, x: Var, kv: (Var, Var), a: Attn) -> Var {
        let heads = self.config.n_heads;
        let dh = self.config.d_model / heads;
        let q = self.linear(tape, x, a.wq, a.bq);
        let scale = 1.0 / (dh as f64).sqrt();
        let outs: Vec<Var> = (0..heads)
            .map(|h| {
                let qh = tape.slice_cols(q, h * dh, (h + 1) * dh);
                let kh = tape.slice_cols(kv.0, h * dh, (h + 1) * dh);
                let vh = tape.slice_cols(kv.1, h * dh, (h + 1) * dh);
                let s = tape.matmul_bt(qh, kh);
                let s = tape.scale(s, scale);
                let w = tape.softmax(s);
                tape.matmul(w, vh)
            })
            .collect();
        let cat = if outs.len() == 1 { outs[0] } else { tape.concat_cols(&outs) };
        self.linear(tape, cat, a.wo, a.bo)
    }

    fn inject(&self, tape: &mut Tape, q: Var, how: Option<Inject>, token: Option<f64>) -> Var {
        let (Some(how), Some(c)) = (how, token) else { return q };
        match how {
            Inject::Add => tape.add_scalar(q, c),
            Inject::Learned { w } => {
                let w = self.p(tape, w);
                let s = tape.scale(w, c);
                tape.add(q, s)
            }
            Inject::Concat { wr, br, wc, bc } => {
                let wr = self.p(tape, wr);
                let br = self.p(tape, br);
                let e = tape.scale(wr, c);
                let e = tape.add(e, br);
                let cat = tape.concat_cols(&[q, e]);
                self.linear(tape, cat, wc, bc)
            }
        }
    }

    /// Encodes instruction tokens; the mean-pooled features give `q0`.
    pub fn encode(&self, tape: &mut Tape, tokens: &[u32]) -> Result<EncodedInstruction> {
        if tokens.is_empty() {
            return Err(Error::InvalidParam("empty instruction".into()));
        }
        if tokens.len() > self.config.max_instr_len {
            return Err(Error::InvalidParam(format!(
                "instruction of {} tokens exceeds max_instr_len {}",
                tokens.len(),
                self.config.max_instr_len
            )));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= self.config.vocab) {
            return Err(Error::InvalidParam(format!("token id {bad} outside vocabulary of {}", self.config.vocab)));
        }
        let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        let embed = self.p(tape, self.layout.embed);
        let pos = self.p(tape, self.layout.pos);
        let e = tape.gather(embed, &ids);
        let pe = tape.slice_rows(pos, 0, ids.len());
        let mut x = tape.add(e, pe);
        for blk in &self.layout.encoder {
            let kv = self.keys_values(tape, x, blk.attn);
            let a = self.attend(tape, x, kv, blk.attn);
            let r = tape.add(x, a);
            x = self.norm(tape, r, blk.ln1);
            let f = self.ffn(tape, x, blk.ffn);
            let r = tape.add(x, f);
            x = self.norm(tape, r, blk.ln2);
        }
        let pooled = tape.mean_rows(x);
        let q0 = self.linear(tape, pooled, self.layout.q0_w, self.layout.q0_b);
        let kv = self.layout.blocks.iter().map(|b| self.keys_values(tape, x, b.cross)).collect();
        Ok(EncodedInstruction { features: x, q0, kv })
    }

    /// One decision step; returns `(logits 1×k, q_next 1×d)`.
    pub fn step(
        &self,
        tape: &mut Tape,
        instr: &EncodedInstruction,
        q_prev: Var,
        candidates: Var,
        token: Option<f64>,
    ) -> Result<(Var, Var)> {
        let d = self.config.d_model;
        if tape.value(q_prev).shape() != (1, d) {
            return Err(Error::Shape(format!("state token must be 1x{d}, got {:?}", tape.value(q_prev).shape())));
        }
        let (k, f) = tape.value(candidates).shape();
        if k == 0 || f != self.config.feat_dim {
            return Err(Error::Shape(format!("candidate features must be kx{}, got {k}x{f}", self.config.feat_dim)));
        }
        let vis = self.linear(tape, candidates, self.layout.cand_w, self.layout.cand_b);
        let mut q = q_prev;
        let mut v = vis;
        for (b, kv) in self.layout.blocks.iter().zip(&instr.kv) {
            let qi = self.inject(tape, q, b.inject_pre, token);
            let h = tape.concat_rows(&[qi, v]);
            let a = self.attend(tape, h, *kv, b.cross);
            let r = tape.add(h, a);
            let h = self.norm(tape, r, b.ln_cross);

            let qh = tape.slice_rows(h, 0, 1);
            let vh = tape.slice_rows(h, 1, k + 1);
            let qi = self.inject(tape, qh, b.inject_mid, token);
            let h = tape.concat_rows(&[qi, vh]);
            let skv = self.keys_values(tape, h, b.selfattn);
            let a = self.attend(tape, h, skv, b.selfattn);
            let r = tape.add(h, a);
            let h = self.norm(tape, r, b.ln_self);
            let fo = self.ffn(tape, h, b.ffn);
            let r = tape.add(h, fo);
            let h = self.norm(tape, r, b.ln_ffn);

            q = tape.slice_rows(h, 0, 1);
            v = tape.slice_rows(h, 1, k + 1);
        }
        let scores = tape.matmul_bt(q, v);
        let scores = tape.scale(scores, 1.0 / (d as f64).sqrt());
        let s = self.p(tape, self.layout.out_scale);
        let logits = tape.mul_scalar(scores, s);
        Ok((logits, q))
    }
}

/// Candidate feature matrix (k × F) for an observation.
pub fn candidate_matrix(obs: &Observation) -> Matrix {
    let f = obs.candidates[0].features.len();
    Matrix::from_vec(obs.len(), f, obs.candidates.iter().flat_map(|c| c.features.iter().copied()).collect())
}

/// Plain-value instruction encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct InstructionFeatures {
    pub tokens: Vec<u32>,
    pub features: Matrix,
    pub q0: Matrix,
}

pub fn encode_instruction(policy: &Policy, tokens: &[u32]) -> Result<InstructionFeatures> {
    let mut tape = Tape::new();
    let enc = policy.encode(&mut tape, tokens)?;
    Ok(InstructionFeatures {
        tokens: tokens.to_vec(),
        features: tape.value(enc.features).clone(),
        q0: tape.value(enc.q0).clone(),
    })
}

/// Everything needed to replay or differentiate one policy step.
#[derive(Debug, Clone)]
pub struct StepTrace {
    pub tape: Tape,
    pub q_prev: Matrix,
    pub candidates: Matrix,
    pub token: Option<f64>,
    pub logits: Var,
    pub q_next: Var,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub logits: Vec<f64>,
    pub q_next: Matrix,
    pub trace: StepTrace,
}

/// Single policy step from plain values; the instruction is re-encoded on
/// the step's own tape so the trace is self-contained.
pub fn policy_step(
    policy: &Policy,
    instr: &InstructionFeatures,
    q_prev: &Matrix,
    obs: &Observation,
    token: Option<f64>,
) -> Result<StepOutput> {
    if obs.is_empty() {
        return Err(Error::InvalidParam("observation without candidates".into()));
    }
    let mut tape = Tape::new();
    let enc = policy.encode(&mut tape, &instr.tokens)?;
    let q = tape.input(q_prev.clone());
    let cands = candidate_matrix(obs);
    let c = tape.input(cands.clone());
    let (logits, q_next) = policy.step(&mut tape, &enc, q, c, token)?;
    Ok(StepOutput {
        logits: tape.value(logits).data.clone(),
        q_next: tape.value(q_next).clone(),
        trace: StepTrace { tape, q_prev: q_prev.clone(), candidates: cands, token, logits, q_next },
    })
}

/// Argmax with ties broken toward the lowest index.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &l) in logits.iter().enumerate() {
        if l > logits[best] {
            best = i;
        }
    }
    best
}

pub fn predict_action(
    policy: &Policy,
    instr: &InstructionFeatures,
    q_prev: &Matrix,
    obs: &Observation,
    token: Option<f64>,
) -> Result<usize> {
    Ok(argmax(&policy_step(policy, instr, q_prev, obs, token)?.logits))
}


#[cfg(test)]
mod behavior_tests {
    use super::*;
    use crate::conditioning::{ConditioningKind, ConditioningMode};
    use crate::envgen::{feature_dim, generate_world, AgentState, WorldParams};
    use proptest::prelude::*;

    fn policy() -> Policy {
        let mut c = ModelConfig::new(26, feature_dim(16), ConditioningMode::new(ConditioningKind::RewardSparse));
        c.d_model = 8;
        c.ffn_hidden = 8;
        c.init_seed = 4;
        Policy::new(c).unwrap()
    }

    #[test]
    fn positions_matter() {
        let p = policy();
        let a = encode_instruction(&p, &[0, 4, 1, 10, 2, 3, 11]).unwrap();
        let b = encode_instruction(&p, &[4, 0, 1, 10, 2, 3, 11]).unwrap();
        assert_eq!(a.features.shape(), (7, 8));
        assert_ne!(a.features, b.features);
    }

    #[test]
    fn trace_replays_exactly_and_softmax_normalizes() {
        let p = policy();
        let g = generate_world(0, &WorldParams::default()).unwrap();
        let instr = encode_instruction(&p, &[0, 4, 1, 12, 2, 3, 13]).unwrap();
        let obs = crate::envgen::observe(&g, &AgentState::start(3));
        let out = policy_step(&p, &instr, &instr.q0, &obs, Some(1.0)).unwrap();
        assert_eq!(out.logits.len(), obs.len());
        let again = policy_step(&p, &instr, &out.trace.q_prev, &obs, out.trace.token).unwrap();
        assert_eq!(out.logits, again.logits);
        assert_eq!(out.trace.tape.value(out.trace.logits).data, out.logits);
        assert_eq!(out.trace.candidates, candidate_matrix(&obs));
        let mut probs = out.logits.clone();
        crate::policy::tape::softmax_in_place(&mut probs);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        assert!(policy_step(&p, &instr, &Matrix::zeros(1, 5), &obs, None).is_err());
    }

    #[test]
    fn state_token_carries_history() {
        let p = policy();
        let g = generate_world(1, &WorldParams::default()).unwrap();
        let instr = encode_instruction(&p, &[0, 4, 1, 12, 2, 3, 13]).unwrap();
        let o = |n| crate::envgen::observe(&g, &AgentState::start(n));
        let unroll = |order: [usize; 3]| {
            let mut q = instr.q0.clone();
            for n in order {
                q = policy_step(&p, &instr, &q, &o(n), Some(1.0)).unwrap().q_next;
            }
            q
        };
        assert_ne!(unroll([1, 2, 5]), unroll([2, 1, 5]));
    }

    proptest! {
        #[test]
        fn argmax_is_shift_invariant(xs in proptest::collection::vec(-5.0f64..5.0, 1..10), c in -100.0f64..100.0) {
            let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
            let a = argmax(&xs);
            let b = argmax(&shifted);
            // Shifting can merge nearly equal values by rounding; it can never reorder distinct ones.
            prop_assert!(a == b || (shifted[a] == shifted[b]));
        }
    }

    #[test]
    fn argmax_examples() {
        assert_eq!(argmax(&[0.1, 2.0, -1.0]), 1);
        assert_eq!(argmax(&[3.0, 1.0, 3.0]), 0);
    }
}
