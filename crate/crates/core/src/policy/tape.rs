//! Reverse-mode differentiation over a linear tape of matrix operations.
//!
//! Every operation appends a node holding its forward value; `backward`
//! walks the tape in reverse and accumulates adjoints. Parameters enter the
//! tape once per tape (cached by id) so that gradients from every use of a
//! weight accumulate into the same node.

use super::tensor::{dot, matmul, matmul_at, matmul_bt, Matrix};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(usize),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    AddScalar(Var),
    Scale(Var, f64),
    MulScalar(Var, Var),
    Softmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Gelu(Var),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    Gather(Var, Vec<usize>),
    MeanRows(Var),
    CrossEntropy { logits: Var, target: usize, probs: Vec<f64> },
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.data[0]
    }

    pub fn input(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Input)
    }

    /// Leaf for parameter `id`; repeated calls return the same node.
    pub fn param(&mut self, id: usize, value: &Matrix) -> Var {
        if self.param_vars.len() <= id {
            self.param_vars.resize(id + 1, None);
        }
        if let Some(v) = self.param_vars[id] {
            return v;
        }
        let v = self.push(value.clone(), Op::Param(id));
        self.param_vars[id] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = matmul(self.value(a), self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let v = matmul_bt(self.value(a), self.value(b));
        self.push(v, Op::MatMulBt(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        self.push(v, Op::Add(a, b))
    }

    /// `a + b` with the single row `b` broadcast over every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let bv = self.value(b);
        assert_eq!(bv.rows, 1);
        assert_eq!(bv.cols, self.value(a).cols);
        let bias = bv.data.clone();
        let mut v = self.value(a).clone();
        for r in 0..v.rows {
            for (x, &bb) in v.row_mut(r).iter_mut().zip(&bias) {
                *x += bb;
            }
        }
        self.push(v, Op::AddRow(a, b))
    }

    /// Adds the constant `c` to every entry.
    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let mut v = self.value(a).clone();
        v.data.iter_mut().for_each(|x| *x += c);
        self.push(v, Op::AddScalar(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let mut v = self.value(a).clone();
        v.data.iter_mut().for_each(|x| *x *= c);
        self.push(v, Op::Scale(a, c))
    }

    /// `a * s` for a 1×1 node `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        let c = self.scalar(s);
        let mut v = self.value(a).clone();
        v.data.iter_mut().for_each(|x| *x *= c);
        self.push(v, Op::MulScalar(a, s))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for r in 0..v.rows {
            softmax_in_place(v.row_mut(r));
        }
        self.push(v, Op::Softmax(a))
    }

    /// Row-wise layer normalization with affine `gain` and `bias` rows.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let g = self.value(gain).data.clone();
        let b = self.value(bias).data.clone();
        let mut xhat = vec![0.0; rows * cols];
        let mut inv_std = vec![0.0; rows];
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            inv_std[r] = inv;
            for c in 0..cols {
                let h = (row[c] - mean) * inv;
                xhat[r * cols + c] = h;
                out.data[r * cols + c] = h * g[c] + b[c];
            }
        }
        self.push(out, Op::LayerNorm { x, gain, bias, xhat, inv_std })
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for x in v.data.iter_mut() {
            let t = (GELU_C * (*x + GELU_K * *x * *x * *x)).tanh();
            *x = 0.5 * *x * (1.0 + t);
        }
        self.push(v, Op::Gelu(a))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.cols, cols, "concat_rows width mismatch");
            data.extend_from_slice(&m.data);
            rows += m.rows;
        }
        self.push(Matrix::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    /// Rows `[start, end)`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let m = self.value(a);
        assert!(start < end && end <= m.rows);
        let v = Matrix::from_vec(end - start, m.cols, m.data[start * m.cols..end * m.cols].to_vec());
        self.push(v, Op::SliceRows(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut v = Matrix::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.rows, rows, "concat_cols height mismatch");
            for r in 0..rows {
                v.data[r * cols + off..r * cols + off + m.cols].copy_from_slice(m.row(r));
            }
            off += m.cols;
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    /// Columns `[start, end)`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let m = self.value(a);
        assert!(start < end && end <= m.cols);
        let mut v = Matrix::zeros(m.rows, end - start);
        for r in 0..m.rows {
            v.row_mut(r).copy_from_slice(&m.row(r)[start..end]);
        }
        self.push(v, Op::SliceCols(a, start))
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut data = Vec::with_capacity(ids.len() * t.cols);
        for &i in ids {
            data.extend_from_slice(t.row(i));
        }
        let v = Matrix::from_vec(ids.len(), t.cols, data);
        self.push(v, Op::Gather(table, ids.to_vec()))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let mut v = Matrix::zeros(1, m.cols);
        for r in 0..m.rows {
            for (o, x) in v.data.iter_mut().zip(m.row(r)) {
                *o += x;
            }
        }
        let n = m.rows as f64;
        v.data.iter_mut().for_each(|x| *x /= n);
        self.push(v, Op::MeanRows(a))
    }

    /// `-log softmax(logits)[target]` for a single-row `logits`.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Var {
        let l = self.value(logits);
        assert_eq!(l.rows, 1);
        assert!(target < l.cols);
        let max = l.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + l.data.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        let loss = lse - l.data[target];
        let probs = l.data.iter().map(|x| (x - lse).exp()).collect();
        self.push(Matrix::from_vec(1, 1, vec![loss]), Op::CrossEntropy { logits, target, probs })
    }

    /// Sum of same-shaped nodes.
    pub fn sum(&mut self, parts: &[Var]) -> Var {
        let mut acc = parts[0];
        for &p in &parts[1..] {
            acc = self.add(acc, p);
        }
        acc
    }

    /// Back-propagates from the scalar `root` and returns adjoints of every
    /// parameter that appears on the tape, indexed by parameter id.
    pub fn backward(&self, root: Var) -> Vec<Option<Matrix>> {
        assert_eq!(self.value(root).shape(), (1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Matrix>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Matrix::filled(1, 1, 1.0));
        let mut param_grads = vec![None; self.param_vars.len()];

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => param_grads[*id] = Some(g),
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    accumulate(&mut grads, *a, matmul_bt(&g, bv));
                    accumulate(&mut grads, *b, matmul_at(av, &g));
                }
                Op::MatMulBt(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    accumulate(&mut grads, *a, matmul(&g, bv));
                    accumulate(&mut grads, *b, matmul_at(&g, av));
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::AddRow(a, b) => {
                    let mut gb = Matrix::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (o, x) in gb.data.iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                    accumulate(&mut grads, *b, gb);
                    accumulate(&mut grads, *a, g);
                }
                Op::AddScalar(a) => accumulate(&mut grads, *a, g),
                Op::Scale(a, c) => {
                    let mut ga = g;
                    ga.data.iter_mut().for_each(|x| *x *= c);
                    accumulate(&mut grads, *a, ga);
                }
                Op::MulScalar(a, s) => {
                    let c = self.scalar(*s);
                    let gs = dot(&g.data, &self.value(*a).data);
                    accumulate(&mut grads, *s, Matrix::filled(1, 1, gs));
                    let mut ga = g;
                    ga.data.iter_mut().for_each(|x| *x *= c);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let mut ga = Matrix::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let s = dot(yr, gr);
                        for ((o, &yy), &gg) in ga.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *o = yy * (gg - s);
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                    let (rows, cols) = g.shape();
                    let gv = &self.value(*gain).data;
                    let mut gx = Matrix::zeros(rows, cols);
                    let mut gg = Matrix::zeros(1, cols);
                    let mut gbias = Matrix::zeros(1, cols);
                    for r in 0..rows {
                        let gr = g.row(r);
                        let hr = &xhat[r * cols..(r + 1) * cols];
                        let mut mean_d = 0.0;
                        let mut mean_dh = 0.0;
                        for c in 0..cols {
                            gg.data[c] += gr[c] * hr[c];
                            gbias.data[c] += gr[c];
                            let d = gr[c] * gv[c];
                            mean_d += d;
                            mean_dh += d * hr[c];
                        }
                        mean_d /= cols as f64;
                        mean_dh /= cols as f64;
                        let out = gx.row_mut(r);
                        for c in 0..cols {
                            let d = gr[c] * gv[c];
                            out[c] = inv_std[r] * (d - mean_d - hr[c] * mean_dh);
                        }
                    }
                    accumulate(&mut grads, *gain, gg);
                    accumulate(&mut grads, *bias, gbias);
                    accumulate(&mut grads, *x, gx);
                }
                Op::Gelu(a) => {
                    let xv = self.value(*a);
                    let mut ga = g;
                    for (o, &x) in ga.data.iter_mut().zip(&xv.data) {
                        let u = GELU_C * (x + GELU_K * x * x * x);
                        let t = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * GELU_K * x * x);
                        *o *= 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let r = self.value(p).rows;
                        let part = Matrix::from_vec(r, g.cols, g.data[off * g.cols..(off + r) * g.cols].to_vec());
                        accumulate(&mut grads, p, part);
                        off += r;
                    }
                }
                Op::SliceRows(a, start) => {
                    let av = self.value(*a);
                    let mut ga = Matrix::zeros(av.rows, av.cols);
                    ga.data[start * av.cols..(start + g.rows) * av.cols].copy_from_slice(&g.data);
                    accumulate(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let c = self.value(p).cols;
                        let mut part = Matrix::zeros(g.rows, c);
                        for r in 0..g.rows {
                            part.row_mut(r).copy_from_slice(&g.row(r)[off..off + c]);
                        }
                        accumulate(&mut grads, p, part);
                        off += c;
                    }
                }
                Op::SliceCols(a, start) => {
                    let av = self.value(*a);
                    let mut ga = Matrix::zeros(av.rows, av.cols);
                    for r in 0..g.rows {
                        ga.row_mut(r)[*start..start + g.cols].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Gather(table, ids) => {
                    let tv = self.value(*table);
                    let mut gt = Matrix::zeros(tv.rows, tv.cols);
                    for (r, &i) in ids.iter().enumerate() {
                        for (o, x) in gt.row_mut(i).iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                    accumulate(&mut grads, *table, gt);
                }
                Op::MeanRows(a) => {
                    let av = self.value(*a);
                    let n = av.rows as f64;
                    let mut ga = Matrix::zeros(av.rows, av.cols);
                    for r in 0..av.rows {
                        for (o, x) in ga.row_mut(r).iter_mut().zip(&g.data) {
                            *o = x / n;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::CrossEntropy { logits, target, probs } => {
                    let scale = g.data[0];
                    let mut gl = Matrix::from_vec(1, probs.len(), probs.iter().map(|p| p * scale).collect());
                    gl.data[*target] -= scale;
                    accumulate(&mut grads, *logits, gl);
                }
            }
        }
        param_grads
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    row.iter_mut().for_each(|x| *x /= sum);
}
