//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters are not
//! copied onto the tape; they are referenced by index into the slice the tape
//! was created with, and [`Tape::backward`] returns their gradients in the same
//! order.
//!
//! The op set is deliberately small and fused where a composite would be slow
//! (layer norm, multi-head attention, softmax cross-entropy).

use crate::tensor::{gemm_into, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

const LN_EPS: f64 = 1e-5;
const NORM_EPS: f64 = 1e-12;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Batch layout for [`Tape::attention`]: `batch` sequences, each padded to
/// `seq_len` rows, stacked along the row axis.
#[derive(Clone, Debug)]
pub struct AttnLayout {
    pub batch: usize,
    pub seq_len: usize,
    pub heads: usize,
    /// `batch * seq_len` flags; `false` keys receive no attention.
    pub key_valid: Vec<bool>,
}

/// Source of one output row of [`Tape::rows`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RowRef {
    pub source: usize,
    pub row: usize,
}

enum Op {
    Constant,
    Input,
    Param(usize),
    MatMul { a: Var, b: Var, trans_b: bool },
    AddBias { x: Var, bias: Var },
    Add { a: Var, b: Var },
    Scale { x: Var, s: f64 },
    Gelu { x: Var },
    LayerNorm { x: Var, gain: Var, bias: Var, stats: Vec<(f64, f64)> },
    Attention { qkv: Var, layout: AttnLayout, probs: Vec<f64> },
    Gather { table: Var, ids: Vec<usize> },
    Rows { sources: Vec<Var>, index: Vec<RowRef> },
    MaskRows { x: Var, fill: Var, mask: Vec<bool> },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Tensor },
    BceWithLogits { logits: Var, labels: Vec<f64> },
    L2NormalizeRows { x: Var, norms: Vec<f64> },
    Transpose { x: Var },
    WeightedSum { parts: Vec<(Var, f64)> },
}

struct Node {
    value: Option<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// One recorded forward pass.
pub struct Tape<'p> {
    params: &'p [Tensor],
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    params: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a node; `None` when the loss does not depend on it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].as_ref()
    }

    /// Per-parameter gradients in parameter order; `None` for parameters the
    /// loss never touched.
    pub fn params(&self) -> &[Option<Tensor>] {
        &self.params
    }

    pub fn into_params(self) -> Vec<Option<Tensor>> {
        self.params
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [Tensor]) -> Self {
        Self { params, nodes: Vec::with_capacity(256) }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(i)) => &self.params[*i],
            _ => unreachable!("node without value"),
        }
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value: Some(value), op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant, false)
    }

    /// A non-parameter leaf whose gradient is tracked.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, true)
    }

    pub fn param(&mut self, index: usize) -> Var {
        assert!(index < self.params.len(), "parameter index {index} out of range");
        self.nodes.push(Node { value: None, op: Op::Param(index), needs_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// `a @ b`, or `a @ b^T` when `trans_b`.
    pub fn matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Var {
        let out = self.value(a).matmul(self.value(b), false, trans_b);
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::MatMul { a, b, trans_b }, ng)
    }

    /// Row-broadcast addition of a `[1, n]` bias.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let bv = self.value(bias);
        assert_eq!(bv.rows(), 1);
        assert_eq!(bv.cols(), xv.cols());
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let ng = self.needs(x) || self.needs(bias);
        self.push(out, Op::AddBias { x, bias }, ng)
    }

    /// `x @ w + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let h = self.matmul(x, w, false);
        self.add_bias(h, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Add { a, b }, ng)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let mut out = self.value(x).clone();
        out.scale_in_place(s);
        let ng = self.needs(x);
        self.push(out, Op::Scale { x, s }, ng)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            let x = *v;
            let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
            *v = 0.5 * x * (1.0 + t);
        }
        let ng = self.needs(x);
        self.push(out, Op::Gelu { x }, ng)
    }

    /// Per-row layer normalization with `[1, n]` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let n = xv.cols();
        let mut out = Tensor::zeros(xv.rows(), n);
        let mut stats = Vec::with_capacity(xv.rows());
        for r in 0..xv.rows() {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let rstd = 1.0 / (var + LN_EPS).sqrt();
            for (c, o) in out.row_mut(r).iter_mut().enumerate() {
                *o = (row[c] - mean) * rstd * g[c] + b[c];
            }
            stats.push((mean, rstd));
        }
        let ng = self.needs(x) || self.needs(gain) || self.needs(bias);
        self.push(out, Op::LayerNorm { x, gain, bias, stats }, ng)
    }

    /// Bidirectional multi-head scaled dot-product attention.
    ///
    /// `qkv` is `[batch * seq_len, 3 * d]` with query, key and value blocks
    /// side by side; the result is `[batch * seq_len, d]`.
    pub fn attention(&mut self, qkv: Var, layout: AttnLayout) -> Var {
        let xv = self.value(qkv);
        let AttnLayout { batch, seq_len: l, heads, .. } = layout;
        assert_eq!(xv.rows(), batch * l);
        assert_eq!(layout.key_valid.len(), batch * l);
        assert_eq!(xv.cols() % 3, 0);
        let d = xv.cols() / 3;
        assert_eq!(d % heads, 0);
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Tensor::zeros(batch * l, d);
        let mut probs = vec![0.0; batch * heads * l * l];
        let mut scores = vec![0.0; l];
        for b in 0..batch {
            for h in 0..heads {
                let qo = h * dh;
                let ko = d + h * dh;
                let vo = 2 * d + h * dh;
                for i in 0..l {
                    let q = &xv.row(b * l + i)[qo..qo + dh];
                    let mut max = f64::NEG_INFINITY;
                    for j in 0..l {
                        if !layout.key_valid[b * l + j] {
                            continue;
                        }
                        let k = &xv.row(b * l + j)[ko..ko + dh];
                        let s = dot(q, k) * scale;
                        scores[j] = s;
                        max = max.max(s);
                    }
                    let p = &mut probs[((b * heads + h) * l + i) * l..][..l];
                    let mut z = 0.0;
                    for j in 0..l {
                        if layout.key_valid[b * l + j] {
                            let e = (scores[j] - max).exp();
                            p[j] = e;
                            z += e;
                        }
                    }
                    let orow = &mut out.row_mut(b * l + i)[qo..qo + dh];
                    for j in 0..l {
                        if p[j] != 0.0 {
                            p[j] /= z;
                            let v = &xv.row(b * l + j)[vo..vo + dh];
                            for (o, vv) in orow.iter_mut().zip(v) {
                                *o += p[j] * vv;
                            }
                        }
                    }
                }
            }
        }
        let ng = self.needs(qkv);
        self.push(out, Op::Attention { qkv, layout, probs }, ng)
    }

    /// Embedding lookup: row `i` of the result is `table[ids[i]]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let tv = self.value(table);
        let mut out = Tensor::zeros(ids.len(), tv.cols());
        for (r, &id) in ids.iter().enumerate() {
            assert!(id < tv.rows(), "gather id {id} out of range {}", tv.rows());
            out.row_mut(r).copy_from_slice(tv.row(id));
        }
        let ng = self.needs(table);
        self.push(out, Op::Gather { table, ids: ids.to_vec() }, ng)
    }

    /// Assembles a new matrix row by row from rows of `sources`.
    /// Covers concatenation, selection and interleaving.
    pub fn rows(&mut self, sources: &[Var], index: &[RowRef]) -> Var {
        let cols = self.value(sources[0]).cols();
        for s in sources {
            assert_eq!(self.value(*s).cols(), cols, "row sources must share a width");
        }
        let mut out = Tensor::zeros(index.len(), cols);
        for (r, ref_) in index.iter().enumerate() {
            out.row_mut(r).copy_from_slice(self.value(sources[ref_.source]).row(ref_.row));
        }
        let ng = sources.iter().any(|s| self.needs(*s));
        self.push(out, Op::Rows { sources: sources.to_vec(), index: index.to_vec() }, ng)
    }

    /// Selects rows of a single source.
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Var {
        let index: Vec<RowRef> = rows.iter().map(|&row| RowRef { source: 0, row }).collect();
        self.rows(&[x], &index)
    }

    /// Replaces rows flagged in `mask` with the single row of `fill`.
    pub fn mask_rows(&mut self, x: Var, fill: Var, mask: &[bool]) -> Var {
        let mut out = self.value(x).clone();
        assert_eq!(mask.len(), out.rows());
        let f = self.value(fill);
        assert_eq!(f.shape(), (1, out.cols()));
        for (r, &m) in mask.iter().enumerate() {
            if m {
                out.row_mut(r).copy_from_slice(f.data());
            }
        }
        let ng = self.needs(x) || self.needs(fill);
        self.push(out, Op::MaskRows { x, fill, mask: mask.to_vec() }, ng)
    }

    /// Mean softmax cross-entropy of each row of `logits` against `targets`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.rows(), targets.len());
        assert!(!targets.is_empty(), "cross-entropy over zero rows");
        let mut probs = Tensor::zeros(lv.rows(), lv.cols());
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            assert!(t < lv.cols(), "target {t} out of range {}", lv.cols());
            let row = lv.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (p, &x) in probs.row_mut(r).iter_mut().zip(row) {
                *p = (x - max).exp();
                z += *p;
            }
            for p in probs.row_mut(r) {
                *p /= z;
            }
            total += -(row[t] - max - z.ln());
        }
        let n = targets.len() as f64;
        let ng = self.needs(logits);
        self.push(Tensor::scalar(total / n), Op::CrossEntropy { logits, targets: targets.to_vec(), probs }, ng)
    }

    /// Mean binary cross-entropy of a `[n, 1]` logit column against 0/1 labels.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &[f64]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.shape(), (labels.len(), 1));
        assert!(!labels.is_empty());
        let total: f64 = lv
            .data()
            .iter()
            .zip(labels)
            .map(|(&x, &y)| x.max(0.0) - x * y + (-x.abs()).exp().ln_1p())
            .sum();
        let n = labels.len() as f64;
        let ng = self.needs(logits);
        self.push(Tensor::scalar(total / n), Op::BceWithLogits { logits, labels: labels.to_vec() }, ng)
    }

    pub fn l2_normalize_rows(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        let mut norms = Vec::with_capacity(out.rows());
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_EPS);
            row.iter_mut().for_each(|v| *v /= n);
            norms.push(n);
        }
        let ng = self.needs(x);
        self.push(out, Op::L2NormalizeRows { x, norms }, ng)
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let out = self.value(x).transpose();
        let ng = self.needs(x);
        self.push(out, Op::Transpose { x }, ng)
    }

    /// `sum_k w_k * x_k` over same-shaped operands.
    pub fn weighted_sum(&mut self, parts: &[(Var, f64)]) -> Var {
        assert!(!parts.is_empty());
        let mut out = Tensor::zeros(self.value(parts[0].0).rows(), self.value(parts[0].0).cols());
        for &(v, w) in parts {
            for (o, x) in out.data_mut().iter_mut().zip(self.value(v).data()) {
                *o += w * x;
            }
        }
        let ng = parts.iter().any(|(v, _)| self.needs(*v));
        self.push(out, Op::WeightedSum { parts: parts.to_vec() }, ng)
    }

    /// Back-propagates from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward from a non-scalar");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(dy) = grads[idx].take() else { continue };
            self.backprop_node(idx, &dy, &mut grads);
            grads[idx] = Some(dy);
        }
        let mut params: Vec<Option<Tensor>> = (0..self.params.len()).map(|_| None).collect();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Op::Param(p) = node.op {
                if let Some(g) = &grads[idx] {
                    match &mut params[p] {
                        Some(acc) => acc.add_assign(g),
                        slot @ None => *slot = Some(g.clone()),
                    }
                }
            }
        }
        Gradients { nodes: grads, params }
    }

    fn backprop_node(&self, idx: usize, dy: &Tensor, grads: &mut [Option<Tensor>]) {
        match &self.nodes[idx].op {
            Op::Constant | Op::Input | Op::Param(_) => {}
            Op::MatMul { a, b, trans_b } => {
                let av = self.value(*a);
                let bv = self.value(*b);
                if self.needs(*a) {
                    // dA = dY B^T  (or dY B when the forward used B^T)
                    let g = accum_slot(grads, *a, av.rows(), av.cols());
                    gemm_into(dy, false, bv, !trans_b, g, 1.0);
                }
                if self.needs(*b) {
                    let g = accum_slot(grads, *b, bv.rows(), bv.cols());
                    if *trans_b {
                        gemm_into(dy, true, av, false, g, 1.0);
                    } else {
                        gemm_into(av, true, dy, false, g, 1.0);
                    }
                }
            }
            Op::AddBias { x, bias } => {
                if self.needs(*x) {
                    accumulate(grads, *x, dy);
                }
                if self.needs(*bias) {
                    let g = accum_slot(grads, *bias, 1, dy.cols());
                    for r in 0..dy.rows() {
                        for (o, d) in g.data_mut().iter_mut().zip(dy.row(r)) {
                            *o += d;
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                if self.needs(*a) {
                    accumulate(grads, *a, dy);
                }
                if self.needs(*b) {
                    accumulate(grads, *b, dy);
                }
            }
            Op::Scale { x, s } => {
                let mut g = dy.clone();
                g.scale_in_place(*s);
                accumulate(grads, *x, &g);
            }
            Op::Gelu { x } => {
                let xv = self.value(*x);
                let mut g = dy.clone();
                for (gv, &x) in g.data_mut().iter_mut().zip(xv.data()) {
                    let inner = GELU_C * (x + 0.044715 * x * x * x);
                    let t = inner.tanh();
                    let d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
                    *gv *= d;
                }
                accumulate(grads, *x, &g);
            }
            Op::LayerNorm { x, gain, bias, stats } => {
                let xv = self.value(*x);
                let g = self.value(*gain).data();
                let n = xv.cols();
                let mut dx = Tensor::zeros(xv.rows(), n);
                let mut dgain = vec![0.0; n];
                let mut dbias = vec![0.0; n];
                let mut xhat = vec![0.0; n];
                let mut dxhat = vec![0.0; n];
                for r in 0..xv.rows() {
                    let (mean, rstd) = stats[r];
                    let row = xv.row(r);
                    let dyr = dy.row(r);
                    let mut m1 = 0.0;
                    let mut m2 = 0.0;
                    for c in 0..n {
                        xhat[c] = (row[c] - mean) * rstd;
                        dxhat[c] = dyr[c] * g[c];
                        dgain[c] += dyr[c] * xhat[c];
                        dbias[c] += dyr[c];
                        m1 += dxhat[c];
                        m2 += dxhat[c] * xhat[c];
                    }
                    m1 /= n as f64;
                    m2 /= n as f64;
                    for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
                        *o = rstd * (dxhat[c] - m1 - xhat[c] * m2);
                    }
                }
                if self.needs(*x) {
                    accumulate(grads, *x, &dx);
                }
                if self.needs(*gain) {
                    accumulate(grads, *gain, &Tensor::from_vec(1, n, dgain));
                }
                if self.needs(*bias) {
                    accumulate(grads, *bias, &Tensor::from_vec(1, n, dbias));
                }
            }
            Op::Attention { qkv, layout, probs } => {
                let xv = self.value(*qkv);
                let AttnLayout { batch, seq_len: l, heads, .. } = *layout;
                let d = xv.cols() / 3;
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let mut dx = Tensor::zeros(xv.rows(), xv.cols());
                let mut dp = vec![0.0; l];
                for b in 0..batch {
                    for h in 0..heads {
                        let qo = h * dh;
                        let ko = d + h * dh;
                        let vo = 2 * d + h * dh;
                        for i in 0..l {
                            let p = &probs[((b * heads + h) * l + i) * l..][..l];
                            let doi = &dy.row(b * l + i)[qo..qo + dh];
                            let mut pdp = 0.0;
                            for j in 0..l {
                                if p[j] == 0.0 {
                                    dp[j] = 0.0;
                                    continue;
                                }
                                let v = &xv.row(b * l + j)[vo..vo + dh];
                                dp[j] = dot(doi, v);
                                pdp += p[j] * dp[j];
                                // dV_j += P_ij dO_i
                                let dv = &mut dx.row_mut(b * l + j)[vo..vo + dh];
                                for (o, g) in dv.iter_mut().zip(doi) {
                                    *o += p[j] * g;
                                }
                            }
                            for j in 0..l {
                                if p[j] == 0.0 {
                                    continue;
                                }
                                let ds = p[j] * (dp[j] - pdp) * scale;
                                let (qi, kj) = (b * l + i, b * l + j);
                                for c in 0..dh {
                                    let kval = xv.get(kj, ko + c);
                                    let qval = xv.get(qi, qo + c);
                                    dx.data_mut()[qi * 3 * d + qo + c] += ds * kval;
                                    dx.data_mut()[kj * 3 * d + ko + c] += ds * qval;
                                }
                            }
                        }
                    }
                }
                accumulate(grads, *qkv, &dx);
            }
            Op::Gather { table, ids } => {
                let tv = self.value(*table);
                let g = accum_slot(grads, *table, tv.rows(), tv.cols());
                for (r, &id) in ids.iter().enumerate() {
                    for (o, d) in g.row_mut(id).iter_mut().zip(dy.row(r)) {
                        *o += d;
                    }
                }
            }
            Op::Rows { sources, index } => {
                for (r, ref_) in index.iter().enumerate() {
                    let src = sources[ref_.source];
                    if !self.needs(src) {
                        continue;
                    }
                    let sv = self.value(src);
                    let g = accum_slot(grads, src, sv.rows(), sv.cols());
                    for (o, d) in g.row_mut(ref_.row).iter_mut().zip(dy.row(r)) {
                        *o += d;
                    }
                }
            }
            Op::MaskRows { x, fill, mask } => {
                if self.needs(*x) {
                    let mut g = dy.clone();
                    for (r, &m) in mask.iter().enumerate() {
                        if m {
                            g.row_mut(r).fill(0.0);
                        }
                    }
                    accumulate(grads, *x, &g);
                }
                if self.needs(*fill) {
                    let gf = accum_slot(grads, *fill, 1, dy.cols());
                    for (r, &m) in mask.iter().enumerate() {
                        if m {
                            for (o, d) in gf.data_mut().iter_mut().zip(dy.row(r)) {
                                *o += d;
                            }
                        }
                    }
                }
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let up = dy.item() / targets.len() as f64;
                let mut g = probs.clone();
                for (r, &t) in targets.iter().enumerate() {
                    let row = g.row_mut(r);
                    row[t] -= 1.0;
                    row.iter_mut().for_each(|v| *v *= up);
                }
                accumulate(grads, *logits, &g);
            }
            Op::BceWithLogits { logits, labels } => {
                let lv = self.value(*logits);
                let up = dy.item() / labels.len() as f64;
                let data = lv
                    .data()
                    .iter()
                    .zip(labels)
                    .map(|(&x, &y)| (sigmoid(x) - y) * up)
                    .collect();
                accumulate(grads, *logits, &Tensor::from_vec(labels.len(), 1, data));
            }
            Op::L2NormalizeRows { x, norms } => {
                let y = self.nodes[idx].value.as_ref().expect("normalized value");
                let mut g = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let dyr = dy.row(r);
                    let proj = dot(yr, dyr);
                    for (c, o) in g.row_mut(r).iter_mut().enumerate() {
                        *o = (dyr[c] - yr[c] * proj) / norms[r];
                    }
                }
                accumulate(grads, *x, &g);
            }
            Op::Transpose { x } => {
                accumulate(grads, *x, &dy.transpose());
            }
            Op::WeightedSum { parts } => {
                for &(v, w) in parts {
                    if self.needs(v) {
                        let mut g = dy.clone();
                        g.scale_in_place(w);
                        accumulate(grads, v, &g);
                    }
                }
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn accum_slot(grads: &mut [Option<Tensor>], v: Var, rows: usize, cols: usize) -> &mut Tensor {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(rows, cols))
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: &Tensor) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(g),
        slot @ None => *slot = Some(g.clone()),
    }
}
