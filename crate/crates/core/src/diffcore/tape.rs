use std::borrow::Cow;

use super::linalg::{
    gelu_grad_scalar, gelu_scalar, gemm, gemm_into, layernorm_rows_into, softmax_row_in_place,
    MatMut, MatRef,
};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Layout of the stacked attention tensors.
///
/// Token rows are ordered `(sample, position)`; score rows are ordered
/// `(head, sample, position)` with one column per key position.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttnLayout {
    pub heads: usize,
    pub seq: usize,
}

enum Op {
    Leaf,
    Gemm { a: Var, b: Var, ta: bool, tb: bool, alpha: f64 },
    Add(Var, Var),
    Axpy { x: Var, y: Var, alpha: f64 },
    Scale(Var, f64),
    AddTiled { a: Var, b: Var },
    LayerNorm { x: Var, inv_std: Vec<f64> },
    Gelu(Var),
    Softmax { x: Var },
    AttnScores { k: Var, q: Var, layout: AttnLayout, scale: f64 },
    AttnMix { p: Var, v: Var, layout: AttnLayout },
    MeanBlocks { x: Var, block: usize },
    Sum(Var),
    Dot { x: Var, w: Tensor },
    Mse { x: Var, target: Tensor },
    CrossEntropy { x: Var, labels: Vec<usize>, probs: Tensor },
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run reverse-mode tape.
///
/// Nodes are appended in evaluation order, so the node list is always a valid
/// topological order. Leaves may borrow their tensors, which lets parameters
/// enter a pass without being copied.
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
pub struct Grads {
    adj: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.adj.get(v.0).and_then(|a| a.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.adj.get_mut(v.0).and_then(|a| a.take())
    }
}

fn accumulate(slot: &mut Option<Tensor>, delta: Tensor) {
    match slot {
        Some(acc) => {
            for (a, d) in acc.data_mut().iter_mut().zip(delta.data()) {
                *a += d;
            }
        }
        None => *slot = Some(delta),
    }
}

fn accumulate_scaled(slot: &mut Option<Tensor>, delta: &Tensor, s: f64) {
    match slot {
        Some(acc) => {
            for (a, d) in acc.data_mut().iter_mut().zip(delta.data()) {
                *a += s * d;
            }
        }
        None => *slot = Some(delta.scale(s)),
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Cow<'a, Tensor>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Borrowed leaf whose gradient is wanted.
    pub fn param(&mut self, t: &'a Tensor) -> Var {
        self.leaf(Cow::Borrowed(t), true)
    }

    /// Owned leaf whose gradient is wanted.
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.leaf(Cow::Owned(t), true)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(Cow::Owned(t), false)
    }

    /// `alpha · op(a) · op(b)` where `op` optionally transposes.
    pub fn gemm(&mut self, a: Var, ta: bool, b: Var, tb: bool, alpha: f64) -> Result<Var> {
        let out = gemm(alpha, self.value(a), ta, self.value(b), tb)?;
        Ok(self.push(out, Op::Gemm { a, b, ta, tb, alpha }, &[a, b]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.gemm(a, false, b, false, 1.0)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    /// `x + alpha·y`.
    pub fn axpy(&mut self, x: Var, alpha: f64, y: Var) -> Result<Var> {
        let out = self.value(x).zip_map(self.value(y), |p, q| p + alpha * q)?;
        Ok(self.push(out, Op::Axpy { x, y, alpha }, &[x, y]))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out = self.value(x).scale(s);
        self.push(out, Op::Scale(x, s), &[x])
    }

    /// Adds `b` (`r × C`) to every consecutive group of `r` rows of `a`.
    pub fn add_tiled(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ar, ac) = self.value(a).matrix_dims();
        let (br, bc) = self.value(b).matrix_dims();
        if ac != bc || ar % br != 0 {
            return Err(Error::dim(format!("cannot tile {br}×{bc} over {ar}×{ac}")));
        }
        let mut out = self.value(a).clone();
        let bd = self.value(b).data();
        for chunk in out.data_mut().chunks_mut(br * bc) {
            for (o, x) in chunk.iter_mut().zip(bd) {
                *o += x;
            }
        }
        Ok(self.push(out, Op::AddTiled { a, b }, &[a, b]))
    }

    /// Fixed layernorm applied to each row. A single-entry row maps to zero.
    pub fn layernorm_rows(&mut self, x: Var, eps: f64) -> Result<Var> {
        let src = self.value(x);
        if eps <= 0.0 {
            return Err(Error::contract("layernorm eps must be positive"));
        }
        let mut out = Tensor::zeros(src.shape());
        let inv_std = layernorm_rows_into(src, eps, out.data_mut());
        Ok(self.push(out, Op::LayerNorm { x, inv_std }, &[x]))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(gelu_scalar);
        self.push(out, Op::Gelu(x), &[x])
    }

    /// Row softmax over stacked `S × S` blocks, `S` being the column count.
    pub fn softmax_rows(&mut self, x: Var, causal: bool) -> Var {
        let out = super::linalg::softmax_rows(self.value(x), causal);
        self.push(out, Op::Softmax { x }, &[x])
    }

    /// Per-head score blocks `scale · k_s · q_{s'}`.
    ///
    /// `k` and `q` are `(B·S) × (H·N)` with head `h` in columns `hN..(h+1)N`.
    /// Output row `(h·B + b)·S + s`, column `s'`.
    pub fn attn_scores(&mut self, k: Var, q: Var, layout: AttnLayout, scale: f64) -> Result<Var> {
        let (kv, qv) = (self.value(k), self.value(q));
        kv.expect_same_shape(qv)?;
        let (rows, d) = kv.matrix_dims();
        let AttnLayout { heads, seq } = layout;
        if rows % seq != 0 || d % heads != 0 {
            return Err(Error::dim(format!(
                "{rows}×{d} does not split into {heads} heads of sequences of {seq}"
            )));
        }
        let (b, n) = (rows / seq, d / heads);
        let mut out = Tensor::zeros(&[heads * b * seq, seq]);
        for h in 0..heads {
            for s in 0..b {
                let kb = MatRef::block(kv.data(), s * seq * d + h * n, seq, n, d);
                let qb = MatRef::block(qv.data(), s * seq * d + h * n, seq, n, d);
                let dst = MatMut::block(out.data_mut(), (h * b + s) * seq * seq, seq, seq, seq);
                gemm_into(scale, kb, qb.t(), 0.0, dst);
            }
        }
        Ok(self.push(out, Op::AttnScores { k, q, layout, scale }, &[k, q]))
    }

    /// Mixes values with per-head attention weights:
    /// `out[b,s, head h] = Σ_{s'} p[h,b,s,s'] · v[b,s', head h]`.
    pub fn attn_mix(&mut self, p: Var, v: Var, layout: AttnLayout) -> Result<Var> {
        let (pv, vv) = (self.value(p), self.value(v));
        let (rows, d) = vv.matrix_dims();
        let AttnLayout { heads, seq } = layout;
        if rows % seq != 0 || d % heads != 0 || pv.matrix_dims() != (heads * rows, seq) {
            return Err(Error::dim(format!(
                "attention weights {:?} do not match values {rows}×{d}",
                pv.shape()
            )));
        }
        let (b, n) = (rows / seq, d / heads);
        let mut out = Tensor::zeros(&[rows, d]);
        for h in 0..heads {
            for s in 0..b {
                let pb = MatRef::block(pv.data(), (h * b + s) * seq * seq, seq, seq, seq);
                let vb = MatRef::block(vv.data(), s * seq * d + h * n, seq, n, d);
                let dst = MatMut::block(out.data_mut(), s * seq * d + h * n, seq, n, d);
                gemm_into(1.0, pb, vb, 0.0, dst);
            }
        }
        Ok(self.push(out, Op::AttnMix { p, v, layout }, &[p, v]))
    }

    /// Averages each consecutive group of `block` rows.
    pub fn mean_blocks(&mut self, x: Var, block: usize) -> Result<Var> {
        let (r, c) = self.value(x).matrix_dims();
        if block == 0 || r % block != 0 {
            return Err(Error::dim(format!("{r} rows do not split into blocks of {block}")));
        }
        let mut out = Tensor::zeros(&[r / block, c]);
        let w = 1.0 / block as f64;
        for (dst, src) in out
            .data_mut()
            .chunks_mut(c)
            .zip(self.value(x).data().chunks(block * c))
        {
            for row in src.chunks(c) {
                for (o, v) in dst.iter_mut().zip(row) {
                    *o += w * v;
                }
            }
        }
        Ok(self.push(out, Op::MeanBlocks { x, block }, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x), &[x])
    }

    /// `Σ x ⊙ w` for a constant `w` of the same size.
    pub fn dot_const(&mut self, x: Var, w: Tensor) -> Result<Var> {
        let xv = self.value(x);
        if xv.len() != w.len() {
            return Err(Error::dim(format!("{:?} vs weights {:?}", xv.shape(), w.shape())));
        }
        let s = xv.data().iter().zip(w.data()).map(|(a, b)| a * b).sum();
        Ok(self.push(Tensor::scalar(s), Op::Dot { x, w }, &[x]))
    }

    /// `½ Σ (x − target)²` divided by the number of rows.
    pub fn mse(&mut self, x: Var, target: Tensor) -> Result<Var> {
        let xv = self.value(x);
        if xv.len() != target.len() {
            return Err(Error::dim(format!(
                "prediction {:?} vs target {:?}",
                xv.shape(),
                target.shape()
            )));
        }
        let rows = xv.rows() as f64;
        let sq: f64 = xv
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(self.push(Tensor::scalar(0.5 * sq / rows), Op::Mse { x, target }, &[x]))
    }

    /// Softmax cross-entropy against integer labels, averaged over rows.
    pub fn cross_entropy(&mut self, x: Var, labels: Vec<usize>) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = xv.matrix_dims();
        if labels.len() != r {
            return Err(Error::dim(format!("{} labels for {r} rows", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::contract(format!("label {bad} out of range for {c} classes")));
        }
        let mut probs = xv.clone();
        let mut total = 0.0;
        for ((row, src), &l) in probs
            .data_mut()
            .chunks_mut(c)
            .zip(xv.data().chunks(c))
            .zip(&labels)
        {
            let m = src.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = m + src.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            total += lse - src[l];
            softmax_row_in_place(row, c);
        }
        let loss = Tensor::scalar(total / r as f64);
        Ok(self.push(loss, Op::CrossEntropy { x, labels, probs }, &[x]))
    }

    /// Reverse sweep from a scalar node.
    ///
    /// Returns adjoints for every node that depends on a gradient-requiring
    /// leaf, including intermediates.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        if !self.value(loss).is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut adj: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::filled(self.value(loss).shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            self.propagate(node, &g, &mut adj)?;
            adj[i] = Some(g);
        }
        Ok(Grads { adj })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node<'a>, g: &Tensor, adj: &mut [Option<Tensor>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            &Op::Gemm { a, b, ta, tb, alpha } => {
                let (av, bv) = (self.value(a), self.value(b));
                if self.wants(a) {
                    let da = if ta {
                        gemm(alpha, bv, tb, g, true)?
                    } else {
                        gemm(alpha, g, false, bv, !tb)?
                    };
                    accumulate(&mut adj[a.0], da.reshape(av.shape().to_vec())?);
                }
                if self.wants(b) {
                    let db = if tb {
                        gemm(alpha, g, true, av, ta)?
                    } else {
                        gemm(alpha, av, !ta, g, false)?
                    };
                    accumulate(&mut adj[b.0], db.reshape(bv.shape().to_vec())?);
                }
            }
            &Op::Add(a, b) => {
                if self.wants(a) {
                    accumulate_scaled(&mut adj[a.0], g, 1.0);
                }
                if self.wants(b) {
                    accumulate_scaled(&mut adj[b.0], g, 1.0);
                }
            }
            &Op::Axpy { x, y, alpha } => {
                if self.wants(x) {
                    accumulate_scaled(&mut adj[x.0], g, 1.0);
                }
                if self.wants(y) {
                    accumulate_scaled(&mut adj[y.0], g, alpha);
                }
            }
            &Op::Scale(x, s) => accumulate_scaled(&mut adj[x.0], g, s),
            &Op::AddTiled { a, b } => {
                if self.wants(a) {
                    accumulate_scaled(&mut adj[a.0], g, 1.0);
                }
                if self.wants(b) {
                    let bv = self.value(b);
                    let mut db = Tensor::zeros(bv.shape());
                    for chunk in g.data().chunks(bv.len()) {
                        for (o, x) in db.data_mut().iter_mut().zip(chunk) {
                            *o += x;
                        }
                    }
                    accumulate(&mut adj[b.0], db);
                }
            }
            Op::LayerNorm { x, inv_std } => {
                let y = &node.value;
                let d = y.cols();
                let mut dx = Tensor::zeros(y.shape());
                for (((dst, gy), yy), r) in dx
                    .data_mut()
                    .chunks_mut(d)
                    .zip(g.data().chunks(d))
                    .zip(y.data().chunks(d))
                    .zip(inv_std)
                {
                    let mean_g = gy.iter().sum::<f64>() / d as f64;
                    let mean_gy = gy.iter().zip(yy).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    for ((o, a), b) in dst.iter_mut().zip(gy).zip(yy) {
                        *o = r * (a - mean_g - b * mean_gy);
                    }
                }
                accumulate(&mut adj[x.0], dx);
            }
            &Op::Gelu(x) => {
                let dx = self.value(x).zip_map(g, |v, gv| gv * gelu_grad_scalar(v))?;
                accumulate(&mut adj[x.0], dx);
            }
            &Op::Softmax { x } => {
                let p = &node.value;
                let c = p.cols();
                let mut dx = Tensor::zeros(p.shape());
                for ((dst, pr), gr) in dx
                    .data_mut()
                    .chunks_mut(c)
                    .zip(p.data().chunks(c))
                    .zip(g.data().chunks(c))
                {
                    let dot: f64 = pr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((o, pv), gv) in dst.iter_mut().zip(pr).zip(gr) {
                        *o = pv * (gv - dot);
                    }
                }
                accumulate(&mut adj[x.0], dx);
            }
            &Op::AttnScores { k, q, layout, scale } => {
                let (kv, qv) = (self.value(k), self.value(q));
                let (rows, d) = kv.matrix_dims();
                let AttnLayout { heads, seq } = layout;
                let (b, n) = (rows / seq, d / heads);
                let mut dk = self.wants(k).then(|| Tensor::zeros(kv.shape()));
                let mut dq = self.wants(q).then(|| Tensor::zeros(qv.shape()));
                for h in 0..heads {
                    for s in 0..b {
                        let off = s * seq * d + h * n;
                        let gb = MatRef::block(g.data(), (h * b + s) * seq * seq, seq, seq, seq);
                        if let Some(dk) = dk.as_mut() {
                            let qb = MatRef::block(qv.data(), off, seq, n, d);
                            gemm_into(scale, gb, qb, 1.0, MatMut::block(dk.data_mut(), off, seq, n, d));
                        }
                        if let Some(dq) = dq.as_mut() {
                            let kb = MatRef::block(kv.data(), off, seq, n, d);
                            gemm_into(scale, gb.t(), kb, 1.0, MatMut::block(dq.data_mut(), off, seq, n, d));
                        }
                    }
                }
                if let Some(dk) = dk {
                    accumulate(&mut adj[k.0], dk);
                }
                if let Some(dq) = dq {
                    accumulate(&mut adj[q.0], dq);
                }
            }
            &Op::AttnMix { p, v, layout } => {
                let (pv, vv) = (self.value(p), self.value(v));
                let (rows, d) = vv.matrix_dims();
                let AttnLayout { heads, seq } = layout;
                let (b, n) = (rows / seq, d / heads);
                let mut dp = self.wants(p).then(|| Tensor::zeros(pv.shape()));
                let mut dv = self.wants(v).then(|| Tensor::zeros(vv.shape()));
                for h in 0..heads {
                    for s in 0..b {
                        let off = s * seq * d + h * n;
                        let poff = (h * b + s) * seq * seq;
                        let gb = MatRef::block(g.data(), off, seq, n, d);
                        if let Some(dp) = dp.as_mut() {
                            let vb = MatRef::block(vv.data(), off, seq, n, d);
                            gemm_into(1.0, gb, vb.t(), 1.0, MatMut::block(dp.data_mut(), poff, seq, seq, seq));
                        }
                        if let Some(dv) = dv.as_mut() {
                            let pb = MatRef::block(pv.data(), poff, seq, seq, seq);
                            gemm_into(1.0, pb.t(), gb, 1.0, MatMut::block(dv.data_mut(), off, seq, n, d));
                        }
                    }
                }
                if let Some(dp) = dp {
                    accumulate(&mut adj[p.0], dp);
                }
                if let Some(dv) = dv {
                    accumulate(&mut adj[v.0], dv);
                }
            }
            &Op::MeanBlocks { x, block } => {
                let xv = self.value(x);
                let c = xv.cols();
                let w = 1.0 / block as f64;
                let mut dx = Tensor::zeros(xv.shape());
                for (dst, gr) in dx.data_mut().chunks_mut(block * c).zip(g.data().chunks(c)) {
                    for row in dst.chunks_mut(c) {
                        for (o, gv) in row.iter_mut().zip(gr) {
                            *o = w * gv;
                        }
                    }
                }
                accumulate(&mut adj[x.0], dx);
            }
            &Op::Sum(x) => {
                let gv = g.item();
                accumulate(&mut adj[x.0], Tensor::filled(self.value(x).shape(), gv));
            }
            Op::Dot { x, w } => {
                let dx = Tensor::new(self.value(*x).shape().to_vec(), w.scale(g.item()).into_data())?;
                accumulate(&mut adj[x.0], dx);
            }
            Op::Mse { x, target } => {
                let xv = self.value(*x);
                let w = g.item() / xv.rows() as f64;
                let mut dx = xv.clone();
                for (o, t) in dx.data_mut().iter_mut().zip(target.data()) {
                    *o = w * (*o - t);
                }
                accumulate(&mut adj[x.0], dx);
            }
            Op::CrossEntropy { x, labels, probs } => {
                let (r, c) = probs.matrix_dims();
                let w = g.item() / r as f64;
                let mut dx = probs.scale(w);
                for (i, &l) in labels.iter().enumerate() {
                    dx.data_mut()[i * c + l] -= w;
                }
                accumulate(&mut adj[x.0], dx);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::finite_diff_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        Tensor::from_fn(shape, |_| rng.random_range(-2.0..2.0))
    }

    /// Central-difference check of `Σ w ⊙ op(inputs)` with random `w`.
    fn check_op<F>(inputs: Vec<Tensor>, seed: u64, op: F)
    where
        F: for<'t> Fn(&mut Tape<'t>, &[Var]) -> Var,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = {
            let mut tape = Tape::new();
            let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
            let out = op(&mut tape, &vars);
            random(&mut rng, tape.value(out).shape())
        };
        let f = |params: &[Tensor]| -> Result<(f64, Vec<Tensor>)> {
            let mut tape = Tape::new();
            let vars: Vec<Var> = params.iter().map(|t| tape.param(t)).collect();
            let out = op(&mut tape, &vars);
            let loss = tape.dot_const(out, weights.clone())?;
            let mut grads = tape.backward(loss)?;
            let gs = vars.iter().map(|&v| grads.take(v).unwrap()).collect();
            Ok((tape.value(loss).item(), gs))
        };
        let err = finite_diff_check(f, &inputs, 1e-5).unwrap();
        assert!(err < 1e-5, "relative gradient error {err}");
    }

    #[test]
    fn square_has_gradient_six() {
        let x = Tensor::filled(&[1, 1], 3.0);
        let mut tape = Tape::new();
        let v = tape.param(&x);
        let sq = tape.gemm(v, false, v, false, 1.0).unwrap();
        let loss = tape.sum(sq);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(v).unwrap().item(), 6.0);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let x = Tensor::zeros(&[2, 2]);
        let mut tape = Tape::new();
        let v = tape.param(&x);
        assert!(matches!(tape.backward(v), Err(Error::Contract(_))));
    }

    #[test]
    fn layernorm_sum_gradient_is_orthogonal_to_ones() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = random(&mut rng, &[1, 7]);
        let mut tape = Tape::new();
        let v = tape.param(&h);
        let y = tape.layernorm_rows(v, 1e-5).unwrap();
        let loss = tape.sum(y);
        let g = tape.backward(loss).unwrap();
        assert!(g.get(v).unwrap().sum().abs() < 1e-10);

        let mut tape = Tape::new();
        let v = tape.param(&h);
        let y = tape.layernorm_rows(v, 1e-5).unwrap();
        let loss = tape.dot_const(y, random(&mut rng, &[1, 7])).unwrap();
        let g = tape.backward(loss).unwrap();
        assert!(g.get(v).unwrap().sum().abs() < 1e-10);
    }

    #[test]
    fn constants_receive_no_adjoint() {
        let x = Tensor::filled(&[2, 2], 1.0);
        let mut tape = Tape::new();
        let p = tape.param(&x);
        let c = tape.constant(Tensor::filled(&[2, 2], 2.0));
        let s = tape.add(p, c).unwrap();
        let loss = tape.sum(s);
        let g = tape.backward(loss).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(p).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn backward_is_linear_in_the_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = random(&mut rng, &[3, 4]);
        let w1 = random(&mut rng, &[3, 4]);
        let w2 = random(&mut rng, &[3, 4]);
        let grad_of = |ws: &[&Tensor]| {
            let mut tape = Tape::new();
            let v = tape.param(&a);
            let g = tape.gelu(v);
            let mut total = None;
            for w in ws {
                let l = tape.dot_const(g, (*w).clone()).unwrap();
                total = Some(match total {
                    None => l,
                    Some(t) => tape.add(t, l).unwrap(),
                });
            }
            let mut grads = tape.backward(total.unwrap()).unwrap();
            grads.take(v).unwrap()
        };
        let both = grad_of(&[&w1, &w2]);
        let sep = grad_of(&[&w1]).add(&grad_of(&[&w2])).unwrap();
        assert!(both.sub(&sep).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn gemm_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
            let a = random(&mut rng, if ta { &[4, 3] } else { &[3, 4] });
            let b = random(&mut rng, if tb { &[2, 4] } else { &[4, 2] });
            check_op(vec![a, b], 2, move |t, v| t.gemm(v[0], ta, v[1], tb, 0.7).unwrap());
        }
    }

    #[test]
    fn elementwise_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random(&mut rng, &[3, 4]);
        let b = random(&mut rng, &[3, 4]);
        check_op(vec![a.clone(), b.clone()], 6, |t, v| t.add(v[0], v[1]).unwrap());
        check_op(vec![a.clone(), b], 7, |t, v| t.axpy(v[0], -1.3, v[1]).unwrap());
        check_op(vec![a.clone()], 8, |t, v| t.scale(v[0], 2.5));
        check_op(vec![a], 9, |t, v| t.gelu(v[0]));
    }

    #[test]
    fn structural_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a = random(&mut rng, &[6, 4]);
        let pos = random(&mut rng, &[3, 4]);
        check_op(vec![a.clone(), pos], 14, |t, v| t.add_tiled(v[0], v[1]).unwrap());
        check_op(vec![a.clone()], 15, |t, v| t.layernorm_rows(v[0], 1e-5).unwrap());
        check_op(vec![a.clone()], 16, |t, v| t.mean_blocks(v[0], 3).unwrap());
        check_op(vec![a.clone()], 17, |t, v| t.sum(v[0]));
        let s = random(&mut rng, &[6, 3]);
        check_op(vec![s.clone()], 18, |t, v| t.softmax_rows(v[0], false));
        check_op(vec![s], 19, |t, v| t.softmax_rows(v[0], true));
        let target = random(&mut rng, &[6, 4]);
        check_op(vec![a.clone()], 20, move |t, v| t.mse(v[0], target.clone()).unwrap());
        check_op(vec![a], 21, |t, v| t.cross_entropy(v[0], vec![0, 3, 1, 2, 2, 0]).unwrap());
    }

    #[test]
    fn attention_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let layout = AttnLayout { heads: 2, seq: 3 };
        // two samples of three tokens, two heads of width two
        let k = random(&mut rng, &[6, 4]);
        let q = random(&mut rng, &[6, 4]);
        check_op(vec![k, q], 23, move |t, v| t.attn_scores(v[0], v[1], layout, 0.6).unwrap());
        let p = random(&mut rng, &[12, 3]);
        let val = random(&mut rng, &[6, 4]);
        check_op(vec![p, val], 24, move |t, v| t.attn_mix(v[0], v[1], layout).unwrap());
    }

    #[test]
    fn attention_scores_match_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let (heads, seq, b, n) = (3, 4, 2, 2);
        let d = heads * n;
        let k = random(&mut rng, &[b * seq, d]);
        let q = random(&mut rng, &[b * seq, d]);
        let mut tape = Tape::new();
        let (kv, qv) = (tape.constant(k.clone()), tape.constant(q.clone()));
        let a = tape.attn_scores(kv, qv, AttnLayout { heads, seq }, 0.5).unwrap();
        let a = tape.value(a);
        for h in 0..heads {
            for s in 0..b {
                for i in 0..seq {
                    for j in 0..seq {
                        let mut want = 0.0;
                        for c in 0..n {
                            want += k.at(s * seq + i, h * n + c) * q.at(s * seq + j, h * n + c);
                        }
                        let got = a.at((h * b + s) * seq + i, j);
                        assert!((got - 0.5 * want).abs() < 1e-14);
                    }
                }
            }
        }
    }
}
