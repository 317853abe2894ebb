//! A small reverse-mode tape over [`Mat`] values.
//!
//! The op set is exactly what the reference transformer, the mapping
//! networks, and the adapter deltas need. Gradients only flow through
//! subgraphs that reach a trainable leaf, so frozen base weights never
//! accumulate gradient buffers.

use alloc::vec;
use alloc::vec::Vec;

use crate::mathutil;
use crate::tensor::Mat;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TRef(pub(crate) usize);

enum Op {
    Leaf,
    MatMul(TRef, TRef),
    /// `A * B^T`
    MatMulTransB(TRef, TRef),
    Transpose(TRef),
    Add(TRef, TRef),
    /// Adds a `1 x c` bias row to every row of `a`.
    AddRowBroadcast(TRef, TRef),
    /// Multiplies every row of `a` elementwise by a `1 x c` vector.
    MulRowBroadcast(TRef, TRef),
    Scale(TRef, f64),
    Tanh(TRef),
    /// Row-wise softmax. Masked (causal) entries have zero probability, so
    /// the backward pass needs no mask of its own.
    SoftmaxRows { a: TRef },
    /// Row-wise layer norm with learnable gain and bias (`1 x c` each).
    LayerNormRows {
        x: TRef,
        gain: TRef,
        bias: TRef,
        eps: f64,
    },
    ConcatRows(Vec<TRef>),
    ConcatCols(Vec<TRef>),
    SliceCols {
        a: TRef,
        start: usize,
    },
    /// Row gather from an embedding table.
    Gather {
        table: TRef,
        ids: Vec<usize>,
    },
    /// Elementwise multiply by a fixed mask (already scaled by 1/(1-p)).
    Dropout {
        a: TRef,
        mask: Vec<f64>,
    },
    Reshape(TRef),
    /// Mean masked next-token NLL; output is `1 x 1`.
    CrossEntropy {
        logits: TRef,
        targets: Vec<usize>,
        mask: Vec<bool>,
    },
    /// Sum of squared entries; output is `1 x 1`.
    SumSquares(TRef),
}

struct Node {
    value: Mat,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
pub struct Grads {
    grads: Vec<Option<Mat>>,
}

impl Grads {
    pub fn get(&self, r: TRef) -> Option<&Mat> {
        self.grads[r.0].as_ref()
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn value(&self, r: TRef) -> &Mat {
        &self.nodes[r.0].value
    }

    fn push(&mut self, value: Mat, op: Op, needs_grad: bool) -> TRef {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        TRef(self.nodes.len() - 1)
    }

    fn ng(&self, r: TRef) -> bool {
        self.nodes[r.0].needs_grad
    }

    /// A trainable leaf: gradients will be collected for it.
    pub fn leaf(&mut self, value: Mat) -> TRef {
        self.push(value, Op::Leaf, true)
    }

    /// A frozen leaf: no gradient flows into it.
    pub fn constant(&mut self, value: Mat) -> TRef {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: TRef, b: TRef) -> TRef {
        let v = self.value(a).matmul(self.value(b));
        let g = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMul(a, b), g)
    }

    pub fn matmul_transb(&mut self, a: TRef, b: TRef) -> TRef {
        let v = self.value(a).matmul_transb(self.value(b));
        let g = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMulTransB(a, b), g)
    }

    pub fn transpose(&mut self, a: TRef) -> TRef {
        let v = self.value(a).transpose();
        let g = self.ng(a);
        self.push(v, Op::Transpose(a), g)
    }

    pub fn add(&mut self, a: TRef, b: TRef) -> TRef {
        let v = self.value(a).add(self.value(b));
        let g = self.ng(a) || self.ng(b);
        self.push(v, Op::Add(a, b), g)
    }

    pub fn add_row_broadcast(&mut self, a: TRef, bias: TRef) -> TRef {
        let (av, bv) = (self.value(a), self.value(bias));
        assert_eq!(bv.rows(), 1);
        assert_eq!(av.cols(), bv.cols());
        let v = Mat::from_fn(av.rows(), av.cols(), |r, c| av.get(r, c) + bv.get(0, c));
        let g = self.ng(a) || self.ng(bias);
        self.push(v, Op::AddRowBroadcast(a, bias), g)
    }

    pub fn mul_row_broadcast(&mut self, a: TRef, scale: TRef) -> TRef {
        let (av, sv) = (self.value(a), self.value(scale));
        assert_eq!(sv.rows(), 1);
        assert_eq!(av.cols(), sv.cols());
        let v = Mat::from_fn(av.rows(), av.cols(), |r, c| av.get(r, c) * sv.get(0, c));
        let g = self.ng(a) || self.ng(scale);
        self.push(v, Op::MulRowBroadcast(a, scale), g)
    }

    pub fn scale(&mut self, a: TRef, c: f64) -> TRef {
        let v = self.value(a).scale(c);
        let g = self.ng(a);
        self.push(v, Op::Scale(a, c), g)
    }

    pub fn tanh(&mut self, a: TRef) -> TRef {
        let v = self.value(a).map(mathutil::tanh);
        let g = self.ng(a);
        self.push(v, Op::Tanh(a), g)
    }

    pub fn softmax_rows(&mut self, a: TRef, causal: bool) -> TRef {
        let av = self.value(a);
        if causal {
            assert_eq!(av.rows(), av.cols(), "causal mask needs a square matrix");
        }
        let mut v = Mat::zeros(av.rows(), av.cols());
        for i in 0..av.rows() {
            let limit = if causal { i + 1 } else { av.cols() };
            let mut m = f64::NEG_INFINITY;
            for j in 0..limit {
                m = m.max(av.get(i, j));
            }
            let mut z = 0.0;
            for j in 0..limit {
                z += mathutil::exp(av.get(i, j) - m);
            }
            for j in 0..limit {
                v.set(i, j, mathutil::exp(av.get(i, j) - m) / z);
            }
        }
        let g = self.ng(a);
        self.push(v, Op::SoftmaxRows { a }, g)
    }

    pub fn layer_norm_rows(&mut self, x: TRef, gain: TRef, bias: TRef, eps: f64) -> TRef {
        let (xv, gv, bv) = (self.value(x), self.value(gain), self.value(bias));
        assert_eq!(gv.rows(), 1);
        assert_eq!(bv.rows(), 1);
        assert_eq!(xv.cols(), gv.cols());
        let n = xv.cols() as f64;
        let mut v = Mat::zeros(xv.rows(), xv.cols());
        for i in 0..xv.rows() {
            let row = xv.row(i);
            let mu = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|&a| (a - mu) * (a - mu)).sum::<f64>() / n;
            let sd = mathutil::sqrt(var + eps);
            for j in 0..xv.cols() {
                v.set(i, j, (row[j] - mu) / sd * gv.get(0, j) + bv.get(0, j));
            }
        }
        let g = self.ng(x) || self.ng(gain) || self.ng(bias);
        self.push(v, Op::LayerNormRows { x, gain, bias, eps }, g)
    }

    pub fn concat_rows(&mut self, parts: &[TRef]) -> TRef {
        assert!(!parts.is_empty());
        let cols = self.value(parts[0]).cols();
        let rows: usize = parts.iter().map(|&p| self.value(p).rows()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.cols(), cols);
            data.extend_from_slice(pv.data());
        }
        let g = parts.iter().any(|&p| self.ng(p));
        self.push(
            Mat::from_vec(rows, cols, data),
            Op::ConcatRows(parts.to_vec()),
            g,
        )
    }

    pub fn concat_cols(&mut self, parts: &[TRef]) -> TRef {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut v = Mat::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.rows(), rows);
            for r in 0..rows {
                for c in 0..pv.cols() {
                    v.set(r, off + c, pv.get(r, c));
                }
            }
            off += pv.cols();
        }
        let g = parts.iter().any(|&p| self.ng(p));
        self.push(v, Op::ConcatCols(parts.to_vec()), g)
    }

    pub fn slice_cols(&mut self, a: TRef, start: usize, len: usize) -> TRef {
        let av = self.value(a);
        assert!(start + len <= av.cols());
        let v = Mat::from_fn(av.rows(), len, |r, c| av.get(r, start + c));
        let g = self.ng(a);
        self.push(v, Op::SliceCols { a, start }, g)
    }

    pub fn gather(&mut self, table: TRef, ids: &[usize]) -> TRef {
        let tv = self.value(table);
        let mut v = Mat::zeros(ids.len(), tv.cols());
        for (r, &id) in ids.iter().enumerate() {
            assert!(id < tv.rows(), "token id out of range");
            for c in 0..tv.cols() {
                v.set(r, c, tv.get(id, c));
            }
        }
        let g = self.ng(table);
        self.push(
            v,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            g,
        )
    }

    /// Inverted dropout with a caller-supplied keep decision per element.
    pub fn dropout(&mut self, a: TRef, p: f64, keep: impl FnMut() -> bool) -> TRef {
        assert!((0.0..1.0).contains(&p));
        let av = self.value(a);
        let scale = 1.0 / (1.0 - p);
        let mut keep = keep;
        let mask: Vec<f64> = (0..av.rows() * av.cols())
            .map(|_| if keep() { scale } else { 0.0 })
            .collect();
        let mut v = av.clone();
        for (x, m) in v.data_mut().iter_mut().zip(&mask) {
            *x *= m;
        }
        let g = self.ng(a);
        self.push(v, Op::Dropout { a, mask }, g)
    }

    pub fn reshape(&mut self, a: TRef, rows: usize, cols: usize) -> TRef {
        let v = self.value(a).reshaped(rows, cols);
        let g = self.ng(a);
        self.push(v, Op::Reshape(a), g)
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits`, averaged over positions where `mask` is true.
    pub fn cross_entropy(&mut self, logits: TRef, targets: &[usize], mask: &[bool]) -> TRef {
        let lv = self.value(logits);
        assert_eq!(lv.rows(), targets.len());
        assert_eq!(lv.rows(), mask.len());
        let count = mask.iter().filter(|&&m| m).count();
        assert!(count > 0, "cross entropy needs at least one unmasked position");
        let mut total = 0.0;
        for i in 0..lv.rows() {
            if !mask[i] {
                continue;
            }
            let row = lv.row(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + mathutil::ln(row.iter().map(|&x| mathutil::exp(x - m)).sum::<f64>());
            total += lse - row[targets[i]];
        }
        let v = Mat::from_vec(1, 1, vec![total / count as f64]);
        let g = self.ng(logits);
        self.push(
            v,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
            },
            g,
        )
    }

    pub fn sum_squares(&mut self, a: TRef) -> TRef {
        let s: f64 = self.value(a).data().iter().map(|&x| x * x).sum();
        let g = self.ng(a);
        self.push(Mat::from_vec(1, 1, vec![s]), Op::SumSquares(a), g)
    }

    /// Reverse pass from a `1 x 1` loss node.
    pub fn backward(&self, loss: TRef) -> Grads {
        let lv = self.value(loss);
        assert_eq!((lv.rows(), lv.cols()), (1, 1), "loss must be scalar");
        let mut grads: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Mat::from_vec(1, 1, vec![1.0]));

        for idx in (0..=loss.0).rev() {
            if grads[idx].is_none() || !self.nodes[idx].needs_grad {
                continue;
            }
            let d = grads[idx].take().unwrap();
            self.backprop_node(idx, &d, &mut grads);
            grads[idx] = Some(d);
        }
        Grads { grads }
    }

    fn accum(&self, grads: &mut [Option<Mat>], r: TRef, g: Mat) {
        if !self.nodes[r.0].needs_grad {
            return;
        }
        match &mut grads[r.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    #[allow(clippy::too_many_lines)]
    fn backprop_node(&self, idx: usize, d: &Mat, grads: &mut [Option<Mat>]) {
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    self.accum(grads, *a, d.matmul_transb(bv));
                }
                if self.ng(*b) {
                    self.accum(grads, *b, av.transa_matmul(d));
                }
            }
            Op::MatMulTransB(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    self.accum(grads, *a, d.matmul(bv));
                }
                if self.ng(*b) {
                    self.accum(grads, *b, d.transa_matmul(av));
                }
            }
            Op::Transpose(a) => {
                self.accum(grads, *a, d.transpose());
            }
            Op::Add(a, b) => {
                if self.ng(*a) {
                    self.accum(grads, *a, d.clone());
                }
                if self.ng(*b) {
                    self.accum(grads, *b, d.clone());
                }
            }
            Op::AddRowBroadcast(a, bias) => {
                if self.ng(*a) {
                    self.accum(grads, *a, d.clone());
                }
                if self.ng(*bias) {
                    let mut gb = Mat::zeros(1, d.cols());
                    for r in 0..d.rows() {
                        for c in 0..d.cols() {
                            gb.set(0, c, gb.get(0, c) + d.get(r, c));
                        }
                    }
                    self.accum(grads, *bias, gb);
                }
            }
            Op::MulRowBroadcast(a, scale) => {
                let (av, sv) = (self.value(*a), self.value(*scale));
                if self.ng(*a) {
                    let ga = Mat::from_fn(d.rows(), d.cols(), |r, c| d.get(r, c) * sv.get(0, c));
                    self.accum(grads, *a, ga);
                }
                if self.ng(*scale) {
                    let mut gs = Mat::zeros(1, d.cols());
                    for r in 0..d.rows() {
                        for c in 0..d.cols() {
                            gs.set(0, c, gs.get(0, c) + d.get(r, c) * av.get(r, c));
                        }
                    }
                    self.accum(grads, *scale, gs);
                }
            }
            Op::Scale(a, c) => {
                self.accum(grads, *a, d.scale(*c));
            }
            Op::Tanh(a) => {
                let y = &self.nodes[idx].value;
                let g = Mat::from_fn(d.rows(), d.cols(), |r, c| {
                    d.get(r, c) * (1.0 - y.get(r, c) * y.get(r, c))
                });
                self.accum(grads, *a, g);
            }
            Op::SoftmaxRows { a } => {
                let p = &self.nodes[idx].value;
                let mut g = Mat::zeros(d.rows(), d.cols());
                for i in 0..d.rows() {
                    let mut dot = 0.0;
                    for j in 0..d.cols() {
                        dot += d.get(i, j) * p.get(i, j);
                    }
                    for j in 0..d.cols() {
                        g.set(i, j, p.get(i, j) * (d.get(i, j) - dot));
                    }
                }
                self.accum(grads, *a, g);
            }
            Op::LayerNormRows { x, gain, bias, eps } => {
                let (xv, gv) = (self.value(*x), self.value(*gain));
                let n = xv.cols() as f64;
                let mut gx = Mat::zeros(xv.rows(), xv.cols());
                let mut gg = Mat::zeros(1, xv.cols());
                let mut gb = Mat::zeros(1, xv.cols());
                for i in 0..xv.rows() {
                    let row = xv.row(i);
                    let mu = row.iter().sum::<f64>() / n;
                    let var = row.iter().map(|&a| (a - mu) * (a - mu)).sum::<f64>() / n;
                    let sd = mathutil::sqrt(var + eps);
                    let xhat: Vec<f64> = row.iter().map(|&a| (a - mu) / sd).collect();
                    let mut mean_dxhat = 0.0;
                    let mut mean_dxhat_xhat = 0.0;
                    for j in 0..xv.cols() {
                        let dy = d.get(i, j);
                        gg.set(0, j, gg.get(0, j) + dy * xhat[j]);
                        gb.set(0, j, gb.get(0, j) + dy);
                        let dxh = dy * gv.get(0, j);
                        mean_dxhat += dxh;
                        mean_dxhat_xhat += dxh * xhat[j];
                    }
                    mean_dxhat /= n;
                    mean_dxhat_xhat /= n;
                    for j in 0..xv.cols() {
                        let dxh = d.get(i, j) * gv.get(0, j);
                        gx.set(i, j, (dxh - mean_dxhat - xhat[j] * mean_dxhat_xhat) / sd);
                    }
                }
                if self.ng(*x) {
                    self.accum(grads, *x, gx);
                }
                if self.ng(*gain) {
                    self.accum(grads, *gain, gg);
                }
                if self.ng(*bias) {
                    self.accum(grads, *bias, gb);
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let pv = self.value(p);
                    if self.ng(p) {
                        let g = Mat::from_fn(pv.rows(), pv.cols(), |r, c| d.get(off + r, c));
                        self.accum(grads, p, g);
                    }
                    off += pv.rows();
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let pv = self.value(p);
                    if self.ng(p) {
                        let g = Mat::from_fn(pv.rows(), pv.cols(), |r, c| d.get(r, off + c));
                        self.accum(grads, p, g);
                    }
                    off += pv.cols();
                }
            }
            Op::SliceCols { a, start } => {
                let av = self.value(*a);
                let mut g = Mat::zeros(av.rows(), av.cols());
                for r in 0..d.rows() {
                    for c in 0..d.cols() {
                        g.set(r, start + c, d.get(r, c));
                    }
                }
                self.accum(grads, *a, g);
            }
            Op::Gather { table, ids } => {
                let tv = self.value(*table);
                let mut g = Mat::zeros(tv.rows(), tv.cols());
                for (r, &id) in ids.iter().enumerate() {
                    for c in 0..tv.cols() {
                        g.set(id, c, g.get(id, c) + d.get(r, c));
                    }
                }
                self.accum(grads, *table, g);
            }
            Op::Dropout { a, mask } => {
                let mut g = d.clone();
                for (x, m) in g.data_mut().iter_mut().zip(mask) {
                    *x *= m;
                }
                self.accum(grads, *a, g);
            }
            Op::Reshape(a) => {
                let av = self.value(*a);
                self.accum(grads, *a, d.reshaped(av.rows(), av.cols()));
            }
            Op::CrossEntropy {
                logits,
                targets,
                mask,
            } => {
                let lv = self.value(*logits);
                let count = mask.iter().filter(|&&m| m).count() as f64;
                let dl = d.get(0, 0) / count;
                let mut g = Mat::zeros(lv.rows(), lv.cols());
                for i in 0..lv.rows() {
                    if !mask[i] {
                        continue;
                    }
                    let row = lv.row(i);
                    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = row.iter().map(|&x| mathutil::exp(x - m)).sum();
                    for j in 0..lv.cols() {
                        let p = mathutil::exp(row[j] - m) / z;
                        let onehot = if j == targets[i] { 1.0 } else { 0.0 };
                        g.set(i, j, dl * (p - onehot));
                    }
                }
                self.accum(grads, *logits, g);
            }
            Op::SumSquares(a) => {
                let av = self.value(*a);
                self.accum(grads, *a, av.scale(2.0 * d.get(0, 0)));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Central finite differences against tape gradients for an arbitrary
    /// scalar-valued graph builder. `build` receives the leaf matrices and
    /// must return the loss node.
    fn check_grads(leaves: &[Mat], build: impl Fn(&mut Tape, &[TRef]) -> TRef, tol: f64) {
        let mut tape = Tape::new();
        let refs: Vec<TRef> = leaves.iter().map(|m| tape.leaf(m.clone())).collect();
        let loss = build(&mut tape, &refs);
        let grads = tape.backward(loss);

        let eps = 1e-5;
        for (li, leaf) in leaves.iter().enumerate() {
            let g = grads.get(refs[li]).expect("leaf should have a gradient");
            for r in 0..leaf.rows() {
                for c in 0..leaf.cols() {
                    let eval = |delta: f64| {
                        let mut perturbed: Vec<Mat> = leaves.to_vec();
                        perturbed[li].set(r, c, leaf.get(r, c) + delta);
                        let mut t = Tape::new();
                        let rs: Vec<TRef> =
                            perturbed.iter().map(|m| t.leaf(m.clone())).collect();
                        let l = build(&mut t, &rs);
                        t.value(l).get(0, 0)
                    };
                    let fd = (eval(eps) - eval(-eps)) / (2.0 * eps);
                    let got = g.get(r, c);
                    let denom = fd.abs().max(got.abs()).max(1e-8);
                    assert!(
                        (fd - got).abs() / denom < tol,
                        "leaf {li} ({r},{c}): fd={fd} tape={got}"
                    );
                }
            }
        }
    }

    fn rand_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
        Mat::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn grad_matmul_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = rand_mat(&mut rng, 3, 4);
        let b = rand_mat(&mut rng, 4, 2);
        check_grads(
            &[a, b],
            |t, r| {
                let c = t.matmul(r[0], r[1]);
                t.sum_squares(c)
            },
            1e-5,
        );
    }

    #[test]
    fn grad_attention_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_mat(&mut rng, 4, 6);
        let wq = rand_mat(&mut rng, 6, 6);
        let wk = rand_mat(&mut rng, 6, 6);
        let wv = rand_mat(&mut rng, 6, 6);
        check_grads(
            &[x, wq, wk, wv],
            |t, r| {
                let q = t.matmul(r[0], r[1]);
                let k = t.matmul(r[0], r[2]);
                let v = t.matmul(r[0], r[3]);
                let s = t.matmul_transb(q, k);
                let s = t.scale(s, 1.0 / 2.449);
                let p = t.softmax_rows(s, true);
                let o = t.matmul(p, v);
                t.sum_squares(o)
            },
            1e-4,
        );
    }

    #[test]
    fn grad_layer_norm_and_tanh() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_mat(&mut rng, 3, 5);
        let g = rand_mat(&mut rng, 1, 5);
        let b = rand_mat(&mut rng, 1, 5);
        check_grads(
            &[x, g, b],
            |t, r| {
                let y = t.layer_norm_rows(r[0], r[1], r[2], 1e-5);
                let y = t.tanh(y);
                t.sum_squares(y)
            },
            1e-4,
        );
    }

    #[test]
    fn grad_cross_entropy_with_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let logits = rand_mat(&mut rng, 4, 5);
        let targets = [0usize, 3, 1, 2];
        let mask = [true, true, false, true];
        check_grads(
            &[logits],
            |t, r| t.cross_entropy(r[0], &targets, &mask),
            1e-5,
        );
    }

    #[test]
    fn grad_gather_concat_slice() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let table = rand_mat(&mut rng, 6, 4);
        let extra = rand_mat(&mut rng, 2, 4);
        check_grads(
            &[table, extra],
            |t, r| {
                let e = t.gather(r[0], &[1, 3, 3, 0]);
                let cat = t.concat_rows(&[r[1], e]);
                let s = t.slice_cols(cat, 1, 2);
                t.sum_squares(s)
            },
            1e-5,
        );
    }

    #[test]
    fn grad_row_broadcast_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = rand_mat(&mut rng, 3, 4);
        let bias = rand_mat(&mut rng, 1, 4);
        let scale = rand_mat(&mut rng, 1, 4);
        check_grads(
            &[x, bias, scale],
            |t, r| {
                let y = t.add_row_broadcast(r[0], r[1]);
                let y = t.mul_row_broadcast(y, r[2]);
                t.sum_squares(y)
            },
            1e-5,
        );
    }

    #[test]
    fn frozen_leaves_get_no_gradient() {
        let mut tape = Tape::new();
        let a = tape.constant(Mat::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        let b = tape.leaf(Mat::from_vec(2, 2, vec![0.5, 0.1, 0.2, 0.3]));
        let c = tape.matmul(a, b);
        let loss = tape.sum_squares(c);
        let grads = tape.backward(loss);
        assert!(grads.get(a).is_none());
        assert!(grads.get(b).is_some());
    }

    #[test]
    fn dropout_masks_and_rescales() {
        let mut tape = Tape::new();
        let a = tape.leaf(Mat::from_vec(1, 4, vec![1.0, 1.0, 1.0, 1.0]));
        let mut toggle = [true, false, true, false].iter().cycle();
        let y = tape.dropout(a, 0.5, || *toggle.next().unwrap());
        assert_eq!(tape.value(y).data(), &[2.0, 0.0, 2.0, 0.0]);
    }
}
