//! Define-by-run tape with reverse-mode differentiation.
//!
//! Every op evaluates eagerly, checks its result for non-finite values and
//! appends a node. Nodes only reference earlier nodes, so the tape order is a
//! topological order and [`Graph::backward`] is a single reverse sweep.

use super::kernels::{self, AttnDims};
use super::Tensor;
use crate::error::{shape_err, Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    RepeatRows(Var, usize),
    TileRows(Var),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    ConcatTokens { a: Var, b: Var, a_per: usize, b_per: usize },
    TakeTokens { x: Var, per: usize, start: usize },
    Normalize { x: Var, rstd: Vec<f64> },
    Softmax(Var),
    Gelu(Var),
    Relu(Var),
    Attention { q: Var, k: Var, v: Var, dims: AttnDims, probs: Vec<f64> },
    GroupNorm { x: Var, group_rows: usize },
    Norm(Var),
    Sum(Var),
    Mean(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    trainable: bool,
}

/// Recorded computation.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node of a graph.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `v`; zero when `v` does not influence the loss.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(t) => t.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if (a.rows(), a.cols()) != (b.rows(), b.cols()) {
        return Err(shape_err!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        ));
    }
    Ok(())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
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

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    /// All trainable leaves, in creation order.
    pub fn params(&self) -> Vec<Var> {
        (0..self.nodes.len())
            .filter(|&i| self.nodes[i].trainable)
            .map(Var)
            .collect()
    }

    fn leaf(&mut self, value: Tensor, trainable: bool) -> Result<Var> {
        let (r, c) = (value.rows(), value.cols());
        let value = value.reshape(vec![r, c])?;
        self.push(value, Op::Leaf, trainable)
    }

    fn push(&mut self, value: Tensor, op: Op, trainable: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("output of {}", op_name(&op))));
        }
        self.nodes.push(Node {
            value,
            op,
            trainable,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((m, k), (k2, n)) = (self.dims(a), self.dims(b));
        if k != k2 {
            return Err(shape_err!("matmul {m}x{k} by {k2}x{n}"));
        }
        let mut out = vec![0.0; m * n];
        kernels::gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            &mut out,
            false,
        );
        self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "add")?;
        let out = self.value(a).add(self.value(b))?;
        self.push(out, Op::Add(a, b), false)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "sub")?;
        let out = self.value(a).sub(self.value(b))?;
        self.push(out, Op::Sub(a, b), false)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "mul")?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        self.push(out, Op::Mul(a, b), false)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.value(a).scale(s);
        self.push(out, Op::Scale(a, s), false)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.value(a).map(|v| v + s);
        self.push(out, Op::AddScalar(a), false)
    }

    fn check_row(&self, x: Var, r: Var, what: &str) -> Result<()> {
        let ((_, n), (rr, rn)) = (self.dims(x), self.dims(r));
        if rr != 1 || rn != n {
            return Err(shape_err!("{what}: row vector 1x{n} expected, got {rr}x{rn}"));
        }
        Ok(())
    }

    /// `x + r` with the `1 x n` row `r` broadcast over every row of `x`.
    pub fn add_row(&mut self, x: Var, r: Var) -> Result<Var> {
        self.check_row(x, r, "add_row")?;
        let mut out = self.value(x).clone();
        let n = out.cols();
        let row = self.value(r).data();
        for chunk in out.data_mut().chunks_exact_mut(n) {
            chunk.iter_mut().zip(row).for_each(|(o, &b)| *o += b);
        }
        self.push(out, Op::AddRow(x, r), false)
    }

    /// `x * r` with the `1 x n` row `r` broadcast over every row of `x`.
    pub fn mul_row(&mut self, x: Var, r: Var) -> Result<Var> {
        self.check_row(x, r, "mul_row")?;
        let mut out = self.value(x).clone();
        let n = out.cols();
        let row = self.value(r).data();
        for chunk in out.data_mut().chunks_exact_mut(n) {
            chunk.iter_mut().zip(row).for_each(|(o, &b)| *o *= b);
        }
        self.push(out, Op::MulRow(x, r), false)
    }

    /// Repeats each row `times` times in place: `[a; b] -> [a; a; b; b]`.
    pub fn repeat_rows(&mut self, x: Var, times: usize) -> Result<Var> {
        let (r, c) = self.dims(x);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(r * times * c);
        for row in src.chunks_exact(c.max(1)).take(r) {
            for _ in 0..times {
                out.extend_from_slice(row);
            }
        }
        self.push(Tensor::matrix(r * times, c, out)?, Op::RepeatRows(x, times), false)
    }

    /// Repeats the whole matrix `times` times: `[a; b] -> [a; b; a; b]`.
    pub fn tile_rows(&mut self, x: Var, times: usize) -> Result<Var> {
        let (r, c) = self.dims(x);
        let src = self.value(x).data();
        let out = src.repeat(times);
        self.push(Tensor::matrix(r * times, c, out)?, Op::TileRows(x), false)
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let out = self.value(x).slice_rows(start, len)?;
        self.push(out, Op::SliceRows(x, start), false)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(x);
        if start + len > c {
            return Err(shape_err!("column slice {start}+{len} out of {c}"));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(r * len);
        for row in src.chunks_exact(c) {
            out.extend_from_slice(&row[start..start + len]);
        }
        self.push(Tensor::matrix(r, len, out)?, Op::SliceCols(x, start), false)
    }

    /// Token-wise concatenation of two packed batches.
    ///
    /// `a` holds `items * a_per` rows and `b` holds `items * b_per` rows; the
    /// result holds, for each item, its `a` tokens followed by its `b` tokens.
    pub fn concat_tokens(&mut self, a: Var, b: Var, a_per: usize, b_per: usize) -> Result<Var> {
        let ((ra, ca), (rb, cb)) = (self.dims(a), self.dims(b));
        if ca != cb {
            return Err(shape_err!("concat_tokens widths {ca} vs {cb}"));
        }
        if a_per == 0 || ra % a_per != 0 {
            return Err(shape_err!("concat_tokens: {ra} rows not a multiple of {a_per}"));
        }
        let items = ra / a_per;
        if rb != items * b_per {
            return Err(shape_err!("concat_tokens: {rb} rows for {items} items of {b_per}"));
        }
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity((ra + rb) * ca);
        for i in 0..items {
            out.extend_from_slice(&av[i * a_per * ca..(i + 1) * a_per * ca]);
            out.extend_from_slice(&bv[i * b_per * ca..(i + 1) * b_per * ca]);
        }
        let t = Tensor::matrix(ra + rb, ca, out)?;
        self.push(t, Op::ConcatTokens { a, b, a_per, b_per }, false)
    }

    /// Inverse of [`Graph::concat_tokens`]: tokens `start..start+len` of every
    /// item in a packed batch with `per` tokens per item.
    pub fn take_tokens(&mut self, x: Var, per: usize, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(x);
        if per == 0 || r % per != 0 || start + len > per {
            return Err(shape_err!("take_tokens {start}+{len} of {per} from {r} rows"));
        }
        let items = r / per;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(items * len * c);
        for i in 0..items {
            let base = (i * per + start) * c;
            out.extend_from_slice(&src[base..base + len * c]);
        }
        let t = Tensor::matrix(items * len, c, out)?;
        self.push(t, Op::TakeTokens { x, per, start }, false)
    }

    /// Per-row standardization (population variance, `eps` inside the root)
    /// without affine parameters.
    pub fn normalize(&mut self, x: Var, eps: f64) -> Result<Var> {
        let (r, c) = self.dims(x);
        if c < 2 {
            return Err(shape_err!("normalize needs at least 2 columns, got {c}"));
        }
        let mut out = vec![0.0; r * c];
        let rstd = kernels::normalize_rows(self.value(x).data(), c, eps, &mut out);
        self.push(Tensor::matrix(r, c, out)?, Op::Normalize { x, rstd }, false)
    }

    /// Layer normalization followed by a per-column affine map.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let n = self.normalize(x, eps)?;
        let s = self.mul_row(n, gain)?;
        self.add_row(s, bias)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.dims(x);
        let mut out = vec![0.0; r * c];
        kernels::softmax_rows(self.value(x).data(), c, &mut out);
        self.push(Tensor::matrix(r, c, out)?, Op::Softmax(x), false)
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(kernels::gelu);
        self.push(out, Op::Gelu(x), false)
    }

    /// `max(x, 0)`; the subgradient at 0 is 0.
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(out, Op::Relu(x), false)
    }

    /// Multi-head softmax attention, scaled by `1/sqrt(head_dim)`, applied
    /// independently to each packed sequence of `seq` tokens.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, seq: usize) -> Result<Var> {
        let (r, c) = self.dims(q);
        if self.dims(k) != (r, c) || self.dims(v) != (r, c) {
            return Err(shape_err!("attention q/k/v shapes differ"));
        }
        if heads == 0 || c % heads != 0 {
            return Err(Error::config(format!("{c} channels not divisible by {heads} heads")));
        }
        if seq == 0 || r % seq != 0 {
            return Err(shape_err!("attention: {r} rows not a multiple of seq {seq}"));
        }
        let dims = AttnDims {
            items: r / seq,
            seq,
            heads,
            dim: c,
        };
        let mut out = vec![0.0; r * c];
        let probs = kernels::attention(
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
            dims,
            &mut out,
        );
        let t = Tensor::matrix(r, c, out)?;
        self.push(t, Op::Attention { q, k, v, dims, probs }, false)
    }

    /// Frobenius norm of each consecutive group of `group_rows` rows; returns
    /// a column with one entry per group.
    pub fn group_norm(&mut self, x: Var, group_rows: usize) -> Result<Var> {
        let (r, c) = self.dims(x);
        if group_rows == 0 || r % group_rows != 0 {
            return Err(shape_err!("group_norm: {r} rows in groups of {group_rows}"));
        }
        let out: Vec<f64> = self
            .value(x)
            .data()
            .chunks_exact(group_rows * c)
            .map(|g| g.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let t = Tensor::matrix(r / group_rows, 1, out)?;
        self.push(t, Op::GroupNorm { x, group_rows }, false)
    }

    /// Frobenius norm of the whole tensor.
    pub fn norm(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).norm());
        self.push(out, Op::Norm(x), false)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x), false)
    }

    /// Mean of all entries.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.is_empty() {
            return Err(shape_err!("mean of empty tensor"));
        }
        let out = Tensor::scalar(t.sum() / t.len() as f64);
        self.push(out, Op::Mean(x), false)
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
        }
        let shapes = self.nodes.iter().map(|n| (n.value.rows(), n.value.cols())).collect();
        // Intermediate gradients are consumed above; only leaves survive.
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let gd = g.data();
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let ((m, k), (_, n)) = (self.dims(*a), self.dims(*b));
                let ga = acc(grads, *a, m, k);
                kernels::gemm(m, n, k, gd, false, self.value(*b).data(), true, ga, true);
                let gb = acc(grads, *b, k, n);
                kernels::gemm(k, m, n, self.value(*a).data(), true, gd, false, gb, true);
            }
            Op::Add(a, b) => {
                add_into(acc_like(grads, *a, y), gd, 1.0);
                add_into(acc_like(grads, *b, y), gd, 1.0);
            }
            Op::Sub(a, b) => {
                add_into(acc_like(grads, *a, y), gd, 1.0);
                add_into(acc_like(grads, *b, y), gd, -1.0);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let ga = acc_like(grads, *a, y);
                for ((o, &gv), &bv) in ga.iter_mut().zip(gd).zip(bv) {
                    *o += gv * bv;
                }
                let gb = acc_like(grads, *b, y);
                for ((o, &gv), &av) in gb.iter_mut().zip(gd).zip(av) {
                    *o += gv * av;
                }
            }
            Op::Scale(a, s) => add_into(acc_like(grads, *a, y), gd, *s),
            Op::AddScalar(a) => add_into(acc_like(grads, *a, y), gd, 1.0),
            Op::AddRow(x, r) => {
                add_into(acc_like(grads, *x, y), gd, 1.0);
                let n = y.cols();
                let gr = acc(grads, *r, 1, n);
                for chunk in gd.chunks_exact(n) {
                    add_into(gr, chunk, 1.0);
                }
            }
            Op::MulRow(x, r) => {
                let n = y.cols();
                let (xv, rv) = (self.value(*x).data(), self.value(*r).data());
                let gx = acc_like(grads, *x, y);
                for (gxc, gc) in gx.chunks_exact_mut(n).zip(gd.chunks_exact(n)) {
                    for ((o, &gv), &rv) in gxc.iter_mut().zip(gc).zip(rv) {
                        *o += gv * rv;
                    }
                }
                let gr = acc(grads, *r, 1, n);
                for (xc, gc) in xv.chunks_exact(n).zip(gd.chunks_exact(n)) {
                    for ((o, &gv), &xv) in gr.iter_mut().zip(gc).zip(xc) {
                        *o += gv * xv;
                    }
                }
            }
            Op::RepeatRows(x, times) => {
                let (r, c) = self.dims(*x);
                let gx = acc(grads, *x, r, c);
                for (row, block) in gx.chunks_exact_mut(c.max(1)).zip(gd.chunks_exact((c * times).max(1))) {
                    for rep in block.chunks_exact(c) {
                        add_into(row, rep, 1.0);
                    }
                }
            }
            Op::TileRows(x) => {
                let (r, c) = self.dims(*x);
                let gx = acc(grads, *x, r, c);
                if r * c > 0 {
                    for tile in gd.chunks_exact(r * c) {
                        add_into(gx, tile, 1.0);
                    }
                }
            }
            Op::SliceRows(x, start) => {
                let (r, c) = self.dims(*x);
                let gx = acc(grads, *x, r, c);
                add_into(&mut gx[start * c..start * c + gd.len()], gd, 1.0);
            }
            Op::SliceCols(x, start) => {
                let (r, c) = self.dims(*x);
                let len = y.cols();
                let gx = acc(grads, *x, r, c);
                for (row, grow) in gx.chunks_exact_mut(c).zip(gd.chunks_exact(len)) {
                    add_into(&mut row[*start..start + len], grow, 1.0);
                }
            }
            Op::ConcatTokens { a, b, a_per, b_per } => {
                let c = y.cols();
                let items = self.dims(*a).0 / a_per;
                let (ra, rb) = (items * a_per, items * b_per);
                {
                    let ga = acc(grads, *a, ra, c);
                    for i in 0..items {
                        let src = (i * (a_per + b_per)) * c;
                        add_into(&mut ga[i * a_per * c..(i + 1) * a_per * c], &gd[src..src + a_per * c], 1.0);
                    }
                }
                let gb = acc(grads, *b, rb, c);
                for i in 0..items {
                    let src = (i * (a_per + b_per) + a_per) * c;
                    add_into(&mut gb[i * b_per * c..(i + 1) * b_per * c], &gd[src..src + b_per * c], 1.0);
                }
            }
            Op::TakeTokens { x, per, start } => {
                let (r, c) = self.dims(*x);
                let len = y.rows() / (r / per);
                let gx = acc(grads, *x, r, c);
                for i in 0..r / per {
                    let dst = (i * per + start) * c;
                    add_into(&mut gx[dst..dst + len * c], &gd[i * len * c..(i + 1) * len * c], 1.0);
                }
            }
            Op::Normalize { x, rstd } => {
                let (r, c) = self.dims(*x);
                let gx = acc(grads, *x, r, c);
                kernels::normalize_rows_backward(y.data(), rstd, gd, c, gx);
            }
            Op::Softmax(x) => {
                let (r, c) = self.dims(*x);
                let gx = acc(grads, *x, r, c);
                kernels::softmax_rows_backward(y.data(), gd, c, gx);
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                let gx = acc_like(grads, *x, y);
                for ((o, &gv), &xv) in gx.iter_mut().zip(gd).zip(xv) {
                    *o += gv * kernels::gelu_grad(xv);
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                let gx = acc_like(grads, *x, y);
                for ((o, &gv), &xv) in gx.iter_mut().zip(gd).zip(xv) {
                    if xv > 0.0 {
                        *o += gv;
                    }
                }
            }
            Op::Attention { q, k, v, dims, probs } => {
                let (r, c) = self.dims(*q);
                let mut gq = vec![0.0; r * c];
                let mut gk = vec![0.0; r * c];
                let mut gv = vec![0.0; r * c];
                kernels::attention_backward(
                    self.value(*q).data(),
                    self.value(*k).data(),
                    self.value(*v).data(),
                    probs,
                    gd,
                    *dims,
                    &mut gq,
                    &mut gk,
                    &mut gv,
                );
                add_into(acc(grads, *q, r, c), &gq, 1.0);
                add_into(acc(grads, *k, r, c), &gk, 1.0);
                add_into(acc(grads, *v, r, c), &gv, 1.0);
            }
            Op::GroupNorm { x, group_rows } => {
                let (r, c) = self.dims(*x);
                let xv = self.value(*x).data();
                let gx = acc(grads, *x, r, c);
                let width = group_rows * c;
                for (((gxc, xc), &norm), &gv) in gx
                    .chunks_exact_mut(width)
                    .zip(xv.chunks_exact(width))
                    .zip(y.data())
                    .zip(gd)
                {
                    if norm > 0.0 {
                        add_into(gxc, xc, gv / norm);
                    }
                }
            }
            Op::Norm(x) => {
                let (r, c) = self.dims(*x);
                let norm = y.data()[0];
                let xv = self.value(*x).data();
                let gx = acc(grads, *x, r, c);
                if norm > 0.0 {
                    add_into(gx, xv, gd[0] / norm);
                }
            }
            Op::Sum(x) => {
                let (r, c) = self.dims(*x);
                acc(grads, *x, r, c).iter_mut().for_each(|o| *o += gd[0]);
            }
            Op::Mean(x) => {
                let (r, c) = self.dims(*x);
                let s = gd[0] / (r * c) as f64;
                acc(grads, *x, r, c).iter_mut().for_each(|o| *o += s);
            }
        }
        Ok(())
    }
}

fn acc(grads: &mut [Option<Tensor>], v: Var, r: usize, c: usize) -> &mut [f64] {
    grads[v.0]
        .get_or_insert_with(|| Tensor::zeros(r, c))
        .data_mut()
}

fn acc_like<'a>(grads: &'a mut [Option<Tensor>], v: Var, like: &Tensor) -> &'a mut [f64] {
    acc(grads, v, like.rows(), like.cols())
}

fn add_into(dst: &mut [f64], src: &[f64], s: f64) {
    for (d, &v) in dst.iter_mut().zip(src) {
        *d += s * v;
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul(..) => "matmul",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Scale(..) => "scale",
        Op::AddScalar(..) => "add_scalar",
        Op::AddRow(..) => "add_row",
        Op::MulRow(..) => "mul_row",
        Op::RepeatRows(..) => "repeat_rows",
        Op::TileRows(..) => "tile_rows",
        Op::SliceRows(..) => "slice_rows",
        Op::SliceCols(..) => "slice_cols",
        Op::ConcatTokens { .. } => "concat_tokens",
        Op::TakeTokens { .. } => "take_tokens",
        Op::Normalize { .. } => "normalize",
        Op::Softmax(..) => "softmax_rows",
        Op::Gelu(..) => "gelu",
        Op::Relu(..) => "relu",
        Op::Attention { .. } => "attention",
        Op::GroupNorm { .. } => "group_norm",
        Op::Norm(..) => "norm",
        Op::Sum(..) => "sum",
        Op::Mean(..) => "mean",
    }
}
