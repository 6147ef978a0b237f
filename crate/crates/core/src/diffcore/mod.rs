//! Dense 64-bit tensors with define-by-run reverse-mode differentiation.

mod gradcheck;
mod graph;
mod kernels;
mod tensor;

pub use gradcheck::{check_gradients, RELATIVE_ERROR_FLOOR};
pub use graph::{Gradients, Graph, Var};
pub use tensor::{max_abs_diff, max_relative_error, Tensor};

use crate::error::{shape_err, Error, Result};

/// Layer-norm epsilon used throughout the denoiser.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Matrix product without recording a graph.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k, k2, n) = (a.rows(), a.cols(), b.rows(), b.cols());
    if k != k2 {
        return Err(shape_err!("matmul {m}x{k} by {k2}x{n}"));
    }
    let mut out = vec![0.0; m * n];
    kernels::gemm(m, k, n, a.data(), false, b.data(), false, &mut out, false);
    Tensor::matrix(m, n, out)
}

/// Row-wise layer normalization with affine `gain`/`bias` (both `1 x C`).
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    let (r, c) = (x.rows(), x.cols());
    if c < 2 {
        return Err(shape_err!("layer_norm needs at least 2 columns, got {c}"));
    }
    if gain.len() != c || bias.len() != c {
        return Err(shape_err!("layer_norm affine of length {}/{} for {c} columns", gain.len(), bias.len()));
    }
    let mut out = vec![0.0; r * c];
    kernels::normalize_rows(x.data(), c, eps, &mut out);
    for row in out.chunks_exact_mut(c) {
        for ((o, &g), &b) in row.iter_mut().zip(gain.data()).zip(bias.data()) {
            *o = *o * g + b;
        }
    }
    Tensor::matrix(r, c, out)
}

/// Row-wise softmax.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let (r, c) = (x.rows(), x.cols());
    let mut out = vec![0.0; r * c];
    kernels::softmax_rows(x.data(), c, &mut out);
    Tensor::matrix(r, c, out).expect("shape preserved")
}

/// GELU (tanh approximation) applied elementwise.
pub fn gelu(x: &Tensor) -> Tensor {
    x.map(kernels::gelu)
}

/// Central-difference gradient of `f` with respect to every entry of every
/// tensor in `params`.
pub fn finite_diff_grad<F>(mut f: F, params: &[Tensor], h: f64) -> Result<Vec<Tensor>>
where
    F: FnMut(&[Tensor]) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::contract("finite difference step must be positive"));
    }
    let mut work = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let mut grad = params[p].map(|_| 0.0);
        for i in 0..params[p].len() {
            let orig = work[p].data()[i];
            work[p].data_mut()[i] = orig + h;
            let up = f(&work)?;
            work[p].data_mut()[i] = orig - h;
            let down = f(&work)?;
            work[p].data_mut()[i] = orig;
            grad.data_mut()[i] = (up - down) / (2.0 * h);
        }
        out.push(grad);
    }
    Ok(out)
}
