//! Raw forward/backward kernels over row-major slices.

/// `c = a(m x k) * b(k x n)`, with either operand optionally transposed in
/// place (`trans_a` reads `a` as a `k x m` buffer, likewise `trans_b`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.fill(0.0);
        }
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: strides describe exactly the m*k, k*n and m*n buffers checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Row-wise softmax with max subtraction.
pub(crate) fn softmax_rows(x: &[f64], cols: usize, out: &mut [f64]) {
    for (row, o) in x.chunks_exact(cols).zip(out.chunks_exact_mut(cols)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (oi, &xi) in o.iter_mut().zip(row) {
            *oi = (xi - max).exp();
            sum += *oi;
        }
        let inv = 1.0 / sum;
        o.iter_mut().for_each(|v| *v *= inv);
    }
}

/// Softmax backward given the forward output `y` and upstream gradient `gy`.
pub(crate) fn softmax_rows_backward(y: &[f64], gy: &[f64], cols: usize, gx: &mut [f64]) {
    for ((yr, gr), xr) in y
        .chunks_exact(cols)
        .zip(gy.chunks_exact(cols))
        .zip(gx.chunks_exact_mut(cols))
    {
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for ((x, &yv), &gv) in xr.iter_mut().zip(yr).zip(gr) {
            *x += yv * (gv - dot);
        }
    }
}

/// Per-row standardization with population variance; returns `1/sqrt(var+eps)`
/// for every row.
pub(crate) fn normalize_rows(x: &[f64], cols: usize, eps: f64, out: &mut [f64]) -> Vec<f64> {
    let n = cols as f64;
    let mut rstd = Vec::with_capacity(x.len() / cols.max(1));
    for (row, o) in x.chunks_exact(cols).zip(out.chunks_exact_mut(cols)) {
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let r = 1.0 / (var + eps).sqrt();
        for (oi, &xi) in o.iter_mut().zip(row) {
            *oi = (xi - mean) * r;
        }
        rstd.push(r);
    }
    rstd
}

/// Backward of [`normalize_rows`] given its output `y`.
pub(crate) fn normalize_rows_backward(
    y: &[f64],
    rstd: &[f64],
    gy: &[f64],
    cols: usize,
    gx: &mut [f64],
) {
    let n = cols as f64;
    for (((yr, gr), xr), &r) in y
        .chunks_exact(cols)
        .zip(gy.chunks_exact(cols))
        .zip(gx.chunks_exact_mut(cols))
        .zip(rstd)
    {
        let mean_g = gr.iter().sum::<f64>() / n;
        let mean_gy = gr.iter().zip(yr).map(|(g, y)| g * y).sum::<f64>() / n;
        for ((x, &g), &yv) in xr.iter_mut().zip(gr).zip(yr) {
            *x += r * (g - mean_g - yv * mean_gy);
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

/// GELU, tanh approximation.
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_K * x * x * x);
    let th = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * GELU_K * x * x);
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du
}

/// Shape bookkeeping for batched multi-head attention over `items` independent
/// sequences of `seq` tokens each, packed row-wise.
#[derive(Clone, Copy, Debug)]
pub(crate) struct AttnDims {
    pub items: usize,
    pub seq: usize,
    pub heads: usize,
    pub dim: usize,
}

impl AttnDims {
    fn head_dim(&self) -> usize {
        self.dim / self.heads
    }
}

/// Forward attention; writes the output and returns the softmax probabilities
/// laid out as `[item][head][query][key]`.
pub(crate) fn attention(q: &[f64], k: &[f64], v: &[f64], d: AttnDims, out: &mut [f64]) -> Vec<f64> {
    let (s, c, hd) = (d.seq, d.dim, d.head_dim());
    let scale = 1.0 / (hd as f64).sqrt();
    let mut probs = vec![0.0; d.items * d.heads * s * s];
    let mut scores = vec![0.0; s * s];
    for b in 0..d.items {
        let base = b * s * c;
        for h in 0..d.heads {
            let off = h * hd;
            for i in 0..s {
                let qi = &q[base + i * c + off..base + i * c + off + hd];
                for j in 0..s {
                    let kj = &k[base + j * c + off..base + j * c + off + hd];
                    scores[i * s + j] = scale * qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            let p = &mut probs[(b * d.heads + h) * s * s..(b * d.heads + h + 1) * s * s];
            softmax_rows(&scores, s, p);
            for i in 0..s {
                let o = &mut out[base + i * c + off..base + i * c + off + hd];
                o.fill(0.0);
                for j in 0..s {
                    let pij = p[i * s + j];
                    let vj = &v[base + j * c + off..base + j * c + off + hd];
                    for (ov, &vv) in o.iter_mut().zip(vj) {
                        *ov += pij * vv;
                    }
                }
            }
        }
    }
    probs
}

/// Accumulates attention input gradients into `gq`, `gk`, `gv`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attention_backward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    probs: &[f64],
    gout: &[f64],
    d: AttnDims,
    gq: &mut [f64],
    gk: &mut [f64],
    gv: &mut [f64],
) {
    let (s, c, hd) = (d.seq, d.dim, d.head_dim());
    let scale = 1.0 / (hd as f64).sqrt();
    let mut gp = vec![0.0; s * s];
    let mut gs = vec![0.0; s * s];
    for b in 0..d.items {
        let base = b * s * c;
        for h in 0..d.heads {
            let off = h * hd;
            let p = &probs[(b * d.heads + h) * s * s..(b * d.heads + h + 1) * s * s];
            for i in 0..s {
                let go = &gout[base + i * c + off..base + i * c + off + hd];
                for j in 0..s {
                    let vj = &v[base + j * c + off..base + j * c + off + hd];
                    gp[i * s + j] = go.iter().zip(vj).map(|(a, b)| a * b).sum();
                    let pij = p[i * s + j];
                    let gvj = &mut gv[base + j * c + off..base + j * c + off + hd];
                    for (g, &o) in gvj.iter_mut().zip(go) {
                        *g += pij * o;
                    }
                }
            }
            gs.fill(0.0);
            softmax_rows_backward(p, &gp, s, &mut gs);
            for i in 0..s {
                for j in 0..s {
                    let g = gs[i * s + j] * scale;
                    if g == 0.0 {
                        continue;
                    }
                    for t in 0..hd {
                        gq[base + i * c + off + t] += g * k[base + j * c + off + t];
                        gk[base + j * c + off + t] += g * q[base + i * c + off + t];
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for t in 0..k {
                    c[i * n + j] += a[i * k + t] * b[t * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn gemm_transposes_match_naive() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.7).cos()).collect();
        let want = naive(m, k, n, &a, &b);

        let mut c = vec![0.0; m * n];
        gemm(m, k, n, &a, false, &b, false, &mut c, false);
        assert!(c.iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-12));

        let at = crate::Tensor::matrix(m, k, a.clone()).unwrap().transpose();
        let bt = crate::Tensor::matrix(k, n, b.clone()).unwrap().transpose();
        let mut c2 = vec![1.0; m * n];
        gemm(m, k, n, at.data(), true, bt.data(), true, &mut c2, true);
        assert!(c2.iter().zip(&want).all(|(x, y)| (x - 1.0 - y).abs() < 1e-12));
    }

    #[test]
    fn gelu_matches_reference_points() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(1.0) - 0.841_191_990_607_477_1).abs() < 1e-12);
        assert!(gelu(-10.0).abs() < 1e-12);
    }
}
