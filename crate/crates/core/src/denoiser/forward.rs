use super::params::{Block, DenoiserParams, Linear, Weights};
use super::{DenoiserConfig, TextConditioning};
use crate::diffcore::{Graph, Var, LAYER_NORM_EPS};
use crate::error::{Error, Result};
use crate::Tensor;

/// Base of the geometric frequency ladder in the timestep embedding.
pub const TIMESTEP_BASE: f64 = 10_000.0;

/// Items per graph in [`predict`].
const PREDICT_CHUNK: usize = 256;

/// Sinusoidal embedding `[sin(t ω_i) | cos(t ω_i)]` with
/// `ω_i = base^(-i / (dim/2))`, `i = 0..dim/2`.
pub fn timestep_embedding(t: usize, dim: usize) -> Result<Tensor> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::config(format!("timestep embedding dim must be even and positive, got {dim}")));
    }
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let arg = t as f64 * TIMESTEP_BASE.powf(-(i as f64) / half as f64);
        out[i] = arg.sin();
        out[half + i] = arg.cos();
    }
    Tensor::matrix(1, dim, out)
}

/// A packed batch of `items` denoiser inputs registered on a graph.
#[derive(Clone, Copy, Debug)]
pub struct DenoiseInputs {
    pub items: usize,
    /// `items * M_x` rows of `C_sk`.
    pub z_xt: Var,
    /// `items` rows of timestep embeddings of width `C`.
    pub time: Var,
    /// `items` rows of `C_txt`.
    pub global: Var,
    /// `items * M_l` rows of `C_txt`.
    pub local: Var,
}

impl DenoiseInputs {
    /// Registers a packed batch as constants after checking it against `cfg`.
    pub fn constants(
        g: &mut Graph,
        cfg: &DenoiserConfig,
        z_xt: &Tensor,
        timesteps: &[usize],
        global: &Tensor,
        local: &Tensor,
    ) -> Result<Self> {
        let d = cfg.dims;
        let n = timesteps.len();
        let expect = |what: &str, t: &Tensor, rows: usize, cols: usize| {
            if t.rows() != rows || t.cols() != cols {
                Err(Error::contract(format!(
                    "{what}: expected {rows}x{cols}, got {}x{}",
                    t.rows(),
                    t.cols()
                )))
            } else {
                Ok(())
            }
        };
        if n == 0 {
            return Err(Error::contract("empty denoiser batch"));
        }
        expect("z_xt", z_xt, n * d.skeleton_tokens, d.skeleton_dim)?;
        expect("z_g", global, n, d.text_dim)?;
        if local.len() != n * d.text_tokens * d.text_dim {
            return Err(Error::contract(format!(
                "z_l: expected {}x{}, got {:?}",
                n * d.text_tokens,
                d.text_dim,
                local.shape()
            )));
        }
        let rows: Vec<Tensor> = timesteps
            .iter()
            .map(|&t| timestep_embedding(t, cfg.model_dim))
            .collect::<Result<_>>()?;
        let time = Tensor::vstack(&rows.iter().collect::<Vec<_>>())?;
        let local = local.clone().reshape(vec![n * d.text_tokens, d.text_dim])?;
        Ok(Self {
            items: n,
            z_xt: g.constant(z_xt.clone())?,
            time: g.constant(time)?,
            global: g.constant(global.clone())?,
            local: g.constant(local)?,
        })
    }
}

/// Token streams entering the first block.
#[derive(Clone, Copy, Debug)]
pub struct Streams {
    /// Skeleton tokens, `items * M_x` rows.
    pub x: Var,
    /// Conditioning vector, `items` rows.
    pub c: Var,
    /// Local text tokens, `items * M_l` rows; absent when no text tokens
    /// take part in attention.
    pub l: Option<Var>,
}

fn linear(g: &mut Graph, x: Var, l: &Linear<Var>) -> Result<Var> {
    let y = g.matmul(x, l.weight)?;
    g.add_row(y, l.bias)
}

/// `x W + b + PE`, with `PE` tiled across items.
fn embed_tokens(g: &mut Graph, z: Var, l: &Linear<Var>, pe: Var, items: usize) -> Result<Var> {
    let y = linear(g, z, l)?;
    let pe = if items == 1 { pe } else { g.tile_rows(pe, items)? };
    g.add(y, pe)
}

pub fn embed_inputs(g: &mut Graph, w: &Weights<Var>, cfg: &DenoiserConfig, inp: &DenoiseInputs) -> Result<Streams> {
    let x = embed_tokens(g, inp.z_xt, &w.skeleton_in, w.pe_x, inp.items)?;
    let mut c = linear(g, inp.time, &w.time_in)?;
    if cfg.text_conditioning != TextConditioning::LocalOnly {
        let gl = linear(g, inp.global, &w.global_in)?;
        c = g.add(c, gl)?;
    }
    let l = if cfg.active_text_tokens() > 0 {
        Some(embed_tokens(g, inp.local, &w.local_in, w.pe_l, inp.items)?)
    } else {
        None
    };
    Ok(Streams { x, c, l })
}

const ALPHA: usize = 0;
const BETA: usize = 1;
const GAMMA: usize = 2;

/// Slices of the per-item modulation vector, broadcast to token rows.
struct Modulation {
    m: Var,
    dim: usize,
}

impl Modulation {
    /// `stream`: 0 skeleton, 1 text; `sub`: 0 attention, 1 MLP.
    fn get(&self, g: &mut Graph, stream: usize, sub: usize, which: usize, tokens: usize) -> Result<Var> {
        let v = g.slice_cols(self.m, ((stream * 2 + sub) * 3 + which) * self.dim, self.dim)?;
        if tokens == 1 {
            Ok(v)
        } else {
            g.repeat_rows(v, tokens)
        }
    }

    /// `(1 + γ) ⊙ LN(f) + β`.
    fn shift_scale(&self, g: &mut Graph, f: Var, stream: usize, sub: usize, tokens: usize) -> Result<Var> {
        let n = g.normalize(f, LAYER_NORM_EPS)?;
        let gamma = self.get(g, stream, sub, GAMMA, tokens)?;
        let scale = g.add_scalar(gamma, 1.0)?;
        let beta = self.get(g, stream, sub, BETA, tokens)?;
        let y = g.mul(n, scale)?;
        g.add(y, beta)
    }

    /// `f + α ⊙ h`.
    fn gate(&self, g: &mut Graph, f: Var, h: Var, stream: usize, sub: usize, tokens: usize) -> Result<Var> {
        let alpha = self.get(g, stream, sub, ALPHA, tokens)?;
        let y = g.mul(h, alpha)?;
        g.add(f, y)
    }

    fn mlp(
        &self,
        g: &mut Graph,
        f: Var,
        fc_in: &Linear<Var>,
        fc_out: &Linear<Var>,
        stream: usize,
        tokens: usize,
    ) -> Result<Var> {
        let h = self.shift_scale(g, f, stream, 1, tokens)?;
        let h = linear(g, h, fc_in)?;
        let h = g.gelu(h)?;
        let h = linear(g, h, fc_out)?;
        self.gate(g, f, h, stream, 1, tokens)
    }
}

/// One block. With `text_out == false` the text stream's output projection
/// and MLP are skipped and `None` is returned in its place; the last block
/// uses this since only skeleton tokens feed the head.
pub fn crossdit_block(
    g: &mut Graph,
    b: &Block<Var>,
    cfg: &DenoiserConfig,
    s: &Streams,
    text_out: bool,
) -> Result<(Var, Option<Var>)> {
    let c = cfg.model_dim;
    let mx = cfg.dims.skeleton_tokens;
    let ml = cfg.active_text_tokens();
    let m = Modulation {
        m: linear(g, s.c, &b.modulation)?,
        dim: c,
    };

    let hx = m.shift_scale(g, s.x, 0, 0, mx)?;
    let qkv_x = linear(g, hx, &b.qkv_x)?;
    let (mut q, mut k, mut v) = (
        g.slice_cols(qkv_x, 0, c)?,
        g.slice_cols(qkv_x, c, c)?,
        g.slice_cols(qkv_x, 2 * c, c)?,
    );
    let seq = match s.l {
        Some(fl) => {
            let hl = m.shift_scale(g, fl, 1, 0, ml)?;
            let qkv_l = linear(g, hl, &b.qkv_l)?;
            let ql = g.slice_cols(qkv_l, 0, c)?;
            let kl = g.slice_cols(qkv_l, c, c)?;
            let vl = g.slice_cols(qkv_l, 2 * c, c)?;
            q = g.concat_tokens(q, ql, mx, ml)?;
            k = g.concat_tokens(k, kl, mx, ml)?;
            v = g.concat_tokens(v, vl, mx, ml)?;
            mx + ml
        }
        None => mx,
    };
    let attn = g.attention(q, k, v, cfg.num_heads, seq)?;

    let ax = if seq == mx { attn } else { g.take_tokens(attn, seq, 0, mx)? };
    let ax = linear(g, ax, &b.out_x)?;
    let fx = m.gate(g, s.x, ax, 0, 0, mx)?;
    let fx = m.mlp(g, fx, &b.mlp_in_x, &b.mlp_out_x, 0, mx)?;

    let fl = match s.l {
        Some(fl) if text_out => {
            let al = g.take_tokens(attn, seq, mx, ml)?;
            let al = linear(g, al, &b.out_l)?;
            let fl = m.gate(g, fl, al, 1, 0, ml)?;
            Some(m.mlp(g, fl, &b.mlp_in_l, &b.mlp_out_l, 1, ml)?)
        }
        _ => None,
    };
    Ok((fx, fl))
}

/// Full forward pass over a packed batch; returns `items * M_x` rows of
/// `C_sk`.
pub fn forward(g: &mut Graph, w: &Weights<Var>, cfg: &DenoiserConfig, inp: &DenoiseInputs) -> Result<Var> {
    if w.blocks.len() != cfg.num_blocks {
        return Err(Error::contract(format!(
            "{} blocks bound for a {}-block config",
            w.blocks.len(),
            cfg.num_blocks
        )));
    }
    let mut s = embed_inputs(g, w, cfg, inp)?;
    for (i, b) in w.blocks.iter().enumerate() {
        let last = i + 1 == w.blocks.len();
        let (x, l) = crossdit_block(g, b, cfg, &s, !last)?;
        s.x = x;
        s.l = l;
    }
    let y = g.layer_norm(s.x, w.final_gain, w.final_bias, LAYER_NORM_EPS)?;
    linear(g, y, &w.head)
}

/// Inference over a packed batch, chunked to bound memory.
pub fn predict(
    params: &DenoiserParams,
    cfg: &DenoiserConfig,
    z_xt: &Tensor,
    timesteps: &[usize],
    global: &Tensor,
    local: &Tensor,
) -> Result<Tensor> {
    let d = cfg.dims;
    let n = timesteps.len();
    let (xs, ls) = (d.skeleton_tokens * d.skeleton_dim, d.text_tokens * d.text_dim);
    if z_xt.len() != n * xs || global.len() != n * d.text_dim || local.len() != n * ls {
        return Err(Error::contract(format!("inconsistent packed batch of {n} items")));
    }
    let mut out = Vec::with_capacity(n * xs);
    for start in (0..n).step_by(PREDICT_CHUNK) {
        let len = PREDICT_CHUNK.min(n - start);
        let slice = |t: &Tensor, per: usize, rows: usize, cols: usize| {
            Tensor::matrix(rows, cols, t.data()[start * per..(start + len) * per].to_vec())
        };
        let mut g = Graph::new();
        let w = params.bind(&mut g, false)?;
        let inp = DenoiseInputs::constants(
            &mut g,
            cfg,
            &slice(z_xt, xs, len * d.skeleton_tokens, d.skeleton_dim)?,
            &timesteps[start..start + len],
            &slice(global, d.text_dim, len, d.text_dim)?,
            &slice(local, ls, len * d.text_tokens, d.text_dim)?,
        )?;
        let y = forward(&mut g, &w, cfg, &inp)?;
        out.extend_from_slice(g.value(y).data());
    }
    Tensor::matrix(n * d.skeleton_tokens, d.skeleton_dim, out)
}

/// Single-sample prediction `ε̂` (or `ẑ_x`), `M_x x C_sk`.
pub fn denoise(
    z_xt: &Tensor,
    t: usize,
    z_g: &Tensor,
    z_l: &Tensor,
    params: &DenoiserParams,
    cfg: &DenoiserConfig,
) -> Result<Tensor> {
    predict(params, cfg, z_xt, &[t], z_g, z_l)
}
