use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::DenoiserConfig;
use crate::diffcore::{Gradients, Graph, Var};
use crate::error::{shape_err, Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::Tensor;

/// `y = x W + b` with `W: in x out` and `b: 1 x out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    pub weight: T,
    pub bias: T,
}

/// One CrossDiT block.
#[derive(Clone, Debug, PartialEq)]
pub struct Block<T> {
    /// `C -> 12C`: per stream, `(α, β, γ)` for attention then for the MLP.
    pub modulation: Linear<T>,
    pub qkv_x: Linear<T>,
    pub qkv_l: Linear<T>,
    pub out_x: Linear<T>,
    pub out_l: Linear<T>,
    pub mlp_in_x: Linear<T>,
    pub mlp_out_x: Linear<T>,
    pub mlp_in_l: Linear<T>,
    pub mlp_out_l: Linear<T>,
}

/// All denoiser weights, generic over storage so the same structure can hold
/// tensors, graph variables or gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights<T> {
    pub skeleton_in: Linear<T>,
    pub pe_x: T,
    pub time_in: Linear<T>,
    pub global_in: Linear<T>,
    pub local_in: Linear<T>,
    pub pe_l: T,
    pub blocks: Vec<Block<T>>,
    pub final_gain: T,
    pub final_bias: T,
    pub head: Linear<T>,
}

pub type DenoiserParams = Weights<Tensor>;

type Visitor<'f, T, U> = dyn FnMut(&str, &T) -> Result<U> + 'f;

impl<T> Linear<T> {
    fn try_map<U>(&self, name: &str, f: &mut Visitor<'_, T, U>) -> Result<Linear<U>> {
        Ok(Linear {
            weight: f(&format!("{name}.weight"), &self.weight)?,
            bias: f(&format!("{name}.bias"), &self.bias)?,
        })
    }
}

impl<T> Block<T> {
    fn try_map<U>(&self, name: &str, f: &mut Visitor<'_, T, U>) -> Result<Block<U>> {
        Ok(Block {
            modulation: self.modulation.try_map(&format!("{name}.modulation"), f)?,
            qkv_x: self.qkv_x.try_map(&format!("{name}.qkv_x"), f)?,
            qkv_l: self.qkv_l.try_map(&format!("{name}.qkv_l"), f)?,
            out_x: self.out_x.try_map(&format!("{name}.out_x"), f)?,
            out_l: self.out_l.try_map(&format!("{name}.out_l"), f)?,
            mlp_in_x: self.mlp_in_x.try_map(&format!("{name}.mlp_in_x"), f)?,
            mlp_out_x: self.mlp_out_x.try_map(&format!("{name}.mlp_out_x"), f)?,
            mlp_in_l: self.mlp_in_l.try_map(&format!("{name}.mlp_in_l"), f)?,
            mlp_out_l: self.mlp_out_l.try_map(&format!("{name}.mlp_out_l"), f)?,
        })
    }
}

impl<T> Weights<T> {
    /// Applies `f` to every entry in the canonical order, passing its stable
    /// dotted name.
    pub fn try_map<U>(&self, mut f: impl FnMut(&str, &T) -> Result<U>) -> Result<Weights<U>> {
        let f: &mut Visitor<'_, T, U> = &mut f;
        Ok(Weights {
            skeleton_in: self.skeleton_in.try_map("skeleton_in", f)?,
            pe_x: f("pe_x", &self.pe_x)?,
            time_in: self.time_in.try_map("time_in", f)?,
            global_in: self.global_in.try_map("global_in", f)?,
            local_in: self.local_in.try_map("local_in", f)?,
            pe_l: f("pe_l", &self.pe_l)?,
            blocks: self
                .blocks
                .iter()
                .enumerate()
                .map(|(i, b)| b.try_map(&format!("blocks.{i}"), f))
                .collect::<Result<_>>()?,
            final_gain: f("final_gain", &self.final_gain)?,
            final_bias: f("final_bias", &self.final_bias)?,
            head: self.head.try_map("head", f)?,
        })
    }

    pub fn visit(&self, mut f: impl FnMut(&str, &T)) {
        self.try_map(|n, t| {
            f(n, t);
            Ok(())
        })
        .expect("infallible visitor");
    }

    pub fn names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit(|n, _| names.push(n.to_owned()));
        names
    }
}

fn xavier<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Linear<Tensor> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
    Linear {
        weight: Tensor::matrix(fan_in, fan_out, data).expect("sized"),
        bias: Tensor::zeros(1, fan_out),
    }
}

fn zero_linear(fan_in: usize, fan_out: usize) -> Linear<Tensor> {
    Linear {
        weight: Tensor::zeros(fan_in, fan_out),
        bias: Tensor::zeros(1, fan_out),
    }
}

fn gaussian<R: Rng>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Tensor {
    let n = Normal::new(0.0, std).expect("valid std");
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| n.sample(rng)).collect()).expect("sized")
}

impl DenoiserParams {
    /// Xavier-uniform projections, zero modulation and head, `N(0, 0.02²)`
    /// positional embeddings, unit final gain.
    pub fn init(cfg: &DenoiserConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = stream_rng(seed, Stream::Init);
        let rng = &mut rng;
        let d = cfg.dims;
        let c = cfg.model_dim;
        let hidden = cfg.mlp_hidden();
        let skeleton_in = xavier(d.skeleton_dim, c, rng);
        let pe_x = gaussian(d.skeleton_tokens, c, 0.02, rng);
        let time_in = xavier(c, c, rng);
        let global_in = xavier(d.text_dim, c, rng);
        let local_in = xavier(d.text_dim, c, rng);
        let pe_l = gaussian(d.text_tokens, c, 0.02, rng);
        let blocks = (0..cfg.num_blocks)
            .map(|_| Block {
                modulation: zero_linear(c, 12 * c),
                qkv_x: xavier(c, 3 * c, rng),
                qkv_l: xavier(c, 3 * c, rng),
                out_x: xavier(c, c, rng),
                out_l: xavier(c, c, rng),
                mlp_in_x: xavier(c, hidden, rng),
                mlp_out_x: xavier(hidden, c, rng),
                mlp_in_l: xavier(c, hidden, rng),
                mlp_out_l: xavier(hidden, c, rng),
            })
            .collect();
        Ok(Weights {
            skeleton_in,
            pe_x,
            time_in,
            global_in,
            local_in,
            pe_l,
            blocks,
            final_gain: Tensor::full(1, c, 1.0),
            final_bias: Tensor::zeros(1, c),
            head: zero_linear(c, d.skeleton_dim),
        })
    }

    /// Zero-filled weights with the shapes required by `cfg`.
    pub fn zeros(cfg: &DenoiserConfig) -> Result<Self> {
        let p = Self::init(cfg, 0)?;
        p.try_map(|_, t| Ok(Tensor::zeros(t.rows(), t.cols())))
    }

    pub fn num_scalars(&self) -> usize {
        let mut n = 0;
        self.visit(|_, t| n += t.len());
        n
    }

    /// All entries concatenated in canonical order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_scalars());
        self.visit(|_, t| out.extend_from_slice(t.data()));
        out
    }

    /// Same shapes as `self`, values from `flat`.
    pub fn unflatten(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.num_scalars() {
            return Err(shape_err!("flat parameter vector of {} for {} scalars", flat.len(), self.num_scalars()));
        }
        let mut at = 0;
        self.try_map(|_, t| {
            let out = Tensor::matrix(t.rows(), t.cols(), flat[at..at + t.len()].to_vec())?;
            at += t.len();
            Ok(out)
        })
    }

    /// Checks every entry against the shapes implied by `cfg`.
    pub fn check_shapes(&self, cfg: &DenoiserConfig) -> Result<()> {
        let reference = Self::zeros(cfg)?;
        let mut mine = Vec::new();
        self.visit(|n, t| mine.push((n.to_owned(), t.rows(), t.cols())));
        let mut want = Vec::new();
        reference.visit(|n, t| want.push((n.to_owned(), t.rows(), t.cols())));
        if mine != want {
            return Err(Error::contract("parameter shapes do not match the denoiser config"));
        }
        Ok(())
    }

    /// Registers every entry on `g`, as trainable parameters or as constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Result<Weights<Var>> {
        self.try_map(|_, t| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })
    }

    /// Gradients of every bound entry.
    pub fn gradients(vars: &Weights<Var>, grads: &Gradients) -> Result<Self> {
        vars.try_map(|_, &v| Ok(grads.wrt(v)))
    }

    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        self.visit(|_, t| ok &= t.is_finite());
        ok
    }
}
