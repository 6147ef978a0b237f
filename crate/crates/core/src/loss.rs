//! Diffusion loss, triplet diffusion loss and negative-label sampling.
//!
//! Distances are Frobenius norms of each sample's `M_x x C_sk` residual
//! (not squared), averaged over the batch.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Weight `λ` of the triplet term.
    pub lambda: f64,
    /// Margin `τ`.
    pub tau: f64,
    pub use_diff: bool,
    pub use_td: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            tau: 1.0,
            use_diff: true,
            use_td: true,
        }
    }
}

/// The three loss configurations compared in the loss ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossMode {
    DiffOnly,
    TdOnly,
    Both,
}

impl LossMode {
    pub const ALL: [LossMode; 3] = [LossMode::DiffOnly, LossMode::TdOnly, LossMode::Both];

    pub fn label(self) -> &'static str {
        match self {
            LossMode::DiffOnly => "diff-only",
            LossMode::TdOnly => "td-only",
            LossMode::Both => "both",
        }
    }
}

impl std::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossMode::ALL
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| Error::config(format!("unknown loss mode {s:?}; expected diff-only, td-only or both")))
    }
}

impl LossConfig {
    pub fn with_mode(&self, mode: LossMode) -> Self {
        Self {
            use_diff: mode != LossMode::TdOnly,
            use_td: mode != LossMode::DiffOnly,
            ..self.clone()
        }
    }

    pub fn mode(&self) -> Option<LossMode> {
        match (self.use_diff, self.use_td) {
            (true, false) => Some(LossMode::DiffOnly),
            (false, true) => Some(LossMode::TdOnly),
            (true, true) => Some(LossMode::Both),
            (false, false) => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.use_diff && !self.use_td {
            return Err(Error::config("at least one of use_diff and use_td must be set"));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() || !(self.tau >= 0.0) || !self.tau.is_finite() {
            return Err(Error::config("lambda and tau must be finite and non-negative"));
        }
        Ok(())
    }

    /// `L_diff + λ L_TD` with disabled terms contributing nothing.
    pub fn combine(&self, diff: f64, td: f64) -> Result<f64> {
        self.validate()?;
        let mut total = 0.0;
        if self.use_diff {
            total += diff;
        }
        if self.use_td {
            total += self.lambda * td;
        }
        Ok(total)
    }
}

/// Per-sample distances `‖a - b‖` over packed samples of `tokens` rows;
/// returns an `items x 1` column.
pub fn distances(g: &mut Graph, a: Var, b: Var, tokens: usize) -> Result<Var> {
    let r = g.sub(a, b)?;
    g.group_norm(r, tokens)
}

/// Batch mean of `‖ε - ε̂_p‖`.
pub fn diff_loss(g: &mut Graph, eps: Var, pred_pos: Var, tokens: usize) -> Result<Var> {
    let d = distances(g, eps, pred_pos, tokens)?;
    g.mean(d)
}

/// Batch mean of `max(‖ε - ε̂_p‖ - ‖ε - ε̂_n‖ + τ, 0)`.
pub fn td_loss(g: &mut Graph, eps: Var, pred_pos: Var, pred_neg: Var, tau: f64, tokens: usize) -> Result<Var> {
    let dp = distances(g, eps, pred_pos, tokens)?;
    let dn = distances(g, eps, pred_neg, tokens)?;
    td_from_distances(g, dp, dn, tau)
}

fn td_from_distances(g: &mut Graph, dp: Var, dn: Var, tau: f64) -> Result<Var> {
    let m = g.sub(dp, dn)?;
    let m = g.add_scalar(m, tau)?;
    let m = g.relu(m)?;
    g.mean(m)
}

/// Loss nodes of one step.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub diff: Var,
    /// Absent when the triplet term is disabled and no negatives were run.
    pub td: Option<Var>,
}

/// Builds `L_total`. `pred_neg` is required when `use_td` is set; when given
/// but unused, `L_TD` is still recorded for reporting.
pub fn total_loss(
    g: &mut Graph,
    eps: Var,
    pred_pos: Var,
    pred_neg: Option<Var>,
    cfg: &LossConfig,
    tokens: usize,
) -> Result<LossTerms> {
    cfg.validate()?;
    let dp = distances(g, eps, pred_pos, tokens)?;
    let diff = g.mean(dp)?;
    let td = match pred_neg {
        Some(neg) => {
            let dn = distances(g, eps, neg, tokens)?;
            Some(td_from_distances(g, dp, dn, cfg.tau)?)
        }
        None if cfg.use_td => return Err(Error::contract("triplet loss needs negative predictions")),
        None => None,
    };
    let total = match (cfg.use_diff, cfg.use_td, td) {
        (true, true, Some(td)) => {
            let w = g.scale(td, cfg.lambda)?;
            g.add(diff, w)?
        }
        (false, true, Some(td)) => g.scale(td, cfg.lambda)?,
        _ => diff,
    };
    Ok(LossTerms { total, diff, td })
}

/// A label drawn uniformly from `seen` without `true_label`.
pub fn sample_negative<R: Rng + ?Sized>(true_label: u32, seen: &[u32], rng: &mut R) -> Result<u32> {
    if seen.len() < 2 {
        return Err(Error::config("negative sampling needs at least two seen classes"));
    }
    let pos = seen
        .iter()
        .position(|&c| c == true_label)
        .ok_or_else(|| Error::contract(format!("label {true_label} is not a seen class")))?;
    let i = rng.random_range(0..seen.len() - 1);
    Ok(seen[if i >= pos { i + 1 } else { i }])
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::diffcore::check_gradients;
    use crate::Tensor;

    fn eval(f: impl FnOnce(&mut Graph, &[Var]) -> Result<Var>, inputs: &[Tensor]) -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone()).unwrap()).collect();
        let out = f(&mut g, &vars).unwrap();
        g.value(out).item().unwrap()
    }

    fn row(v: &[f64]) -> Tensor {
        Tensor::matrix(1, v.len(), v.to_vec()).unwrap()
    }

    fn diff(eps: &Tensor, pos: &Tensor, tokens: usize) -> f64 {
        eval(|g, v| diff_loss(g, v[0], v[1], tokens), &[eps.clone(), pos.clone()])
    }

    fn td(eps: &Tensor, pos: &Tensor, neg: &Tensor, tau: f64) -> f64 {
        eval(|g, v| td_loss(g, v[0], v[1], v[2], tau, 1), &[eps.clone(), pos.clone(), neg.clone()])
    }

    #[test]
    fn diff_loss_examples() {
        let e = row(&[0.3, -1.0]);
        assert_eq!(diff(&e, &e, 1), 0.0);
        assert_eq!(diff(&row(&[0.0, 0.0]), &row(&[3.0, 4.0]), 1), 5.0);

        let mut r = ChaCha8Rng::seed_from_u64(1);
        let (eps, pos) = (Tensor::randn(12, 5, &mut r), Tensor::randn(12, 5, &mut r));
        // 4 samples of 3 tokens each.
        let oracle = (0..4)
            .map(|i| {
                let mut ss = 0.0;
                for j in 0..15 {
                    let k = i * 15 + j;
                    ss += (eps.data()[k] - pos.data()[k]).powi(2);
                }
                ss.sqrt()
            })
            .sum::<f64>()
            / 4.0;
        assert!((diff(&eps, &pos, 3) - oracle).abs() < 1e-12);
    }

    #[test]
    fn td_loss_examples() {
        let eps = row(&[0.0, 0.0]);
        let p = row(&[0.6, -0.8]);
        assert_eq!(td(&eps, &p, &p, 1.0), 1.0);
        assert_eq!(td(&eps, &eps, &row(&[1.5, 0.0]), 1.0), 0.0);
        assert_eq!(td(&eps, &row(&[2.0, 0.0]), &row(&[0.0, 1.0]), 1.0), 2.0);
    }

    #[test]
    fn total_loss_combination() {
        let cfg = LossConfig::default();
        assert_eq!(cfg.combine(0.5, 0.25).unwrap(), 0.75);
        assert_eq!(cfg.with_mode(LossMode::DiffOnly).combine(0.5, 0.25).unwrap(), 0.5);
        assert_eq!(cfg.with_mode(LossMode::TdOnly).combine(0.5, 0.25).unwrap(), 0.25);
        let zero = LossConfig { lambda: 0.0, ..cfg.clone() };
        assert_eq!(zero.combine(0.5, 0.25).unwrap(), 0.5);
        let off = LossConfig { use_diff: false, use_td: false, ..cfg.clone() };
        assert!(matches!(off.combine(1.0, 1.0), Err(Error::Config(_))));

        let e = row(&[0.0, 0.0]);
        let p = row(&[3.0, 4.0]);
        let n = row(&[1.0, 0.0]);
        for mode in LossMode::ALL {
            let c = cfg.with_mode(mode);
            let mut g = Graph::new();
            let (ev, pv, nv) = (g.constant(e.clone()).unwrap(), g.constant(p.clone()).unwrap(), g.constant(n.clone()).unwrap());
            let terms = total_loss(&mut g, ev, pv, Some(nv), &c, 1).unwrap();
            let (d, t) = (g.value(terms.diff).item().unwrap(), g.value(terms.td.unwrap()).item().unwrap());
            assert_eq!((d, t), (5.0, 5.0));
            assert_eq!(g.value(terms.total).item().unwrap(), c.combine(d, t).unwrap());
            assert_eq!(c.mode(), Some(mode));
        }
        let mut g = Graph::new();
        let ev = g.constant(e).unwrap();
        let pv = g.constant(p).unwrap();
        assert!(total_loss(&mut g, ev, pv, None, &cfg, 1).is_err());
        let t = total_loss(&mut g, ev, pv, None, &cfg.with_mode(LossMode::DiffOnly), 1).unwrap();
        assert!(t.td.is_none());
        assert_eq!(g.value(t.total).item().unwrap(), 5.0);
        assert_eq!("td-only".parse::<LossMode>().unwrap(), LossMode::TdOnly);
        assert!("both-ish".parse::<LossMode>().is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut r = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..20 {
            let eps = Tensor::randn(6, 4, &mut r);
            let pos = Tensor::randn(6, 4, &mut r);
            let neg = Tensor::randn(6, 4, &mut r);
            let cfg = LossConfig { tau: 0.5 + trial as f64 * 0.2, ..LossConfig::default() };
            // Skip draws whose margin sits within 1e-3 of the kink.
            let mut g = Graph::new();
            let v: Vec<Var> = [&eps, &pos, &neg].iter().map(|t| g.constant((*t).clone()).unwrap()).collect();
            let dp = distances(&mut g, v[0], v[1], 2).unwrap();
            let dn = distances(&mut g, v[0], v[2], 2).unwrap();
            let near_kink = g
                .value(dp)
                .data()
                .iter()
                .zip(g.value(dn).data())
                .any(|(p, n)| (p - n + cfg.tau).abs() < 1e-3);
            if near_kink {
                continue;
            }
            let err = check_gradients(
                |g, v| Ok(total_loss(g, v[0], v[1], Some(v[2]), &cfg, 2)?.total),
                &[eps, pos, neg],
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-5, "trial {trial}: {err}");
        }
    }

    #[test]
    fn clamped_margin_gives_zero_positive_gradient() {
        let cfg = LossConfig::default().with_mode(LossMode::TdOnly);
        let mut g = Graph::new();
        let e = g.constant(row(&[0.0, 0.0])).unwrap();
        let p = g.param(row(&[0.1, 0.0])).unwrap();
        let n = g.param(row(&[5.0, 0.0])).unwrap();
        let t = total_loss(&mut g, e, p, Some(n), &cfg, 1).unwrap();
        assert_eq!(g.value(t.total).item().unwrap(), 0.0);
        let grads = g.backward(t.total).unwrap();
        assert!(grads.wrt(p).data().iter().all(|&v| v == 0.0));
        assert!(grads.wrt(n).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sample_negative_examples() {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            assert_eq!(sample_negative(4, &[4, 9], &mut r).unwrap(), 9);
        }
        assert!(matches!(sample_negative(4, &[4], &mut r), Err(Error::Config(_))));
        assert!(sample_negative(5, &[4, 9], &mut r).is_err());

        let seen: Vec<u32> = (0..10).collect();
        let draws = 100_000;
        let mut counts = [0usize; 10];
        for i in 0..draws {
            let truth = (i % 10) as u32;
            let n = sample_negative(truth, &seen, &mut r).unwrap();
            assert_ne!(n, truth);
            counts[n as usize] += 1;
        }
        let p = 0.1;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - draws as f64 * p).abs() < 5.0 * sigma, "{counts:?}");
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn vec4() -> impl Strategy<Value = Vec<f64>> {
            proptest::collection::vec(-10.0f64..10.0, 4)
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(2000))]

            #[test]
            fn td_bounds(e in vec4(), p in vec4(), n in vec4(), tau in 0.0f64..3.0) {
                let (e, p, n) = (row(&e), row(&p), row(&n));
                let t = td(&e, &p, &n, tau);
                prop_assert!(t >= 0.0);
                prop_assert!(t <= tau + diff(&e, &p, 1) + 1e-12);
                prop_assert_eq!(td(&e, &p, &p, tau), tau);
            }

            #[test]
            fn td_zero_when_margin_met(e in vec4(), p in vec4(), dir in vec4(), tau in 0.0f64..3.0, extra in 0.0f64..5.0) {
                let (e, p) = (row(&e), row(&p));
                let d = row(&dir);
                prop_assume!(d.norm() > 1e-3);
                // Negative at distance dp + τ + extra from ε.
                let want = diff(&e, &p, 1) + tau + extra + 1e-9;
                let n = e.add(&d.scale(want / d.norm())).unwrap();
                prop_assert_eq!(td(&e, &p, &n, tau), 0.0);
            }

            #[test]
            fn td_non_increasing_in_negative_distance(e in vec4(), p in vec4(), dir in vec4(), a in 0.0f64..5.0, b in 0.0f64..5.0, tau in 0.0f64..3.0) {
                let (e, p, d) = (row(&e), row(&p), row(&dir));
                prop_assume!(d.norm() > 1e-3);
                let (near, far) = if a < b { (a, b) } else { (b, a) };
                let at = |r: f64| e.add(&d.scale(r / d.norm())).unwrap();
                prop_assert!(td(&e, &p, &at(far), tau) <= td(&e, &p, &at(near), tau) + 1e-12);
            }
        }
    }
}
