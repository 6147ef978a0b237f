use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moments over the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    /// Updates applied so far.
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl OptimizerState {
    pub fn new(num_params: usize) -> Self {
        Self {
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }
}

/// One AdamW update with decoupled weight decay: `p ← p(1 - lr·wd)`, then
/// the bias-corrected Adam step.
pub fn adamw_step(params: &mut [f64], grads: &[f64], state: &mut OptimizerState, lr: f64, wd: f64) -> Result<()> {
    let n = params.len();
    if grads.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(shape_err!(
            "adamw: {n} params, {} grads, {}/{} moments",
            grads.len(),
            state.m.len(),
            state.v.len()
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    let decay = 1.0 - lr * wd;
    for i in 0..n {
        let g = grads[i];
        let m = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * g;
        let v = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * g * g;
        state.m[i] = m;
        state.v[i] = v;
        params[i] = params[i] * decay - lr * (m / c1) / ((v / c2).sqrt() + ADAM_EPS);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_only_decays() {
        let mut p = vec![1.5, -2.0, 0.25];
        let orig = p.clone();
        let mut s = OptimizerState::new(3);
        adamw_step(&mut p, &[0.0; 3], &mut s, 0.1, 0.01).unwrap();
        for (a, b) in p.iter().zip(orig) {
            assert_eq!(*a, b * (1.0 - 0.1 * 0.01));
        }
        assert_eq!(s.step, 1);
    }

    #[test]
    fn constant_gradient_steps_approach_lr() {
        // Scalar oracle iterated independently of the vector code.
        let (lr, g) = (1e-3, 0.37);
        let (mut m, mut v, mut x) = (0.0f64, 0.0f64, 0.0f64);
        let mut p = vec![0.0];
        let mut s = OptimizerState::new(1);
        let mut last_step = 0.0;
        for t in 1..=2000 {
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            let before = x;
            x -= lr * mh / (vh.sqrt() + 1e-8);
            last_step = before - x;
            adamw_step(&mut p, &[g], &mut s, lr, 0.0).unwrap();
            assert!((p[0] - x).abs() < 1e-15);
        }
        assert!((last_step - lr).abs() < 1e-9 * lr.max(1.0) + 1e-10, "{last_step}");
    }

    #[test]
    fn deterministic_and_shape_checked() {
        let run = || {
            let mut p = vec![0.1, 0.2];
            let mut s = OptimizerState::new(2);
            for k in 0..10 {
                adamw_step(&mut p, &[k as f64 * 0.1, -0.3], &mut s, 0.01, 0.01).unwrap();
            }
            p
        };
        let (a, b) = (run(), run());
        assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        let mut s = OptimizerState::new(2);
        assert!(adamw_step(&mut [0.0; 2], &[0.0; 3], &mut s, 0.1, 0.0).is_err());
    }
}
