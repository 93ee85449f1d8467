//! Adam with bias correction and coupled L2 weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, weight_decay: 1e-4, epsilon: 1e-8 }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.beta1 > 0.0
            && self.beta1 < self.beta2
            && self.beta2 < 1.0
            && self.weight_decay >= 0.0
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// First/second moment buffers for each parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T = f64> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[Tensor<T>]) -> Self {
        AdamState {
            m: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            step: 0,
        }
    }
}

/// One Adam update over all parameters.
///
/// `grad ← grad + weight_decay·param` precedes the moment updates.
pub fn adam_step<T: Scalar>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    config: &OptimizerConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(format!(
            "adam: {} params, {} grads, {} state slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (config.beta1, config.beta2);
    let bias1 = 1.0 - b1.powi(t);
    let bias2 = 1.0 - b2.powi(t);
    let step_size = T::of(config.learning_rate / bias1);
    let (b1t, b2t) = (T::of(b1), T::of(b2));
    let (one_b1, one_b2) = (T::of(1.0 - b1), T::of(1.0 - b2));
    let inv_sqrt_bias2 = T::of(1.0 / bias2.sqrt());
    let eps = T::of(config.epsilon);
    let wd = T::of(config.weight_decay);

    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        if p.shape() != g.shape() || state.m[i].len() != p.len() {
            return Err(Error::shape(format!("adam: parameter {i} {:?} vs gradient {:?}", p.shape(), g.shape())));
        }
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (((x, &gr), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            let gr = gr + wd * *x;
            *mi = b1t * *mi + one_b1 * gr;
            *vi = b2t * *vi + one_b2 * gr * gr;
            *x -= step_size * *mi / ((*vi).sqrt() * inv_sqrt_bias2 + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Scalar Adam written out from the textbook recurrence.
    fn scalar_adam(mut x: f64, grads: &[f64], c: &OptimizerConfig) -> f64 {
        let (mut m, mut v) = (0.0, 0.0);
        for (i, &g0) in grads.iter().enumerate() {
            let t = (i + 1) as i32;
            let g = g0 + c.weight_decay * x;
            m = c.beta1 * m + (1.0 - c.beta1) * g;
            v = c.beta2 * v + (1.0 - c.beta2) * g * g;
            let mhat = m / (1.0 - c.beta1.powi(t));
            let vhat = v / (1.0 - c.beta2.powi(t));
            x -= c.learning_rate * mhat / (vhat.sqrt() + c.epsilon);
        }
        x
    }

    fn step_n(x0: f64, grads: &[f64], c: &OptimizerConfig) -> f64 {
        let mut p = vec![Tensor::scalar(x0)];
        let mut st = AdamState::new(&p);
        for &g in grads {
            adam_step(&mut p, &[Tensor::scalar(g)], &mut st, c).unwrap();
        }
        assert_eq!(st.step, grads.len() as u64);
        p[0].item()
    }

    #[test]
    fn first_step_moves_by_learning_rate_times_sign() {
        let c = OptimizerConfig { weight_decay: 0.0, ..Default::default() };
        for g in [0.3, -7.0, 1e-3] {
            let d = step_n(1.0, &[g], &c) - 1.0;
            assert!((d + 1e-3 * g.signum()).abs() < 1e-7, "g={g}: Δ={d}");
        }
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let c = OptimizerConfig { weight_decay: 0.0, ..Default::default() };
        assert_eq!(step_n(0.37, &[0.0, 0.0, 0.0], &c), 0.37);
    }

    #[test]
    fn three_constant_steps_match_scalar_recurrence() {
        let c = OptimizerConfig { weight_decay: 0.0, ..Default::default() };
        let got = step_n(0.0, &[1.0; 3], &c);
        let expected = scalar_adam(0.0, &[1.0; 3], &c);
        assert!((got - expected).abs() < 1e-13);
        // Constant gradients keep m̂/√v̂ at 1, so each step is lr·1/(1+ε).
        assert!((got + 3.0 * 1e-3 / (1.0 + 1e-8)).abs() < 1e-12, "{got}");
    }

    #[test]
    fn weight_decay_is_coupled_into_the_gradient() {
        let c = OptimizerConfig::default();
        let got = step_n(2.0, &[0.5, -0.25, 0.1, 0.0], &c);
        assert!((got - scalar_adam(2.0, &[0.5, -0.25, 0.1, 0.0], &c)).abs() < 1e-13);
    }

    #[test]
    fn config_invariants_are_enforced() {
        assert!(OptimizerConfig::default().validate().is_ok());
        let bad = OptimizerConfig { beta1: 0.9999, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = OptimizerConfig { learning_rate: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
