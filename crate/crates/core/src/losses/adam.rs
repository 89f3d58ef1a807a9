//! Adaptive-moment (Adam) optimiser with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_iters: usize,
    /// Stop once the relative change of the loss between iterations drops
    /// below this value.
    pub convergence_tol: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_iters: 200,
            convergence_tol: 1e-6,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let betas = (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2);
        if !(self.learning_rate > 0.0) || !betas || self.max_iters == 0 || !(self.eps >= 0.0) || !(self.convergence_tol >= 0.0) {
            return Err(Error::InvalidParameter(format!("invalid optimiser settings {self:?}")));
        }
        Ok(())
    }

    /// True when `current` differs from `previous` by less than the tolerance.
    pub fn converged(&self, previous: f64, current: f64) -> bool {
        let scale = previous.abs().max(f64::MIN_POSITIVE);
        (current - previous).abs() / scale < self.convergence_tol
    }
}

/// Moment estimates for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// One update with the configured learning rate.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], config: &OptimConfig) {
        self.update(params, grads, config, |_| config.learning_rate);
    }

    /// One update with a per-parameter learning rate.
    pub fn step_scaled(&mut self, params: &mut [f64], grads: &[f64], config: &OptimConfig, learning_rates: &[f64]) {
        assert_eq!(learning_rates.len(), params.len(), "one learning rate per parameter");
        self.update(params, grads, config, |i| learning_rates[i]);
    }

    fn update(&mut self, params: &mut [f64], grads: &[f64], config: &OptimConfig, lr: impl Fn(usize) -> f64) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed");
        assert_eq!(grads.len(), self.m.len(), "gradient length mismatch");
        self.t += 1;
        let (b1, b2) = (config.beta1, config.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for (i, ((p, &g), (m, v))) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
            .enumerate()
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr(i) * m_hat / (v_hat.sqrt() + config.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_gradient_keeps_parameters_and_decays_moments() {
        let cfg = OptimConfig::default();
        let mut adam = Adam::new(2);
        let mut p = vec![1.0, -2.0];
        adam.step(&mut p, &[0.5, -0.5], &cfg);
        let m_before = adam.first_moment().to_vec();
        let mut fresh = Adam::new(2);
        let mut q = vec![1.0, -2.0];
        fresh.step(&mut q, &[0.0, 0.0], &cfg);
        assert_eq!(q, vec![1.0, -2.0]);
        adam.step(&mut p, &[0.0, 0.0], &cfg);
        for (after, before) in adam.first_moment().iter().zip(&m_before) {
            assert!((after - cfg.beta1 * before).abs() < 1e-15);
        }
    }

    #[test]
    fn memoryless_step_is_normalised_gradient() {
        let cfg = OptimConfig {
            beta1: 0.0,
            beta2: 0.0,
            learning_rate: 0.1,
            ..OptimConfig::default()
        };
        let mut adam = Adam::new(1);
        let mut p = [3.0];
        adam.step(&mut p, &[4.0], &cfg);
        assert!((p[0] - (3.0 - 0.1 * 4.0 / (4.0 + cfg.eps))).abs() < 1e-15);
    }

    #[test]
    fn quadratic_trajectory_matches_reference_rule() {
        let cfg = OptimConfig {
            learning_rate: 0.05,
            ..OptimConfig::default()
        };
        // Reference update written out longhand.
        let (mut x_ref, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        let mut adam = Adam::new(1);
        let mut x = [1.0];
        for t in 1..=10 {
            let g = 2.0 * x_ref;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x_ref -= 0.05 * mh / (vh.sqrt() + 1e-8);

            let grad = [2.0 * x[0]];
            adam.step(&mut x, &grad, &cfg);
            assert!((x[0] - x_ref).abs() < 1e-14, "step {t}: {} vs {x_ref}", x[0]);
        }
        assert!(x[0] < 1.0);
    }

    #[test]
    fn rejects_bad_config() {
        let bad = OptimConfig {
            beta1: 1.0,
            ..OptimConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn zero_gradient_is_identity_on_fresh_state(p in prop::collection::vec(-1e3f64..1e3, 1..20)) {
            let mut adam = Adam::new(p.len());
            let mut q = p.clone();
            adam.step(&mut q, &vec![0.0; p.len()], &OptimConfig::default());
            prop_assert_eq!(q, p);
        }
    }
}
