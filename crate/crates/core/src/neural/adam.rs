use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay applied as `θ ← θ − lr·λ·θ` after each update.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Bias-corrected Adam with per-tensor moment buffers.
#[derive(Debug, Clone)]
pub struct Adam<S> {
    pub config: AdamConfig,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
    t: u64,
}

impl<S: Scalar> Adam<S> {
    pub fn new(config: AdamConfig, ps: &ParamStore<S>) -> Self {
        assert!(config.lr > 0.0, "learning rate must be positive");
        assert!((0.0..1.0).contains(&config.beta1) && (0.0..1.0).contains(&config.beta2));
        let zeros = |ps: &ParamStore<S>| {
            ps.params()
                .iter()
                .map(|p| vec![S::zero(); p.value.len()])
                .collect::<Vec<_>>()
        };
        Self {
            config,
            m: zeros(ps),
            v: zeros(ps),
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &[Vec<S>] {
        &self.m
    }

    pub fn second_moment(&self) -> &[Vec<S>] {
        &self.v
    }

    /// Apply one update using the gradients currently held in `ps`.
    pub fn step(&mut self, ps: &mut ParamStore<S>) {
        self.t += 1;
        let c = self.config;
        let (b1, b2) = (S::lit(c.beta1), S::lit(c.beta2));
        let bc1 = S::one() - S::lit(c.beta1.powi(self.t as i32));
        let bc2 = S::one() - S::lit(c.beta2.powi(self.t as i32));
        let lr = S::lit(c.lr);
        let eps = S::lit(c.eps);
        let decay = S::one() - S::lit(c.lr * c.weight_decay);
        for ((p, m), v) in ps.params_mut().iter_mut().zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = b1 * m[i] + (S::one() - b1) * g;
                v[i] = b2 * v[i] + (S::one() - b2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p.value[i] = p.value[i] * decay - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore<f64> {
        let mut ps = ParamStore::new(0);
        ps.uniform("w", &[2, 3], 1.0);
        ps
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut ps = store();
        let before = ps.params()[0].value.clone();
        ps.params_mut()[0].grad.iter_mut().for_each(|g| *g = 1.0);
        let mut opt = Adam::new(AdamConfig::default(), &ps);
        opt.step(&mut ps);
        for (a, b) in ps.params()[0].value.iter().zip(&before) {
            assert!(((a - b) + 1e-4).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_gradient_keeps_params_and_decays_moments() {
        let mut ps = store();
        let mut opt = Adam::new(AdamConfig::default(), &ps);
        ps.params_mut()[0].grad.iter_mut().for_each(|g| *g = 0.5);
        opt.step(&mut ps);
        let m1 = opt.first_moment()[0][0];
        let v1 = opt.second_moment()[0][0];
        let before = ps.params()[0].value.clone();
        ps.zero_grad();
        opt.step(&mut ps);
        // the bias-corrected momentum still carries the previous gradient
        assert!((opt.first_moment()[0][0] - 0.9 * m1).abs() < 1e-15);
        assert!((opt.second_moment()[0][0] - 0.999 * v1).abs() < 1e-15);
        let mut ps2 = store();
        let mut opt2 = Adam::new(AdamConfig::default(), &ps2);
        ps2.zero_grad();
        opt2.step(&mut ps2);
        assert_eq!(ps2.params()[0].value, store().params()[0].value);
        assert_ne!(ps.params()[0].value, before);
    }

    #[test]
    fn two_steps_match_hand_trace() {
        let cfg = AdamConfig {
            lr: 0.01,
            ..Default::default()
        };
        let mut ps = ParamStore::<f64>::new(0);
        let id = ps.zeros("x", &[1]);
        ps.value_mut(id)[0] = 1.0;
        let mut opt = Adam::new(cfg, &ps);
        let g = 0.3;
        // hand-rolled recurrence
        let (mut m, mut v, mut x) = (0.0f64, 0.0f64, 1.0f64);
        for t in 1..=2 {
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= 0.01 * mh / (vh.sqrt() + 1e-8);
            ps.grad_mut(id)[0] = g;
            opt.step(&mut ps);
        }
        assert!((ps.value(id)[0] - x).abs() < 1e-15);
        // constant gradient: each step moves by ~lr
        assert!((x - 0.98).abs() < 1e-6);
    }
}
