use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// Bias-corrected adaptive moment estimation.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(n: usize, cfg: AdamConfig) -> Self {
        Self {
            cfg,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to `params` from `grads`.
    ///
    /// # Panics
    /// If the slices disagree in length with the optimizer state.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert!(params.len() == self.m.len() && grads.len() == self.m.len());
        self.step += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.cfg;
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = vec![0.3, -1.0];
        let mut opt = Adam::new(2, AdamConfig::default());
        opt.step(&mut p, &[0.0, 0.0]);
        assert_eq!(p, vec![0.3, -1.0]);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn constant_gradient_steps_approach_learning_rate() {
        // With g constant, m̂ = g and v̂ = g² exactly, so every step is
        // lr · g / (|g| + eps).
        let cfg = AdamConfig::default();
        let mut p = vec![0.0];
        let mut opt = Adam::new(1, cfg);
        for _ in 0..1000 {
            let before = p[0];
            opt.step(&mut p, &[2.5]);
            let step = before - p[0];
            assert!((step - cfg.learning_rate * 2.5 / (2.5 + cfg.epsilon)).abs() < 1e-15);
        }
        assert!((p[0] + 1000.0 * cfg.learning_rate).abs() < 1e-9);
    }

    #[test]
    fn first_step_matches_hand_computation() {
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..Default::default()
        };
        let mut p = vec![1.0, 1.0];
        let mut opt = Adam::new(2, cfg);
        opt.step(&mut p, &[0.5, -4.0]);
        assert!((p[0] - (1.0 - 0.1 * 0.5 / (0.5 + 1e-8))).abs() < 1e-15);
        opt.step(&mut p, &[1.5, -4.0]);
        // m = 0.9·0.05 + 0.15 = 0.195, v = 0.999·0.00025 + 0.001·2.25.
        let (m, v): (f64, f64) = (0.195 / (1.0 - 0.81), (0.999 * 0.00025 + 0.00225) / (1.0 - 0.998001));
        let expect = 1.0 - 0.1 * 0.5 / (0.5 + 1e-8) - 0.1 * m / (v.sqrt() + 1e-8);
        assert!((p[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn validation() {
        assert!(AdamConfig::default().validate().is_ok());
        assert!(AdamConfig { learning_rate: 0.0, ..Default::default() }.validate().is_err());
        assert!(AdamConfig { beta2: 1.0, ..Default::default() }.validate().is_err());
    }
}
