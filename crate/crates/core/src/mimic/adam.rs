use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Optimizer steps (mimicking) or epochs (training).
    pub iterations: usize,
    /// Clamp dose variables at zero after each step. Ignored for network weights.
    pub nonneg_projection: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
            iterations: 2000,
            nonneg_projection: true,
        }
    }
}

impl OptimizerConfig {
    /// Step size for optimizing raw voxel doses in Gy: 2e-4 Gy per step cannot travel
    /// tens of Gy in 2000 steps.
    pub fn mimic() -> Self {
        OptimizerConfig {
            lr: 0.1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::config(format!("lr must be positive, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::config("eps must be positive"));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        scheduled_lr(self.lr, step, self.iterations)
    }
}

/// Constant `base` for the first half of `total` steps, then linear decay reaching 0 at
/// `step == total`. Steps are 1-based.
pub fn scheduled_lr(base: f64, step: usize, total: usize) -> f64 {
    let half = total as f64 / 2.0;
    let s = step as f64;
    if s <= half || total == 0 {
        base
    } else {
        (base * (total as f64 - s) / (total as f64 - half)).max(0.0)
    }
}

/// Adam moments for a flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: u64,
}

impl<T: Float> Adam<T> {
    pub fn new(len: usize) -> Self {
        Adam {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected Adam update with step size `lr`, optionally projecting onto `params >= 0`.
    pub fn step(&mut self, params: &mut [T], grad: &[T], lr: f64, cfg: &OptimizerConfig, project: bool) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::GeometryMismatch(format!(
                "adam state has {} entries, params {}, grad {}",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite gradient {} at index {i} (step {})",
                grad[i].to_f64().unwrap_or(f64::NAN),
                self.t + 1
            )));
        }
        self.t += 1;
        let c = |x: f64| T::from(x).expect("float conversion");
        let (b1, b2) = (c(cfg.beta1), c(cfg.beta2));
        let bc1 = c(1.0 - cfg.beta1.powi(self.t as i32));
        let bc2 = c(1.0 - cfg.beta2.powi(self.t as i32));
        let (lr, eps, one) = (c(lr), c(cfg.eps), T::one());
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (one - b1) * g;
            self.v[i] = b2 * self.v[i] + (one - b2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            let mut p = params[i] - lr * m_hat / (v_hat.sqrt() + eps);
            if project && p < T::zero() {
                p = T::zero();
            }
            params[i] = p;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let cfg = OptimizerConfig::default();
        let mut adam = Adam::<f64>::new(3);
        let mut p = vec![1.0, -2.0, 3.5];
        adam.step(&mut p, &[0.0; 3], 0.1, &cfg, false).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.5]);
    }

    #[test]
    fn constant_gradient_step_tends_to_lr() {
        let cfg = OptimizerConfig::default();
        let mut adam = Adam::<f64>::new(1);
        let mut p = vec![0.0];
        let lr = 0.01;
        let mut last = 0.0;
        for _ in 0..5000 {
            let before = p[0];
            adam.step(&mut p, &[3.7], lr, &cfg, false).unwrap();
            last = before - p[0];
        }
        assert!((last - lr).abs() < 1e-6 * lr, "{last}");
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        // Bias correction makes m_hat = g, v_hat = g^2 on step 1.
        let cfg = OptimizerConfig::default();
        let mut adam = Adam::<f64>::new(2);
        let mut p = vec![1.0, 1.0];
        adam.step(&mut p, &[1e-3, -50.0], 0.1, &cfg, false).unwrap();
        assert!((p[0] - (1.0 - 0.1 * 1e-3 / (1e-3 + 1e-8))).abs() < 1e-15);
        assert!((p[1] - (1.0 + 0.1 * 50.0 / (50.0 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn projection_keeps_nonnegative() {
        let cfg = OptimizerConfig::default();
        let mut adam = Adam::<f64>::new(2);
        let mut p = vec![0.0, 0.05];
        for _ in 0..10 {
            adam.step(&mut p, &[1.0, 1.0], 0.1, &cfg, true).unwrap();
            assert!(p.iter().all(|x| *x >= 0.0));
        }
        assert_eq!(p, vec![0.0, 0.0]);
    }

    #[test]
    fn nan_gradient_aborts() {
        let cfg = OptimizerConfig::default();
        let mut adam = Adam::<f32>::new(2);
        let mut p = vec![0.0f32; 2];
        let err = adam.step(&mut p, &[0.0, f32::NAN], 0.1, &cfg, false).unwrap_err();
        assert!(err.is_numerical());
        assert!(err.to_string().contains("index 1"));
    }

    #[test]
    fn schedule_shape() {
        // 2N = 10 epochs: base up to N, then base * (2N - E) / N.
        let base = 2e-4;
        for e in 1..=5 {
            assert_eq!(scheduled_lr(base, e, 10), base);
        }
        for e in 6..=10 {
            let expected = base * (10 - e) as f64 / 5.0;
            assert!((scheduled_lr(base, e, 10) - expected).abs() < 1e-18);
        }
        assert_eq!(scheduled_lr(base, 10, 10), 0.0);
    }

    #[test]
    fn invalid_configs() {
        let bad = [
            OptimizerConfig { lr: 0.0, ..Default::default() },
            OptimizerConfig { beta1: 1.0, ..Default::default() },
            OptimizerConfig { beta2: -0.1, ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err());
        }
        OptimizerConfig::default().validate().unwrap();
    }
}
