use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Adam hyperparameters. `beta1` may be zero or negative.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_eps() -> f64 {
    1e-8
}

impl AdamConfig {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps: default_eps(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidConfig(format!("adam lr = {} must be > 0", self.lr)));
        }
        if !(self.beta1 > -1.0 && self.beta1 < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "adam beta1 = {} must lie in (-1, 1)",
                self.beta1
            )));
        }
        if !(self.beta2 > 0.0 && self.beta2 < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "adam beta2 = {} must lie in (0, 1)",
                self.beta2
            )));
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(Error::InvalidConfig(format!("adam eps = {} must be > 0", self.eps)));
        }
        Ok(())
    }
}

/// Bias-corrected Adam moments for one parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, n_params: usize) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        })
    }

    /// One update. Non-finite gradients abort before any state is touched.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::DimensionMismatch {
                expected: self.m.len(),
                got: if params.len() != self.m.len() { params.len() } else { grads.len() },
            });
        }
        if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient {
                index,
                step: self.step + 1,
            });
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        // |beta1| < 1 keeps the correction away from zero even for negative beta1.
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Scalar Adam written independently of the vector implementation.
    fn scalar_adam(p0: f64, grads: &[f64], lr: f64, b1: f64, b2: f64, eps: f64) -> (f64, f64, f64) {
        let (mut p, mut m, mut v) = (p0, 0.0, 0.0);
        for (i, g) in grads.iter().enumerate() {
            let t = (i + 1) as f64;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powf(t));
            let vh = v / (1.0 - b2.powf(t));
            p -= lr * mh / (vh.sqrt() + eps);
        }
        (p, m, v)
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = AdamState::new(AdamConfig::new(1e-3, 0.9, 0.999), 3).unwrap();
        let mut p = vec![1.0, -2.0, 3.0];
        s.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn zero_beta1_tracks_gradient() {
        let mut s = AdamState::new(AdamConfig::new(1e-3, 0.0, 0.9), 2).unwrap();
        let mut p = vec![0.0, 0.0];
        s.step(&mut p, &[1.0, 2.0]).unwrap();
        s.step(&mut p, &[-3.0, 0.5]).unwrap();
        assert_eq!(s.m, vec![-3.0, 0.5]);
    }

    #[test]
    fn negative_beta1_matches_scalar_reference() {
        let cfg = AdamConfig::new(0.01, -0.5, 0.9);
        let g = 0.7;
        let mut s = AdamState::new(cfg, 1).unwrap();
        let mut p = vec![0.2];
        for _ in 0..2 {
            s.step(&mut p, &[g]).unwrap();
        }
        let (p_ref, m_ref, v_ref) = scalar_adam(0.2, &[g, g], 0.01, -0.5, 0.9, 1e-8);
        // m_2 = -0.5 * (1.5 g) + 1.5 g = 0.75 g
        assert!((s.m[0] - 0.75 * g).abs() < 1e-15);
        assert!((s.m[0] - m_ref).abs() < 1e-15);
        assert!((s.v[0] - v_ref).abs() < 1e-15);
        assert!((p[0] - p_ref).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_aborts_untouched() {
        let mut s = AdamState::new(AdamConfig::new(1e-3, 0.9, 0.999), 2).unwrap();
        let mut p = vec![1.0, 1.0];
        let err = s.step(&mut p, &[0.5, f64::NAN]).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { index: 1, step: 1 }));
        assert_eq!(p, vec![1.0, 1.0]);
        assert_eq!(s.step, 0);
    }

    #[test]
    fn config_validation() {
        assert!(AdamState::new(AdamConfig::new(1e-3, -1.0, 0.9), 1).is_err());
        assert!(AdamState::new(AdamConfig::new(1e-3, 0.5, 1.0), 1).is_err());
        assert!(AdamState::new(AdamConfig::new(0.0, 0.5, 0.9), 1).is_err());
    }

    proptest::proptest! {
        #[test]
        fn negative_momentum_stays_finite(
            b1 in -0.99f64..0.99,
            grads in proptest::collection::vec(-1e3f64..1e3, 1..40),
        ) {
            let mut s = AdamState::new(AdamConfig::new(1e-2, b1, 0.9), 1).unwrap();
            let mut p = vec![0.0];
            for g in grads {
                s.step(&mut p, &[g]).unwrap();
                proptest::prop_assert!(p[0].is_finite());
                proptest::prop_assert!(s.v[0] >= 0.0);
            }
        }
    }
}
