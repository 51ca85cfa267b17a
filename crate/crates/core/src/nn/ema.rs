use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exponential moving average of parameters: `shadow <- m * shadow + (1 - m) * params`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmaState {
    pub decay: f64,
    pub shadow: Vec<f64>,
}

impl EmaState {
    pub fn new(decay: f64, shadow: Vec<f64>) -> Result<Self> {
        if !(0.0..1.0).contains(&decay) {
            return Err(Error::InvalidConfig(format!(
                "EMA decay = {decay} must lie in [0, 1)"
            )));
        }
        Ok(Self { decay, shadow })
    }

    pub fn update(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.shadow.len() {
            return Err(Error::DimensionMismatch {
                expected: self.shadow.len(),
                got: params.len(),
            });
        }
        let m = self.decay;
        for (s, p) in self.shadow.iter_mut().zip(params) {
            *s = m * *s + (1.0 - m) * p;
        }
        Ok(())
    }
}
