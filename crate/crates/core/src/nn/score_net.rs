use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{Activation, Mlp, Tape};
use crate::error::{Error, Result};

/// How the noise level enters the network.
///
/// In both modes the network output `o` is read as `sigma * s(x, sigma)`, i.e. the score is
/// `o / sigma`. `Conditional` additionally feeds `ln sigma` as an extra input coordinate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Conditioning {
    #[default]
    Unconditional,
    Conditional,
}

/// A score network `s_theta(x, sigma)` for `dim`-dimensional data.
#[derive(Clone, Debug)]
pub struct ScoreNet {
    pub mlp: Mlp,
    pub conditioning: Conditioning,
}

impl ScoreNet {
    pub fn new<R: Rng + ?Sized>(
        dim: usize,
        hidden: &[usize],
        activation: Activation,
        conditioning: Conditioning,
        rng: &mut R,
    ) -> Result<Self> {
        let mut widths = vec![Self::input_width(dim, conditioning)];
        widths.extend_from_slice(hidden);
        widths.push(dim);
        Ok(Self {
            mlp: Mlp::new(widths, activation, rng)?,
            conditioning,
        })
    }

    pub fn from_mlp(mlp: Mlp, conditioning: Conditioning) -> Result<Self> {
        let dim = mlp.output_dim();
        if mlp.input_dim() != Self::input_width(dim, conditioning) {
            return Err(Error::DimensionMismatch {
                expected: Self::input_width(dim, conditioning),
                got: mlp.input_dim(),
            });
        }
        Ok(Self { mlp, conditioning })
    }

    fn input_width(dim: usize, conditioning: Conditioning) -> usize {
        match conditioning {
            Conditioning::Unconditional => dim,
            Conditioning::Conditional => dim + 1,
        }
    }

    pub fn dim(&self) -> usize {
        self.mlp.output_dim()
    }

    /// Network inputs for row-major points `xs` with per-row noise levels.
    pub fn build_inputs(&self, xs: &[f64], sigmas: &[f64]) -> Vec<f64> {
        match self.conditioning {
            Conditioning::Unconditional => xs.to_vec(),
            Conditioning::Conditional => {
                let d = self.dim();
                let mut out = Vec::with_capacity(sigmas.len() * (d + 1));
                for (x, s) in xs.chunks_exact(d).zip(sigmas) {
                    out.extend_from_slice(x);
                    out.push(s.ln());
                }
                out
            }
        }
    }

    /// Forward pass returning the tape; the tape output is `sigma * s(x, sigma)` per row.
    pub fn forward(&self, xs: &[f64], sigmas: &[f64]) -> Result<Tape> {
        let d = self.dim();
        if xs.len() != sigmas.len() * d {
            return Err(Error::DimensionMismatch {
                expected: sigmas.len() * d,
                got: xs.len(),
            });
        }
        self.mlp.forward_batch(&self.build_inputs(xs, sigmas), sigmas.len())
    }

    /// Gradient of the network inputs back to the data coordinates (drops the `ln sigma` slot).
    pub fn data_input_grads(&self, input_grads: &[f64]) -> Vec<f64> {
        match self.conditioning {
            Conditioning::Unconditional => input_grads.to_vec(),
            Conditioning::Conditional => {
                let d = self.dim();
                input_grads
                    .chunks_exact(d + 1)
                    .flat_map(|row| row[..d].iter().copied())
                    .collect()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn conditional_input_layout() {
        let net = ScoreNet::new(2, &[4], Activation::Softplus, Conditioning::Conditional, &mut rng::stream(0, 1)).unwrap();
        assert_eq!(net.mlp.input_dim(), 3);
        let inputs = net.build_inputs(&[1.0, 2.0, 3.0, 4.0], &[1.0, std::f64::consts::E]);
        assert_eq!(inputs, vec![1.0, 2.0, 0.0, 3.0, 4.0, 1.0]);
        assert_eq!(net.data_input_grads(&inputs), vec![1.0, 2.0, 3.0, 4.0]);
    }
}
