//! The score-model interface shared by analytic oracles and trained networks.

use crate::analytic::{optimal_unconditional_score, GaussianMixture};
use crate::error::{Error, Result};
use crate::nn::{Conditioning, ScoreNet};
use crate::schedule::NoiseSchedule;

/// Anything that evaluates `s(x, sigma)`. Implementations must be shareable across chains.
pub trait ScoreModel: Sync {
    fn dim(&self) -> usize;

    /// `false` when the model is `s(x) / sigma` for a sigma-free `s`.
    fn is_conditional(&self) -> bool;

    fn score(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>>;

    /// Scores of row-major points `xs` at a common noise level.
    fn score_batch(&self, xs: &[f64], sigma: f64) -> Result<Vec<f64>> {
        let d = self.dim();
        let mut out = Vec::with_capacity(xs.len());
        for x in xs.chunks_exact(d) {
            out.extend(self.score(x, sigma)?);
        }
        Ok(out)
    }
}

impl ScoreModel for GaussianMixture {
    fn dim(&self) -> usize {
        GaussianMixture::dim(self)
    }

    fn is_conditional(&self) -> bool {
        true
    }

    fn score(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
        self.optimal_conditional_score(x, sigma)
    }
}

/// The best sigma-free score for a mixture over a training schedule, used as `s(x) / sigma`.
#[derive(Clone, Debug)]
pub struct UnconditionalOracle {
    pub mixture: GaussianMixture,
    pub schedule: NoiseSchedule,
}

impl ScoreModel for UnconditionalOracle {
    fn dim(&self) -> usize {
        self.mixture.dim()
    }

    fn is_conditional(&self) -> bool {
        false
    }

    fn score(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
        let s = optimal_unconditional_score(&self.mixture, x, &self.schedule)?;
        Ok(s.into_iter().map(|v| v / sigma).collect())
    }
}

/// The identically-zero score.
#[derive(Clone, Copy, Debug)]
pub struct ZeroScore(pub usize);

impl ScoreModel for ZeroScore {
    fn dim(&self) -> usize {
        self.0
    }

    fn is_conditional(&self) -> bool {
        true
    }

    fn score(&self, x: &[f64], _sigma: f64) -> Result<Vec<f64>> {
        if x.len() != self.0 {
            return Err(Error::DimensionMismatch { expected: self.0, got: x.len() });
        }
        Ok(vec![0.0; self.0])
    }
}

impl ScoreModel for ScoreNet {
    fn dim(&self) -> usize {
        ScoreNet::dim(self)
    }

    fn is_conditional(&self) -> bool {
        self.conditioning == Conditioning::Conditional
    }

    fn score(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
        self.score_batch(x, sigma)
    }

    fn score_batch(&self, xs: &[f64], sigma: f64) -> Result<Vec<f64>> {
        let n = xs.len() / self.dim();
        let tape = self.forward(xs, &vec![sigma; n])?;
        Ok(tape.output().iter().map(|o| o / sigma).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use crate::rng;

    #[test]
    fn batch_default_matches_single() {
        let mix = GaussianMixture::grid25(2.0, 0.3).unwrap();
        let xs = [0.1, 0.2, -3.0, 1.0];
        let b = mix.score_batch(&xs, 0.7).unwrap();
        assert_eq!(&b[..2], &mix.score(&xs[..2], 0.7).unwrap()[..]);
        assert_eq!(&b[2..], &mix.score(&xs[2..], 0.7).unwrap()[..]);
    }

    #[test]
    fn net_score_is_output_over_sigma() {
        let net = ScoreNet::new(2, &[8], Activation::Softplus, Conditioning::Unconditional, &mut rng::stream(3, 1)).unwrap();
        let x = [0.4, -0.2];
        let out = net.mlp.forward(&x).unwrap();
        let s = net.score(&x, 0.5).unwrap();
        assert!((s[0] - out[0] / 0.5).abs() < 1e-15 && (s[1] - out[1] / 0.5).abs() < 1e-15);
        assert!(!net.is_conditional());
    }
}
