use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;

/// Isotropic Gaussian mixture `sum_k w_k N(mu_k, tau2 I)`.
///
/// `tau2 = 0` is a weighted mixture of Dirac atoms; a single atom is the Dirac data
/// distribution used by the noise-consistency oracles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    tau2: f64,
}

/// Centres of the 5x5 grid with the given spacing, centred at the origin.
pub fn grid25_means(spacing: f64) -> Vec<Vec<f64>> {
    (0..25)
        .map(|k| {
            vec![
                spacing * ((k / 5) as f64 - 2.0),
                spacing * ((k % 5) as f64 - 2.0),
            ]
        })
        .collect()
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, tau2: f64) -> Result<Self> {
        if means.is_empty() {
            return Err(Error::InvalidMixture("no components".into()));
        }
        if weights.len() != means.len() {
            return Err(Error::InvalidMixture(format!(
                "{} weights for {} means",
                weights.len(),
                means.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidMixture("weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidMixture(format!(
                "weights sum to {total}, not 1"
            )));
        }
        let dim = means[0].len();
        if dim == 0 || means.iter().any(|m| m.len() != dim) {
            return Err(Error::InvalidMixture(
                "means must share a positive dimension".into(),
            ));
        }
        if !(tau2.is_finite() && tau2 >= 0.0) {
            return Err(Error::InvalidMixture(format!("tau2 = {tau2} must be >= 0")));
        }
        Ok(Self {
            weights,
            means,
            tau2,
        })
    }

    pub fn uniform(means: Vec<Vec<f64>>, tau2: f64) -> Result<Self> {
        let k = means.len().max(1);
        Self::new(vec![1.0 / k as f64; means.len()], means, tau2)
    }

    /// Point mass at `x0`.
    pub fn dirac(x0: Vec<f64>) -> Result<Self> {
        Self::new(vec![1.0], vec![x0], 0.0)
    }

    /// 25 equally weighted isotropic Gaussians of standard deviation `tau`.
    pub fn grid25(spacing: f64, tau: f64) -> Result<Self> {
        Self::uniform(grid25_means(spacing), tau * tau)
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn tau2(&self) -> f64 {
        self.tau2
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim()];
        for (w, mu) in self.weights.iter().zip(&self.means) {
            for (a, b) in m.iter_mut().zip(mu) {
                *a += w * b;
            }
        }
        m
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    fn smoothed_variance(&self, sigma: f64) -> Result<f64> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sigma must be non-negative, got {sigma}"
            )));
        }
        let s2 = self.tau2 + sigma * sigma;
        if s2 <= 0.0 {
            return Err(Error::DegenerateDensity);
        }
        Ok(s2)
    }

    /// Max-shifted log-weights `log w_k - |x - mu_k|^2 / (2 s2)` and their log-sum-exp.
    fn log_terms(&self, x: &[f64], s2: f64) -> (Vec<f64>, f64) {
        let logits: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.means)
            .map(|(w, mu)| {
                let d2: f64 = x.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum();
                w.ln() - d2 / (2.0 * s2)
            })
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        (logits, lse)
    }

    /// Posterior responsibilities `r_k(x)` of the smoothed mixture at noise level `sigma`.
    pub fn responsibilities(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
        self.check_point(x)?;
        let s2 = self.smoothed_variance(sigma)?;
        let (logits, lse) = self.log_terms(x, s2);
        Ok(logits.iter().map(|l| (l - lse).exp()).collect())
    }

    /// `log q_sigma(x) = log sum_k w_k N(x; mu_k, (tau2 + sigma^2) I)`.
    pub fn smoothed_log_density(&self, x: &[f64], sigma: f64) -> Result<f64> {
        if sigma <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "smoothed density needs sigma > 0, got {sigma}"
            )));
        }
        self.check_point(x)?;
        let s2 = self.smoothed_variance(sigma)?;
        let (_, lse) = self.log_terms(x, s2);
        Ok(lse - 0.5 * self.dim() as f64 * (2.0 * PI * s2).ln())
    }

    /// Score of the smoothed density, `sum_k r_k (mu_k - x) / (tau2 + sigma^2)`.
    pub fn optimal_conditional_score(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
        let r = self.responsibilities(x, sigma)?;
        let s2 = self.tau2 + sigma * sigma;
        let mut out = vec![0.0; x.len()];
        for (rk, mu) in r.iter().zip(&self.means) {
            for ((o, m), xi) in out.iter_mut().zip(mu).zip(x) {
                *o += rk * (m - xi);
            }
        }
        out.iter_mut().for_each(|o| *o /= s2);
        Ok(out)
    }

    /// Posterior mean `E[x | x_tilde]`, `sum_k r_k (tau2 x + sigma^2 mu_k) / (tau2 + sigma^2)`.
    pub fn posterior_mean(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
        let r = self.responsibilities(x, sigma)?;
        let sig2 = sigma * sigma;
        let s2 = self.tau2 + sig2;
        let mut out = vec![0.0; x.len()];
        for (rk, mu) in r.iter().zip(&self.means) {
            for ((o, m), xi) in out.iter_mut().zip(mu).zip(x) {
                *o += rk * (self.tau2 * xi + sig2 * m);
            }
        }
        out.iter_mut().for_each(|o| *o /= s2);
        Ok(out)
    }
}

/// Minimiser of the unconditional denoising objective over a schedule:
/// `s(x) = (1/L) sum_i (H*(x, sigma_i) - x) / sigma_i`.
///
/// The implied per-level score is `s(x) / sigma_i`.
pub fn optimal_unconditional_score(
    mix: &GaussianMixture,
    x: &[f64],
    schedule: &NoiseSchedule,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; x.len()];
    for &sigma in schedule.sigmas() {
        let h = mix.posterior_mean(x, sigma)?;
        for ((o, hi), xi) in out.iter_mut().zip(&h).zip(x) {
            *o += (hi - xi) / sigma;
        }
    }
    let l = schedule.len() as f64;
    out.iter_mut().for_each(|o| *o /= l);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::schedule::geometric_schedule;
    use rand::Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1e-300)
    }

    #[test]
    fn validation() {
        assert!(GaussianMixture::new(vec![0.5, 0.4], vec![vec![0.0], vec![1.0]], 1.0).is_err());
        assert!(GaussianMixture::new(vec![1.0], vec![vec![0.0]], -1.0).is_err());
        assert!(GaussianMixture::new(vec![0.5, 0.5], vec![vec![0.0], vec![1.0, 2.0]], 1.0).is_err());
        assert!(GaussianMixture::new(vec![], vec![], 1.0).is_err());
    }

    #[test]
    fn single_gaussian_log_density() {
        let m = GaussianMixture::new(vec![1.0], vec![vec![0.0]], 1.0).unwrap();
        let v = m.smoothed_log_density(&[0.0], 1.0).unwrap();
        assert!(close(v, -0.5 * (4.0 * PI).ln(), 1e-15));
    }

    #[test]
    fn symmetric_pair_log_density() {
        let mu = 1.7;
        let pair = GaussianMixture::uniform(vec![vec![-mu], vec![mu]], 0.3).unwrap();
        let single = GaussianMixture::new(vec![1.0], vec![vec![0.0]], 0.3).unwrap();
        let a = pair.smoothed_log_density(&[0.0], 0.8).unwrap();
        let b = single.smoothed_log_density(&[mu], 0.8).unwrap();
        assert!(close(a, b, 1e-14));
    }

    #[test]
    fn log_density_matches_naive_sum() {
        let mix = GaussianMixture::grid25(2.0, 0.05).unwrap();
        let mut r = rng::stream(11, 0);
        for _ in 0..50 {
            let x = [r.random_range(-5.0..5.0), r.random_range(-5.0..5.0)];
            let sigma = r.random_range(0.5..3.0);
            let s2 = mix.tau2() + sigma * sigma;
            let naive: f64 = mix
                .weights()
                .iter()
                .zip(mix.means())
                .map(|(w, mu)| {
                    let d2 = (x[0] - mu[0]).powi(2) + (x[1] - mu[1]).powi(2);
                    w * (-d2 / (2.0 * s2)).exp() / (2.0 * PI * s2)
                })
                .sum::<f64>()
                .ln();
            let stable = mix.smoothed_log_density(&x, sigma).unwrap();
            assert!((naive - stable).abs() <= 1e-10 * naive.abs().max(1.0));
        }
    }

    #[test]
    fn gaussian_and_dirac_scores() {
        let m = GaussianMixture::new(vec![1.0], vec![vec![0.0]], 1.0).unwrap();
        assert_eq!(m.optimal_conditional_score(&[2.0], 1.0).unwrap(), vec![-1.0]);
        assert_eq!(m.posterior_mean(&[3.0], 1.0).unwrap(), vec![1.5]);

        let x0 = vec![0.3, -1.2];
        let d = GaussianMixture::dirac(x0.clone()).unwrap();
        for (x, sigma) in [([1.0, 2.0], 0.5), ([-4.0, 0.0], 3.0)] {
            let s = d.optimal_conditional_score(&x, sigma).unwrap();
            for i in 0..2 {
                assert!(close(s[i], (x0[i] - x[i]) / (sigma * sigma), 1e-14));
            }
            assert_eq!(d.posterior_mean(&x, sigma).unwrap(), x0);
        }
        assert!(matches!(
            d.optimal_conditional_score(&[0.0, 0.0], 0.0),
            Err(Error::DegenerateDensity)
        ));
        // sigma = 0 is allowed when the components have width.
        assert_eq!(m.optimal_conditional_score(&[2.0], 0.0).unwrap(), vec![-2.0]);
    }

    #[test]
    fn posterior_mean_limits() {
        let mix = GaussianMixture::grid25(2.0, 0.5).unwrap();
        let x = [0.7, -1.3];
        let small = mix.posterior_mean(&x, 1e-6).unwrap();
        assert!((small[0] - x[0]).abs() < 1e-9 && (small[1] - x[1]).abs() < 1e-9);
        let large = mix.posterior_mean(&x, 1e6).unwrap();
        let mean = mix.mean();
        assert!((large[0] - mean[0]).abs() < 1e-6 && (large[1] - mean[1]).abs() < 1e-6);
    }

    #[test]
    fn unconditional_dirac() {
        let x0 = vec![1.0, -2.0];
        let d = GaussianMixture::dirac(x0.clone()).unwrap();
        let x = [0.5, 0.5];

        let one = geometric_schedule(1.0, 1.0, 1).unwrap();
        let s = optimal_unconditional_score(&d, &x, &one).unwrap();
        assert_eq!(s, vec![0.5, -2.5]);

        let two = geometric_schedule(2.0, 1.0, 2).unwrap();
        let s = optimal_unconditional_score(&d, &x, &two).unwrap();
        for i in 0..2 {
            assert!(close(s[i], 0.75 * (x0[i] - x[i]), 1e-15));
        }
    }
}
