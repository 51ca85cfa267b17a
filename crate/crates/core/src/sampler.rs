//! Annealed Langevin sampling (ALS), consistent annealed sampling (CAS), expected denoised
//! samples and final-step denoising.
//!
//! Both samplers advance a set of independent chains. Each chain owns a counter-based random
//! stream addressed by `(seed, chain index)` and draws exactly one Gaussian vector per update,
//! so a chain's trajectory does not depend on which other chains run alongside it.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ScoreModel;
use crate::rng::{self, StreamRng};
use crate::schedule::{cas_constants, dilate, NoiseSchedule};

/// Chain streams live above the ids reserved in [`rng::streams`].
const CHAIN_STREAM_BASE: u64 = 1 << 32;

/// Abort when a chain leaves this many multiples of `sigma_1`.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Als,
    Cas,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    #[default]
    PureNoise,
    DataPlusNoise,
}

/// Starting distribution of the chains.
#[derive(Clone, Copy, Debug)]
pub enum Init<'a> {
    /// `x ~ N(0, sigma0^2 I)`.
    PureNoise { sigma0: f64 },
    /// `x = data[k] + sigma0 z` with `k` drawn uniformly by each chain.
    DataPlusNoise { data: &'a [Vec<f64>], sigma0: f64 },
}

#[derive(Clone, Debug)]
pub struct ChainState {
    pub x: Vec<f64>,
    /// Number of updates applied so far.
    pub step: usize,
    pub chain: u64,
    rng: StreamRng,
}

impl ChainState {
    pub fn new(x: Vec<f64>, chain: u64, seed: u64) -> Self {
        Self {
            x,
            step: 0,
            chain,
            rng: rng::stream(seed, CHAIN_STREAM_BASE + chain),
        }
    }
}

/// Where a sampler is when it reports to an observer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInfo {
    /// 1-based global update count.
    pub step: usize,
    /// 0-based index of the noise level used by this update.
    pub level: usize,
    pub sigma: f64,
}

pub type Observer<'o> = &'o mut dyn FnMut(&StepInfo, &[ChainState]);

pub fn init_chains(init: &Init<'_>, dim: usize, seed: u64, chains: Range<u64>) -> Result<Vec<ChainState>> {
    let sigma0 = match init {
        Init::PureNoise { sigma0 } | Init::DataPlusNoise { sigma0, .. } => *sigma0,
    };
    if !(sigma0.is_finite() && sigma0 >= 0.0) {
        return Err(Error::InvalidArgument(format!("sigma0 = {sigma0} must be >= 0")));
    }
    if let Init::DataPlusNoise { data, .. } = init {
        if data.is_empty() {
            return Err(Error::EmptyInput("initialisation data"));
        }
        if let Some(p) = data.iter().find(|p| p.len() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, got: p.len() });
        }
    }
    Ok(chains
        .map(|c| {
            let mut state = ChainState::new(vec![0.0; dim], c, seed);
            let base = match init {
                Init::PureNoise { .. } => None,
                Init::DataPlusNoise { data, .. } => Some(&data[state.rng.random_range(0..data.len())]),
            };
            let z = rng::normal_vec(&mut state.rng, dim);
            for (i, x) in state.x.iter_mut().enumerate() {
                *x = base.map_or(0.0, |b| b[i]) + sigma0 * z[i];
            }
            state
        })
        .collect())
}

fn check_dims(model: &dyn ScoreModel, chains: &[ChainState]) -> Result<()> {
    if let Some(c) = chains.iter().find(|c| c.x.len() != model.dim()) {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: c.x.len() });
    }
    Ok(())
}

fn gather(chains: &[ChainState]) -> Vec<f64> {
    chains.iter().flat_map(|c| c.x.iter().copied()).collect()
}

fn guard(chain: &ChainState, limit: f64) -> Result<()> {
    let norm = chain.x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !norm.is_finite() || norm > limit {
        return Err(Error::Divergence { step: chain.step, chain: chain.chain, norm });
    }
    Ok(())
}

/// One sampler update over all chains: `x <- x + alpha s(x, sigma) + noise_scale z`.
fn update(
    model: &dyn ScoreModel,
    chains: &mut [ChainState],
    sigma: f64,
    alpha: f64,
    noise_scale: f64,
    limit: f64,
) -> Result<()> {
    let d = model.dim();
    let scores = model.score_batch(&gather(chains), sigma)?;
    for (c, s) in chains.iter_mut().zip(scores.chunks_exact(d)) {
        let z = rng::normal_vec(&mut c.rng, d);
        for ((x, si), zi) in c.x.iter_mut().zip(s).zip(&z) {
            *x += alpha * si + noise_scale * zi;
        }
        c.step += 1;
        guard(c, limit)?;
    }
    Ok(())
}

/// Annealed Langevin sampling: `n_sigma` steps per level with `alpha_i = eps sigma_i^2 / sigma_L^2`
/// and noise `sqrt(2 alpha_i) z`.
pub fn als_sample(
    model: &dyn ScoreModel,
    schedule: &NoiseSchedule,
    epsilon: f64,
    n_sigma: usize,
    chains: &mut [ChainState],
    mut observer: Option<Observer<'_>>,
) -> Result<()> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon = {epsilon} must be > 0")));
    }
    if n_sigma == 0 {
        return Err(Error::InvalidArgument("n_sigma must be at least 1".into()));
    }
    check_dims(model, chains)?;
    let limit = DIVERGENCE_FACTOR * schedule.sigma1();
    let sl2 = schedule.sigma_l() * schedule.sigma_l();
    let mut step = 0;
    for (level, &sigma) in schedule.sigmas().iter().enumerate() {
        let alpha = epsilon * sigma * sigma / sl2;
        for _ in 0..n_sigma {
            step += 1;
            update(model, chains, sigma, alpha, (2.0 * alpha).sqrt(), limit)?;
            if let Some(obs) = observer.as_mut() {
                obs(&StepInfo { step, level, sigma }, chains);
            }
        }
    }
    Ok(())
}

/// Consistent annealed sampling: one step per level,
/// `x <- x + alpha_i s(x, sigma_i) + beta sigma_{i+1} z` with `sigma_{L+1} = 0`.
///
/// More steps per level are obtained by dilating the schedule beforehand.
pub fn cas_sample(
    model: &dyn ScoreModel,
    schedule: &NoiseSchedule,
    epsilon: f64,
    chains: &mut [ChainState],
    observer: Option<Observer<'_>>,
) -> Result<()> {
    let consts = cas_constants(schedule, epsilon)?;
    cas_sample_with_beta(model, schedule, epsilon, consts.beta, chains, observer)
}

/// [`cas_sample`] with an explicit noise factor in place of the consistent `beta`.
pub fn cas_sample_with_beta(
    model: &dyn ScoreModel,
    schedule: &NoiseSchedule,
    epsilon: f64,
    beta: f64,
    chains: &mut [ChainState],
    mut observer: Option<Observer<'_>>,
) -> Result<()> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon = {epsilon} must be > 0")));
    }
    check_dims(model, chains)?;
    let limit = DIVERGENCE_FACTOR * schedule.sigma1();
    let sigmas = schedule.sigmas();
    let sl2 = schedule.sigma_l() * schedule.sigma_l();
    for (level, &sigma) in sigmas.iter().enumerate() {
        let alpha = epsilon * sigma * sigma / sl2;
        let next = sigmas.get(level + 1).copied().unwrap_or(0.0);
        update(model, chains, sigma, alpha, beta * next, limit)?;
        if let Some(obs) = observer.as_mut() {
            obs(&StepInfo { step: level + 1, level, sigma }, chains);
        }
    }
    Ok(())
}

/// Expected denoised sample recovered from a score, `H(x, sigma) = sigma^2 s(x, sigma) + x`.
pub fn eds(model: &dyn ScoreModel, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma = {sigma} must be > 0")));
    }
    let s = model.score(x, sigma)?;
    Ok(x.iter().zip(&s).map(|(xi, si)| sigma * sigma * si + xi).collect())
}

/// Replaces each sample by its expected denoised sample at `sigma_l`.
///
/// Not idempotent in general: a second application may move samples again.
pub fn denoise_final(model: &dyn ScoreModel, samples: &[Vec<f64>], sigma_l: f64) -> Result<Vec<Vec<f64>>> {
    if !(sigma_l > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma_L = {sigma_l} must be > 0")));
    }
    if samples.is_empty() {
        return Ok(Vec::new());
    }
    let d = model.dim();
    let flat: Vec<f64> = samples.iter().flat_map(|p| p.iter().copied()).collect();
    if flat.len() != samples.len() * d {
        return Err(Error::DimensionMismatch { expected: d, got: flat.len() / samples.len() });
    }
    let s = model.score_batch(&flat, sigma_l)?;
    let s2 = sigma_l * sigma_l;
    Ok(samples
        .iter()
        .zip(s.chunks_exact(d))
        .map(|(x, si)| x.iter().zip(si).map(|(a, b)| s2 * b + a).collect())
        .collect())
}

/// Noise term of a sampler update in interpolation form.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepKind {
    /// `sqrt(2 eta) sigma_i z`.
    Als,
    /// `beta sigma_{i+1} z`.
    Cas { beta: f64 },
}

/// Sampler update written as a move toward the expected denoised sample:
/// `(1 - eta) x + eta H(x, sigma_i) + noise`.
pub fn interpolation_step(
    model: &dyn ScoreModel,
    x: &[f64],
    sigma_i: f64,
    sigma_next: f64,
    eta: f64,
    kind: StepKind,
    z: &[f64],
) -> Result<Vec<f64>> {
    let h = eds(model, x, sigma_i)?;
    let noise = match kind {
        StepKind::Als => (2.0 * eta).sqrt() * sigma_i,
        StepKind::Cas { beta } => beta * sigma_next,
    };
    Ok(x.iter()
        .zip(&h)
        .zip(z)
        .map(|((xi, hi), zi)| (1.0 - eta) * xi + eta * hi + noise * zi)
        .collect())
}

/// The same update in the samplers' direct form, `x + alpha_i s(x, sigma_i) + noise`.
#[allow(clippy::too_many_arguments)]
pub fn direct_step(
    model: &dyn ScoreModel,
    x: &[f64],
    sigma_i: f64,
    sigma_next: f64,
    sigma_l: f64,
    epsilon: f64,
    kind: StepKind,
    z: &[f64],
) -> Result<Vec<f64>> {
    let alpha = epsilon * sigma_i * sigma_i / (sigma_l * sigma_l);
    let s = model.score(x, sigma_i)?;
    let noise = match kind {
        StepKind::Als => (2.0 * alpha).sqrt(),
        StepKind::Cas { beta } => beta * sigma_next,
    };
    Ok(x.iter()
        .zip(&s)
        .zip(z)
        .map(|((xi, si), zi)| xi + alpha * si + noise * zi)
        .collect())
}

/// Pooled standard deviation of `x - x0` over all chains and coordinates, with its standard
/// error `std / sqrt(2 N)` for zero-mean Gaussian residuals.
pub fn residual_noise_std(chains: &[ChainState], x0: &[f64]) -> (f64, f64) {
    let mut sum = 0.0;
    let mut n = 0usize;
    for c in chains {
        for (x, a) in c.x.iter().zip(x0) {
            sum += (x - a) * (x - a);
            n += 1;
        }
    }
    let std = (sum / n as f64).sqrt();
    (std, std / (2.0 * n as f64).sqrt())
}

/// Settings of one sampling run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRunConfig {
    pub variant: Variant,
    pub epsilon: f64,
    #[serde(default = "one")]
    pub n_sigma: usize,
    #[serde(default)]
    pub denoise_final: bool,
    #[serde(default)]
    pub init: InitMode,
    /// Initial noise scale; defaults to `sigma_1 / gamma` of the sampling schedule.
    #[serde(default)]
    pub sigma0: Option<f64>,
    pub chains: usize,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug)]
pub struct SampleOutput {
    pub samples: Vec<Vec<f64>>,
    /// Present when `denoise_final` was requested.
    pub denoised: Option<Vec<Vec<f64>>>,
    /// Levels actually visited (dilated for CAS with `n_sigma > 1`).
    pub schedule: NoiseSchedule,
    pub sigma0: f64,
}

/// Runs a full sampling experiment over `schedule` (the training schedule).
pub fn run_sampler(
    model: &dyn ScoreModel,
    schedule: &NoiseSchedule,
    config: &SampleRunConfig,
    data: Option<&[Vec<f64>]>,
    observer: Option<Observer<'_>>,
) -> Result<SampleOutput> {
    if config.chains == 0 {
        return Err(Error::InvalidConfig("chains must be at least 1".into()));
    }
    if config.n_sigma == 0 {
        return Err(Error::InvalidConfig("n_sigma must be at least 1".into()));
    }
    let used = match config.variant {
        Variant::Als => schedule.clone(),
        Variant::Cas => dilate(schedule, config.n_sigma)?,
    };
    let sigma0 = config.sigma0.unwrap_or_else(|| used.sigma0());
    let init = match config.init {
        InitMode::PureNoise => Init::PureNoise { sigma0 },
        InitMode::DataPlusNoise => Init::DataPlusNoise {
            data: data.ok_or_else(|| Error::InvalidConfig("data-plus-noise init needs a dataset".into()))?,
            sigma0,
        },
    };
    let mut chains = init_chains(&init, model.dim(), config.seed, 0..config.chains as u64)?;
    match config.variant {
        Variant::Als => als_sample(model, &used, config.epsilon, config.n_sigma, &mut chains, observer)?,
        Variant::Cas => cas_sample(model, &used, config.epsilon, &mut chains, observer)?,
    }
    let samples: Vec<Vec<f64>> = chains.into_iter().map(|c| c.x).collect();
    let denoised = if config.denoise_final {
        Some(denoise_final(model, &samples, used.sigma_l())?)
    } else {
        None
    };
    Ok(SampleOutput { samples, denoised, schedule: used, sigma0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::GaussianMixture;
    use crate::model::ZeroScore;
    use crate::schedule::{cas_constants_from_eta, geometric_schedule};

    #[test]
    fn zero_model_single_als_step() {
        let s = geometric_schedule(2.0, 2.0, 1).unwrap();
        let mut chains = init_chains(&Init::PureNoise { sigma0: 0.0 }, 3, 9, 0..4).unwrap();
        let mut expected = Vec::new();
        for c in &chains {
            let mut r = c.rng.clone();
            expected.push(rng::normal_vec(&mut r, 3));
        }
        let eps = 0.3;
        als_sample(&ZeroScore(3), &s, eps, 1, &mut chains, None).unwrap();
        let alpha: f64 = eps; // sigma_1 = sigma_L
        for (c, z) in chains.iter().zip(&expected) {
            for (x, zi) in c.x.iter().zip(z) {
                assert_eq!(*x, (2.0 * alpha).sqrt() * zi);
            }
            assert_eq!(c.step, 1);
        }
    }

    #[test]
    fn zero_model_single_level_cas_is_identity() {
        let s = geometric_schedule(1.0, 1.0, 1).unwrap();
        let mut chains = init_chains(&Init::PureNoise { sigma0: 1.0 }, 2, 1, 0..5).unwrap();
        let before: Vec<Vec<f64>> = chains.iter().map(|c| c.x.clone()).collect();
        cas_sample(&ZeroScore(2), &s, 0.5, &mut chains, None).unwrap();
        for (c, b) in chains.iter().zip(&before) {
            assert_eq!(&c.x, b);
        }
    }

    #[test]
    fn dirac_eds_and_denoise() {
        let x0 = vec![0.5, -1.0];
        let d = GaussianMixture::dirac(x0.clone()).unwrap();
        for x in [[3.0, 4.0], [-1.0, 0.25]] {
            let h = eds(&d, &x, 0.7).unwrap();
            assert!((h[0] - x0[0]).abs() < 1e-14 && (h[1] - x0[1]).abs() < 1e-14);
        }
        let out = denoise_final(&d, &[vec![1.0, 1.0], vec![-2.0, 5.0]], 0.1).unwrap();
        for p in out {
            assert!((p[0] - x0[0]).abs() < 1e-12 && (p[1] - x0[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_eds_halves() {
        let g = GaussianMixture::new(vec![1.0], vec![vec![0.0]], 1.0).unwrap();
        let h = eds(&g, &[2.0], 1.0).unwrap();
        assert!((h[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn denoising_is_not_idempotent() {
        let g = GaussianMixture::new(vec![1.0], vec![vec![0.0]], 1.0).unwrap();
        let once = denoise_final(&g, &[vec![2.0]], 1.0).unwrap();
        let twice = denoise_final(&g, &once, 1.0).unwrap();
        assert_ne!(once, twice);
    }

    #[test]
    fn interpolation_limits() {
        let g = GaussianMixture::grid25(2.0, 0.3).unwrap();
        let x = [0.3, 1.1];
        let z = [0.4, -0.2];
        let h = eds(&g, &x, 0.8).unwrap();
        let pure = interpolation_step(&g, &x, 0.8, 0.5, 1.0, StepKind::Cas { beta: 1.0 }, &z).unwrap();
        for i in 0..2 {
            assert!((pure[i] - (h[i] + 0.5 * z[i])).abs() < 1e-14);
        }
        let id = interpolation_step(&g, &x, 0.8, 0.5, 0.0, StepKind::Als, &[0.0, 0.0]).unwrap();
        assert_eq!(id, x.to_vec());
    }

    #[test]
    fn direct_and_interpolation_forms_agree() {
        let g = GaussianMixture::grid25(2.0, 0.2).unwrap();
        let s = geometric_schedule(5.0, 0.1, 10).unwrap();
        let c = cas_constants_from_eta(&s, 0.4).unwrap();
        let x = [1.3, -0.4];
        let z = [0.9, 1.7];
        for kind in [StepKind::Als, StepKind::Cas { beta: c.beta }] {
            let a = direct_step(&g, &x, s.sigmas()[3], s.sigmas()[4], s.sigma_l(), c.epsilon, kind, &z).unwrap();
            let b = interpolation_step(&g, &x, s.sigmas()[3], s.sigmas()[4], c.eta, kind, &z).unwrap();
            for i in 0..2 {
                assert!((a[i] - b[i]).abs() <= 1e-10 * a[i].abs().max(1e-300));
            }
        }
    }

    #[test]
    fn chains_reproduce_in_isolation() {
        let g = GaussianMixture::grid25(2.0, 0.1).unwrap();
        let s = geometric_schedule(4.0, 0.1, 8).unwrap();
        let init = Init::PureNoise { sigma0: s.sigma0() };
        let mut all = init_chains(&init, 2, 77, 0..10).unwrap();
        cas_sample(&g, &s, 0.5 * 0.01, &mut all, None).unwrap();
        let mut alone = init_chains(&init, 2, 77, 6..7).unwrap();
        cas_sample(&g, &s, 0.5 * 0.01, &mut alone, None).unwrap();
        assert_eq!(alone[0].x, all[6].x);
    }

    #[test]
    fn divergence_is_reported() {
        // A repulsive "score" pushes chains out exponentially.
        struct Repel;
        impl ScoreModel for Repel {
            fn dim(&self) -> usize { 1 }
            fn is_conditional(&self) -> bool { true }
            fn score(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
                Ok(vec![1e3 * x[0] / (sigma * sigma)])
            }
        }
        let s = geometric_schedule(1.0, 0.1, 30).unwrap();
        let mut chains = init_chains(&Init::PureNoise { sigma0: 1.0 }, 1, 0, 0..2).unwrap();
        let err = als_sample(&Repel, &s, 0.01, 3, &mut chains, None).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }

    #[test]
    fn cas_propagates_step_too_small() {
        let s = geometric_schedule(1.0, 0.5, 2).unwrap();
        let mut chains = init_chains(&Init::PureNoise { sigma0: 1.0 }, 1, 0, 0..1).unwrap();
        let err = cas_sample(&ZeroScore(1), &s, 0.1 * 0.25, &mut chains, None).unwrap_err();
        assert!(matches!(err, Error::StepTooSmall { .. }));
    }
}
