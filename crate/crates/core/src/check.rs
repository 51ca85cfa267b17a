//! The oracle battery: every sampler and optimal-score identity, run as named checks with
//! measured values and tolerances.
//!
//! The Monte Carlo experiments used by the battery are public so tests and the CLI can run
//! them with other settings.

use rand::Rng;
use serde::Serialize;

use crate::analytic::{optimal_unconditional_score, GaussianMixture};
use crate::error::Result;
use crate::nn::{Activation, Conditioning, Mlp, ScoreNet};
use crate::noisetrace::{als_limit, als_trace, cas_trace_with_beta};
use crate::rng::{self, StreamRng};
use crate::sampler::{
    als_sample, cas_sample_with_beta, direct_step, init_chains, interpolation_step, residual_noise_std, ChainState,
    Init, StepInfo, StepKind,
};
use crate::schedule::{cas_constants_from_eta, dilate, geometric_schedule, NoiseSchedule};
use crate::training::{dsm_loss_grad, hybrid_g_loss, lsgan_d_loss, DsmBatch};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// The worst value observed (an error, a deviation or a z-score, see `detail`).
    pub measured: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckResult {
    fn below(name: &str, measured: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed: measured < tolerance,
            measured,
            tolerance,
            detail: detail.into(),
        }
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct CheckReport {
    pub checks: Vec<CheckResult>,
}

impl CheckReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

#[derive(Clone, Debug)]
pub struct CheckOptions {
    pub seed: u64,
    /// Monte Carlo chains per sampler experiment.
    pub chains: usize,
    /// Multiplies the consistent `beta` in every CAS check. Anything but 1 should fail them.
    pub beta_factor: f64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self { seed: 2020, chains: 10_000, beta_factor: 1.0 }
    }
}

/// Largest relative gap between two vectors, measured against the larger max-norm.
pub fn max_rel_dev(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Worst per-coordinate relative error between an analytic gradient and central differences of
/// `f` with step `h`. Coordinates are compared as `|a - n| / max(|a|, |n|, floor)`.
pub fn gradient_check(params: &[f64], analytic: &[f64], h: f64, floor: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let mut p = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + h;
        let up = f(&p);
        p[i] = orig - h;
        let down = f(&p);
        p[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(floor);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}

/// Per-step residual-noise measurement of a Dirac experiment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NoiseStep {
    /// Updates applied (0 is the initial state).
    pub step: usize,
    /// Level of the update that produced this state (the first level for the initial state).
    pub sigma: f64,
    pub empirical: f64,
    pub std_error: f64,
    /// Prediction of the noise recurrence.
    pub predicted: f64,
}

impl NoiseStep {
    pub fn z(&self) -> f64 {
        (self.empirical - self.predicted) / self.std_error
    }
}

/// Dirac point used by the sampler experiments.
pub const DIRAC_POINT: [f64; 2] = [1.0, -2.0];

fn dirac_chains(sigma0: f64, chains: usize, seed: u64) -> Result<(GaussianMixture, Vec<ChainState>)> {
    let x0 = DIRAC_POINT.to_vec();
    let model = GaussianMixture::dirac(x0.clone())?;
    let data = [x0];
    let chains = init_chains(&Init::DataPlusNoise { data: &data, sigma0 }, 2, seed, 0..chains as u64)?;
    Ok((model, chains))
}

fn measure(chains: &[ChainState], step: usize, sigma: f64, predicted: f64) -> NoiseStep {
    let (empirical, std_error) = residual_noise_std(chains, &DIRAC_POINT);
    NoiseStep { step, sigma, empirical, std_error, predicted }
}

/// CAS on Dirac data with the optimal score, started from `x0 + sigma_1 z`.
///
/// The state after update `i < L` should carry noise exactly `sigma_{i+1}`; the last update
/// injects nothing and leaves `(1 - eta) sigma_L`. `beta_factor` perturbs the noise factor.
pub fn dirac_cas_experiment(schedule: &NoiseSchedule, eta: f64, beta_factor: f64, chains: usize, seed: u64) -> Result<Vec<NoiseStep>> {
    let c = cas_constants_from_eta(schedule, eta)?;
    let sigmas = schedule.sigmas().to_vec();
    let (model, mut chains) = dirac_chains(schedule.sigma1(), chains, seed)?;
    let mut out = vec![measure(&chains, 0, sigmas[0], sigmas[0])];
    let last = (1.0 - eta) * schedule.sigma_l();
    let mut obs = |info: &StepInfo, ch: &[ChainState]| {
        let predicted = sigmas.get(info.level + 1).copied().unwrap_or(last);
        out.push(measure(ch, info.step, info.sigma, predicted));
    };
    cas_sample_with_beta(&model, schedule, c.epsilon, c.beta * beta_factor, &mut chains, Some(&mut obs))?;
    Ok(out)
}

/// ALS on Dirac data with the optimal score, started from `x0 + (sigma_1 / gamma) z`, against
/// the ALS noise trace.
pub fn dirac_als_experiment(schedule: &NoiseSchedule, eta: f64, n_sigma: usize, chains: usize, seed: u64) -> Result<Vec<NoiseStep>> {
    let v0 = schedule.sigma0();
    let trace = als_trace(schedule, eta, n_sigma, v0)?;
    let (model, mut chains) = dirac_chains(v0, chains, seed)?;
    let mut out = vec![measure(&chains, 0, schedule.sigma1(), v0)];
    let mut obs = |info: &StepInfo, ch: &[ChainState]| {
        out.push(measure(ch, info.step, info.sigma, trace.points[info.step - 1].v));
    };
    let epsilon = eta * schedule.sigma_l() * schedule.sigma_l();
    als_sample(&model, schedule, epsilon, n_sigma, &mut chains, Some(&mut obs))?;
    Ok(out)
}

fn worst_z(steps: &[NoiseStep]) -> f64 {
    steps.iter().map(|s| s.z().abs()).fold(0.0, f64::max)
}

fn random_schedule(r: &mut StreamRng) -> NoiseSchedule {
    let sigma_l = 10f64.powf(r.random_range(-3.0..0.0));
    let sigma1 = sigma_l * 10f64.powf(r.random_range(0.5..4.0));
    let levels = r.random_range(2..300);
    geometric_schedule(sigma1, sigma_l, levels).expect("valid random schedule")
}

/// Smallest `eta` keeping the consistent-sampling radicand non-negative.
fn min_eta(schedule: &NoiseSchedule) -> f64 {
    (1.0 - schedule.gamma()).max(0.0)
}

fn random_mixture(r: &mut StreamRng, dim: usize) -> GaussianMixture {
    let k = r.random_range(1..6);
    let mut w: Vec<f64> = (0..k).map(|_| r.random_range(0.1..1.0)).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    let means = (0..k).map(|_| (0..dim).map(|_| r.random_range(-3.0..3.0)).collect()).collect();
    let tau2 = if r.random_bool(0.2) { 0.0 } else { r.random_range(0.01..1.0) };
    GaussianMixture::new(w, means, tau2).expect("valid random mixture")
}

fn cas_trace_check(opts: &CheckOptions) -> CheckResult {
    let mut r = rng::stream(opts.seed, 100);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let s = random_schedule(&mut r);
        let eta = r.random_range(min_eta(&s)..=1.0).max(1e-6);
        let c = cas_constants_from_eta(&s, eta).expect("eta within range");
        let t = cas_trace_with_beta(&s, eta, c.beta * opts.beta_factor, s.sigma0());
        worst = worst.max(t.max_abs_diff() / s.sigma1());
    }
    CheckResult::below("cas_trace_exact", worst, 1e-12, "max |v_t - sigma_t| / sigma_1 over 100 random (schedule, eta)")
}

fn experiment_schedule() -> NoiseSchedule {
    geometric_schedule(1.0, 0.01, 50).expect("valid schedule")
}

fn cas_mc_check(opts: &CheckOptions) -> Result<CheckResult> {
    let steps = dirac_cas_experiment(&experiment_schedule(), 0.1, opts.beta_factor, opts.chains, opts.seed)?;
    let worst = worst_z(&steps);
    Ok(CheckResult::below(
        "cas_monte_carlo",
        worst,
        3.0,
        format!("max |z| of residual-noise std vs schedule, {} chains, L = 50, eta = 0.1", opts.chains),
    ))
}

fn als_mc_check(opts: &CheckOptions) -> Result<Vec<CheckResult>> {
    let s = experiment_schedule();
    let mut out = Vec::new();
    for n_sigma in [1, 5] {
        let steps = dirac_als_experiment(&s, 0.1, n_sigma, opts.chains, opts.seed)?;
        let worst = worst_z(&steps);
        out.push(CheckResult::below(
            &format!("als_monte_carlo_nsigma{n_sigma}"),
            worst,
            3.0,
            "max |z| of residual-noise std vs ALS trace",
        ));
        let min_excess = steps.iter().skip(1).map(|p| p.empirical - p.sigma).fold(f64::INFINITY, f64::min);
        out.push(CheckResult {
            name: format!("als_exceeds_schedule_nsigma{n_sigma}"),
            passed: min_excess > 0.0,
            measured: min_excess,
            tolerance: 0.0,
            detail: "min over steps of empirical std - sigma_t (must be > 0)".into(),
        });
    }
    Ok(out)
}

fn als_limit_check() -> Result<CheckResult> {
    let single = geometric_schedule(1.0, 1.0, 1)?;
    let t = als_trace(&single, 0.1, 500, single.sigma1())?;
    let last = t.points.last().map_or(f64::NAN, |p| p.v);
    Ok(CheckResult::below(
        "als_single_level_limit",
        (last - als_limit(1.0, 0.1)).abs(),
        1e-6,
        format!("v after 500 steps = {last:.10}, sigma sqrt(2/(2-eta)) = {:.10}", als_limit(1.0, 0.1)),
    ))
}

fn als_gap_check() -> Result<CheckResult> {
    let s = geometric_schedule(50.0, 0.01, 232)?;
    let mut worst = f64::INFINITY;
    for n in [1, 2, 5] {
        let t = als_trace(&s, 0.1, n, s.sigma0())?;
        worst = worst.min(t.points.iter().map(|p| p.diff()).fold(f64::INFINITY, f64::min));
    }
    Ok(CheckResult {
        name: "als_trace_above_schedule".into(),
        passed: worst > 0.0,
        measured: worst,
        tolerance: 0.0,
        detail: "min of v - sigma_t over ALS traces (must be > 0)".into(),
    })
}

fn interpolation_check(opts: &CheckOptions) -> CheckResult {
    let mut r = rng::stream(opts.seed, 101);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let dim = r.random_range(1..4);
        let mix = random_mixture(&mut r, dim);
        let s = random_schedule(&mut r);
        let level = r.random_range(0..s.len());
        let sigma = s.sigmas()[level];
        let next = s.sigmas().get(level + 1).copied().unwrap_or(0.0);
        let eta = r.random_range(min_eta(&s)..=1.0).max(1e-6);
        let c = cas_constants_from_eta(&s, eta).expect("eta within range");
        let spread = (sigma * sigma + 4.0).sqrt();
        let x: Vec<f64> = (0..dim).map(|_| spread * rng::standard_normal(&mut r)).collect();
        let z = rng::normal_vec(&mut r, dim);
        let kind = if i % 2 == 0 { StepKind::Als } else { StepKind::Cas { beta: c.beta } };
        let a = direct_step(&mix, &x, sigma, next, s.sigma_l(), c.epsilon, kind, &z);
        let b = interpolation_step(&mix, &x, sigma, next, c.eta, kind, &z);
        match (a, b) {
            (Ok(a), Ok(b)) => worst = worst.max(max_rel_dev(&a, &b)),
            _ => worst = f64::INFINITY,
        }
    }
    CheckResult::below("update_rule_equivalence", worst, 1e-10, "max relative deviation, 1000 paired steps")
}

fn conditional_score_check(opts: &CheckOptions) -> CheckResult {
    let mix = GaussianMixture::grid25(2.0, 0.05).expect("valid grid");
    let mut r = rng::stream(opts.seed, 102);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let x = vec![r.random_range(-5.0..5.0), r.random_range(-5.0..5.0)];
        let sigma = 10f64.powf(r.random_range(-1.3..1.0));
        let analytic = mix.optimal_conditional_score(&x, sigma).unwrap_or_default();
        let mut numeric = Vec::new();
        for i in 0..2 {
            let (mut up, mut down) = (x.clone(), x.clone());
            up[i] += h;
            down[i] -= h;
            let f = |p: &[f64]| mix.smoothed_log_density(p, sigma).unwrap_or(f64::NAN);
            numeric.push((f(&up) - f(&down)) / (2.0 * h));
        }
        let norm = analytic.iter().map(|v| v * v).sum::<f64>().sqrt();
        let err = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt() / norm;
        worst = worst.max(if err.is_nan() { f64::INFINITY } else { err });
    }
    CheckResult::below("conditional_score_finite_difference", worst, 1e-5, "max relative error, 200 random grid25 points")
}

fn eds_identity_check(opts: &CheckOptions) -> CheckResult {
    let mut r = rng::stream(opts.seed, 103);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let dim = r.random_range(1..4);
        let mix = random_mixture(&mut r, dim);
        let sigma = 10f64.powf(r.random_range(-2.0..1.0));
        let x: Vec<f64> = (0..dim).map(|_| r.random_range(-5.0..5.0)).collect();
        let dev = match (crate::sampler::eds(&mix, &x, sigma), mix.posterior_mean(&x, sigma)) {
            (Ok(a), Ok(b)) => max_rel_dev(&a, &b),
            _ => f64::INFINITY,
        };
        worst = worst.max(dev);
    }
    CheckResult::below("eds_identity", worst, 1e-10, "max relative gap of sigma^2 s + x vs posterior mean, 200 inputs")
}

fn unconditional_checks(opts: &CheckOptions) -> Vec<CheckResult> {
    let mut r = rng::stream(opts.seed, 104);
    let mut worst = 0.0f64;
    let mut pattern_ok = true;
    for _ in 0..50 {
        let s = random_schedule(&mut r);
        let x0: Vec<f64> = (0..2).map(|_| r.random_range(-3.0..3.0)).collect();
        let x: Vec<f64> = (0..2).map(|_| r.random_range(-3.0..3.0)).collect();
        let dirac = GaussianMixture::dirac(x0.clone()).expect("valid atom");
        let Ok(su) = optimal_unconditional_score(&dirac, &x, &s) else {
            worst = f64::INFINITY;
            continue;
        };
        let sbar = s.sigma_bar();
        for &sigma in s.sigmas() {
            let recon: Vec<f64> = su.iter().map(|v| v / sigma).collect();
            let expect: Vec<f64> = x0.iter().zip(&x).map(|(a, b)| (a - b) / (sbar * sigma)).collect();
            worst = worst.max(max_rel_dev(&recon, &expect));
            let truth = (x0[0] - x[0]) / (sigma * sigma);
            let ratio = recon[0] / truth;
            let ok = if sigma > sbar * (1.0 + 1e-12) {
                ratio > 1.0
            } else if sigma < sbar * (1.0 - 1e-12) {
                ratio < 1.0
            } else {
                true
            };
            pattern_ok &= ok;
        }
    }
    vec![
        CheckResult::below("dirac_unconditional_reconstruction", worst, 1e-12, "max relative gap to (x0 - x)/(sigma_bar sigma_i)"),
        CheckResult {
            name: "dirac_unconditional_bias_sign".into(),
            passed: pattern_ok,
            measured: if pattern_ok { 1.0 } else { 0.0 },
            tolerance: 1.0,
            detail: "over-estimation above sigma_bar and under-estimation below, at every level".into(),
        },
    ]
}

fn small_batch(r: &mut StreamRng, dim: usize, schedule: &NoiseSchedule) -> DsmBatch {
    let data: Vec<Vec<f64>> = (0..6).map(|_| (0..dim).map(|_| r.random_range(-2.0..2.0)).collect()).collect();
    let n = r.random_range(3..9);
    DsmBatch::draw(&data, schedule, n, r).expect("valid batch")
}

/// Worst relative finite-difference error of the three training losses over `configs` random
/// small networks, as `(dsm, discriminator, hybrid)`.
pub fn loss_gradient_errors(seed: u64, configs: usize) -> Result<(f64, f64, f64)> {
    let mut r = rng::stream(seed, 105);
    let (h, floor) = (1e-5, 1e-6);
    let mut worst = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..configs {
        let dim = r.random_range(1..4);
        let hidden: Vec<usize> = (0..r.random_range(1..3)).map(|_| r.random_range(2..7)).collect();
        let act = if i % 2 == 0 { Activation::Softplus } else { Activation::Tanh };
        let cond = if i % 3 == 0 { Conditioning::Conditional } else { Conditioning::Unconditional };
        let schedule = geometric_schedule(3.0, 0.1, 5)?;
        let batch = small_batch(&mut r, dim, &schedule);
        let net = ScoreNet::new(dim, &hidden, act, cond, &mut r)?;
        let mut widths = vec![dim];
        widths.extend(&hidden);
        widths.push(1);
        let disc = Mlp::new(widths, act, &mut r)?;
        let lambda = r.random_range(0.0..2.0);

        let (_, g) = dsm_loss_grad(&net, &batch)?;
        let e = gradient_check(net.mlp.params(), &g, h, floor, |p| {
            let mut n = net.clone();
            n.mlp.set_params(p).expect("same shape");
            dsm_loss_grad(&n, &batch).map_or(f64::NAN, |v| v.0)
        });
        worst.0 = worst.0.max(e);

        let fake: Vec<f64> = batch.noisy();
        let (_, g) = lsgan_d_loss(&disc, &batch.x, &fake)?;
        let e = gradient_check(disc.params(), &g, h, floor, |p| {
            let mut d = disc.clone();
            d.set_params(p).expect("same shape");
            lsgan_d_loss(&d, &batch.x, &fake).map_or(f64::NAN, |v| v.0)
        });
        worst.1 = worst.1.max(e);

        let g = hybrid_g_loss(&net, &disc, &batch, lambda, 1.0)?.grads;
        let e = gradient_check(net.mlp.params(), &g, h, floor, |p| {
            let mut n = net.clone();
            n.mlp.set_params(p).expect("same shape");
            hybrid_g_loss(&n, &disc, &batch, lambda, 1.0).map_or(f64::NAN, |v| v.total)
        });
        worst.2 = worst.2.max(e);
    }
    Ok(worst)
}

fn gradient_checks(opts: &CheckOptions) -> Result<Vec<CheckResult>> {
    let (dsm, d, hy) = loss_gradient_errors(opts.seed, 20)?;
    let detail = "max relative error vs central differences, 20 random small nets";
    Ok(vec![
        CheckResult::below("gradient_dsm", dsm, 1e-4, detail),
        CheckResult::below("gradient_discriminator", d, 1e-4, detail),
        CheckResult::below("gradient_hybrid", hy, 1e-4, detail),
    ])
}

fn schedule_checks(opts: &CheckOptions) -> Vec<CheckResult> {
    let mut r = rng::stream(opts.seed, 106);
    let (mut closed, mut assoc, mut beta) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let s = random_schedule(&mut r);
        for (i, v) in s.sigmas().iter().enumerate() {
            closed = closed.max((v - s.sigma1() * s.gamma().powi(i as i32)).abs() / v);
        }
        let (a, b) = (r.random_range(1..5), r.random_range(1..5));
        let ab = dilate(&dilate(&s, a).expect("dilate"), b).expect("dilate");
        let direct = dilate(&s, a * b).expect("dilate");
        assoc = assoc.max(max_rel_dev(ab.sigmas(), direct.sigmas()));
        let eta = r.random_range(min_eta(&s)..=1.0).max(1e-6);
        let c = cas_constants_from_eta(&s, eta).expect("eta within range");
        let lhs = (1.0 - eta).powi(2) / s.gamma().powi(2) + c.beta * c.beta;
        beta = beta.max((lhs - 1.0).abs());
    }
    vec![
        CheckResult::below("schedule_closed_form", closed, 1e-12, "max relative gap to sigma_1 gamma^i"),
        CheckResult::below("dilation_associativity", assoc, 1e-12, "dilate(dilate(s, a), b) vs dilate(s, a b)"),
        CheckResult::below("cas_beta_identity", beta, 1e-12, "|(1 - eta)^2 / gamma^2 + beta^2 - 1|"),
    ]
}

/// Runs every check.
pub fn run_checks(opts: &CheckOptions) -> Result<CheckReport> {
    let mut checks = schedule_checks(opts);
    checks.push(cas_trace_check(opts));
    checks.push(cas_mc_check(opts)?);
    checks.extend(als_mc_check(opts)?);
    checks.push(als_limit_check()?);
    checks.push(als_gap_check()?);
    checks.push(interpolation_check(opts));
    checks.push(conditional_score_check(opts));
    checks.extend(unconditional_checks(opts));
    checks.push(eds_identity_check(opts));
    checks.extend(gradient_checks(opts)?);
    Ok(CheckReport { checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_check_detects_wrong_gradient() {
        let f = |p: &[f64]| p[0] * p[0] + 3.0 * p[1];
        assert!(gradient_check(&[1.0, 2.0], &[2.0, 3.0], 1e-5, 1e-6, f) < 1e-8);
        assert!(gradient_check(&[1.0, 2.0], &[2.0, 3.3], 1e-5, 1e-6, f) > 0.05);
    }

    #[test]
    fn corrupted_beta_fails_the_cas_checks() {
        let opts = CheckOptions { beta_factor: 1.05, ..CheckOptions::default() };
        assert!(!cas_trace_check(&opts).passed);
        // At eta = 0.1 the injected noise is a small share of the total, so the Monte Carlo
        // check only resolves coarser corruption.
        let opts = CheckOptions { beta_factor: 1.5, ..CheckOptions::default() };
        assert!(!cas_mc_check(&opts).unwrap().passed);
    }

    #[test]
    fn eta_one_cas_is_exact_per_sample() {
        let s = experiment_schedule();
        let steps = dirac_cas_experiment(&s, 1.0, 1.0, 500, 3).unwrap();
        assert_eq!(steps.len(), 51);
        assert_eq!(steps.last().unwrap().empirical, 0.0);
    }
}
