//! End-to-end acceptance suite. Each test prints a single `PASS` or `FAIL` line to stderr
//! (uncaptured, so it shows in a normal `cargo test` run) and then asserts.
//!
//! Tests hold a shared lock so the runtime budgets are measured without competing for the CPU.

use std::io::Write;
use std::sync::Mutex;
use std::time::Instant;

use rand::Rng;
use scorelab::analytic::{gen_grid25, grid25_means, optimal_unconditional_score, GaussianMixture};
use scorelab::check::{dirac_als_experiment, dirac_cas_experiment, loss_gradient_errors, max_rel_dev, NoiseStep};
use scorelab::metrics::{mean_nearest_mode_distance, mode_coverage, ModeReport};
use scorelab::noisetrace::{
    als_limit, als_monotonicity_condition, als_trace, cas_trace, comparison_rows, write_comparison_csv,
};
use scorelab::rng::{self, StreamRng};
use scorelab::sampler::{direct_step, eds, interpolation_step, run_sampler, InitMode, SampleRunConfig, StepKind, Variant};
use scorelab::schedule::{cas_constants_from_eta, geometric_schedule, sigma1_from_data, NoiseSchedule};
use scorelab::training::{train, HybridConfig, TrainConfig};

static SERIAL: Mutex<()> = Mutex::new(());

const SEED: u64 = 2024;

fn report(id: u32, name: &str, passed: bool, detail: &str) {
    let line = format!("[acceptance {id:>2}] {} {name}: {detail}\n", if passed { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn random_schedule(r: &mut StreamRng) -> NoiseSchedule {
    let sigma_l = 10f64.powf(r.random_range(-3.0..0.0));
    let sigma1 = sigma_l * 10f64.powf(r.random_range(0.5..4.0));
    geometric_schedule(sigma1, sigma_l, r.random_range(2..300)).unwrap()
}

fn random_eta(r: &mut StreamRng, s: &NoiseSchedule) -> f64 {
    r.random_range((1.0 - s.gamma()).max(1e-6)..=1.0)
}

fn random_mixture(r: &mut StreamRng, dim: usize) -> GaussianMixture {
    let k = r.random_range(1..6);
    let w: Vec<f64> = (0..k).map(|_| r.random_range(0.1..1.0)).collect();
    let total: f64 = w.iter().sum();
    let means = (0..k).map(|_| (0..dim).map(|_| r.random_range(-3.0..3.0)).collect()).collect();
    let tau2 = if r.random_bool(0.2) { 0.0 } else { r.random_range(0.01..1.0) };
    GaussianMixture::new(w.iter().map(|v| v / total).collect(), means, tau2).unwrap()
}

fn worst_z(steps: &[NoiseStep]) -> f64 {
    steps.iter().map(|s| s.z().abs()).fold(0.0, f64::max)
}

#[test]
fn cas_trace_is_the_schedule() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let t = Instant::now();
    let mut r = rng::stream(SEED, 1);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let s = random_schedule(&mut r);
        let eta = random_eta(&mut r, &s);
        let trace = cas_trace(&s, eta).unwrap();
        assert_eq!(trace.len(), s.len());
        worst = worst.max(trace.max_abs_diff() / s.sigma1());
    }
    let secs = t.elapsed().as_secs_f64();
    let ok = worst < 1e-12 && secs < 1.0;
    report(1, "CAS trace exactness", ok, &format!("max |v - sigma|/sigma_1 = {worst:.2e} (< 1e-12), {secs:.3} s (< 1 s)"));
    assert!(ok);
}

#[test]
fn cas_monte_carlo_follows_the_schedule() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let t = Instant::now();
    let s = geometric_schedule(1.0, 0.01, 50).unwrap();
    let steps = dirac_cas_experiment(&s, 0.1, 1.0, 10_000, SEED).unwrap();
    assert_eq!(steps.len(), 51);
    let z = worst_z(&steps);
    let secs = t.elapsed().as_secs_f64();
    let ok = z < 3.0 && secs < 30.0;
    report(2, "CAS Monte Carlo", ok, &format!("max |z| = {z:.2} over 51 states, 10^4 chains (< 3), {secs:.1} s (< 30 s)"));
    assert!(ok);
}

#[test]
fn als_keeps_excess_noise() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let t = Instant::now();
    let s = geometric_schedule(1.0, 0.01, 50).unwrap();
    let mut parts = Vec::new();
    let mut ok = true;
    for n_sigma in [1, 5] {
        let steps = dirac_als_experiment(&s, 0.1, n_sigma, 10_000, SEED).unwrap();
        assert_eq!(steps.len(), 50 * n_sigma + 1);
        let z = worst_z(&steps);
        let excess = steps.iter().skip(1).map(|p| p.empirical - p.sigma).fold(f64::INFINITY, f64::min);
        ok &= z < 3.0 && excess > 0.0;
        let zs: Vec<f64> = steps.iter().skip(1).map(NoiseStep::z).collect();
        let mean = zs.iter().sum::<f64>() / zs.len() as f64;
        let sd = (zs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / zs.len() as f64).sqrt();
        parts.push(format!(
            "n={n_sigma}: max |z| {z:.2} over {} steps (z mean {mean:.2}, sd {sd:.2}), min excess {excess:.2e}",
            zs.len()
        ));
    }

    let single = geometric_schedule(1.0, 1.0, 1).unwrap();
    let v = als_trace(&single, 0.1, 500, 1.0).unwrap().points.last().unwrap().v;
    let limit = als_limit(1.0, 0.1);
    let gap = (v - limit).abs();
    ok &= gap < 1e-6;
    // The closed form is sqrt(2/1.9) = 1.0259783520...; the commonly quoted 1.0259637 differs
    // in the fifth decimal, so it is reported but not used as the target.
    let quoted = (v - 1.0259637).abs();
    parts.push(format!("limit {v:.10} vs {limit:.10}, gap {gap:.1e} (< 1e-6; quoted 1.0259637 off by {quoted:.1e})"));

    let secs = t.elapsed().as_secs_f64();
    ok &= secs < 60.0;
    report(3, "ALS gap", ok, &format!("{}, {secs:.1} s (< 60 s)", parts.join("; ")));
    assert!(ok);
}

#[test]
fn update_rule_forms_agree() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let mut r = rng::stream(SEED, 4);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let dim = r.random_range(1..4);
        let mix = random_mixture(&mut r, dim);
        let s = random_schedule(&mut r);
        let level = r.random_range(0..s.len());
        let sigma = s.sigmas()[level];
        let next = s.sigmas().get(level + 1).copied().unwrap_or(0.0);
        let c = cas_constants_from_eta(&s, random_eta(&mut r, &s)).unwrap();
        let spread = (sigma * sigma + 4.0).sqrt();
        let x: Vec<f64> = (0..dim).map(|_| spread * rng::standard_normal(&mut r)).collect();
        let z = rng::normal_vec(&mut r, dim);
        let kind = if i % 2 == 0 { StepKind::Als } else { StepKind::Cas { beta: c.beta } };
        let a = direct_step(&mix, &x, sigma, next, s.sigma_l(), c.epsilon, kind, &z).unwrap();
        let b = interpolation_step(&mix, &x, sigma, next, c.eta, kind, &z).unwrap();
        worst = worst.max(max_rel_dev(&a, &b));
    }
    let ok = worst < 1e-10;
    report(4, "update-rule equivalence", ok, &format!("max relative deviation {worst:.2e} over 1000 steps (< 1e-10)"));
    assert!(ok);
}

#[test]
fn optimal_score_identities() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let mut r = rng::stream(SEED, 5);
    let mix = GaussianMixture::grid25(2.0, 0.05).unwrap();
    let h = 1e-5;
    let mut fd = 0.0f64;
    for _ in 0..200 {
        let x = vec![r.random_range(-5.0..5.0), r.random_range(-5.0..5.0)];
        let sigma = 10f64.powf(r.random_range(-1.3..1.0));
        let score = mix.optimal_conditional_score(&x, sigma).unwrap();
        let numeric: Vec<f64> = (0..2)
            .map(|i| {
                let (mut up, mut down) = (x.clone(), x.clone());
                up[i] += h;
                down[i] -= h;
                (mix.smoothed_log_density(&up, sigma).unwrap() - mix.smoothed_log_density(&down, sigma).unwrap())
                    / (2.0 * h)
            })
            .collect();
        let norm = score.iter().map(|v| v * v).sum::<f64>().sqrt();
        let err = score.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() / norm;
        fd = fd.max(err);
    }

    let mut recon_err = 0.0f64;
    let mut sign_ok = true;
    for _ in 0..50 {
        let s = random_schedule(&mut r);
        let x0: Vec<f64> = (0..2).map(|_| r.random_range(-3.0..3.0)).collect();
        let x: Vec<f64> = (0..2).map(|_| r.random_range(-3.0..3.0)).collect();
        let out = optimal_unconditional_score(&GaussianMixture::dirac(x0.clone()).unwrap(), &x, &s).unwrap();
        let sbar = s.sigma_bar();
        for &sigma in s.sigmas() {
            let recon: Vec<f64> = out.iter().map(|v| v / sigma).collect();
            let expect: Vec<f64> = x0.iter().zip(&x).map(|(a, b)| (a - b) / (sbar * sigma)).collect();
            recon_err = recon_err.max(max_rel_dev(&recon, &expect));
            let ratio = recon[0] / ((x0[0] - x[0]) / (sigma * sigma));
            if sigma > sbar * (1.0 + 1e-12) {
                sign_ok &= ratio > 1.0;
            } else if sigma < sbar * (1.0 - 1e-12) {
                sign_ok &= ratio < 1.0;
            }
        }
    }
    let ok = fd < 1e-5 && recon_err < 1e-12 && sign_ok;
    report(
        5,
        "optimal-score identities",
        ok,
        &format!(
            "finite-difference rel. err {fd:.2e} (< 1e-5), Dirac reconstruction {recon_err:.2e} (< 1e-12), \
             over/under-estimation pattern {}",
            if sign_ok { "holds" } else { "broken" }
        ),
    );
    assert!(ok);
}

#[test]
fn eds_equals_posterior_mean() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let mut r = rng::stream(SEED, 6);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let dim = r.random_range(1..4);
        let mix = random_mixture(&mut r, dim);
        let sigma = 10f64.powf(r.random_range(-2.0..1.0));
        let x: Vec<f64> = (0..dim).map(|_| r.random_range(-5.0..5.0)).collect();
        worst = worst.max(max_rel_dev(&eds(&mix, &x, sigma).unwrap(), &mix.posterior_mean(&x, sigma).unwrap()));
    }
    let ok = worst < 1e-10;
    report(6, "EDS identity", ok, &format!("max relative gap {worst:.2e} over 200 inputs (< 1e-10)"));
    assert!(ok);
}

#[test]
fn loss_gradients_match_finite_differences() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let t = Instant::now();
    let (dsm, disc, hybrid) = loss_gradient_errors(SEED, 20).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let ok = dsm < 1e-4 && disc < 1e-4 && hybrid < 1e-4 && secs < 60.0;
    report(
        7,
        "gradient correctness",
        ok,
        &format!("rel. err dsm {dsm:.2e}, discriminator {disc:.2e}, hybrid {hybrid:.2e} (< 1e-4), {secs:.1} s (< 60 s)"),
    );
    assert!(ok);
}

struct Grid25Run {
    covered: usize,
    kl: f64,
    plain: ModeReport,
    dist_plain: f64,
    dist_denoised: f64,
    secs: f64,
}

/// Trains on grid25 with the default configuration and samples 2600 chains with CAS, once
/// without and once with the final denoising step, from the same seeds.
fn grid25_run(hybrid: bool) -> Grid25Run {
    let t = Instant::now();
    let data = gen_grid25(10_000, 2.0, 0.05, 1).unwrap().points;
    let schedule = geometric_schedule(sigma1_from_data(&data).unwrap(), 0.01, 20).unwrap();
    let mut config = TrainConfig::new(schedule.clone());
    config.seed = 7;
    config.hybrid = hybrid.then(HybridConfig::default);
    assert_eq!((config.iterations, config.batch_size), (20_000, 128));
    let (state, _) = train(&config, &data).unwrap();
    let net = state.sampling_net().unwrap();

    let centers = grid25_means(2.0);
    let mut sc = SampleRunConfig {
        variant: Variant::Cas,
        epsilon: 0.5 * 0.01 * 0.01,
        n_sigma: 1,
        denoise_final: false,
        init: InitMode::PureNoise,
        sigma0: None,
        chains: 2600,
        seed: 11,
    };
    let plain = run_sampler(&net, &schedule, &sc, None, None).unwrap().samples;
    sc.denoise_final = true;
    let out = run_sampler(&net, &schedule, &sc, None, None).unwrap();
    assert_eq!(out.samples, plain);
    let denoised = out.denoised.unwrap();
    let rep = mode_coverage(&denoised, &centers, 0.15).unwrap();
    Grid25Run {
        covered: rep.covered,
        kl: rep.kl.unwrap_or(f64::INFINITY),
        plain: mode_coverage(&plain, &centers, 0.15).unwrap(),
        dist_plain: mean_nearest_mode_distance(&plain, &centers).unwrap(),
        dist_denoised: mean_nearest_mode_distance(&denoised, &centers).unwrap(),
        secs: t.elapsed().as_secs_f64(),
    }
}

#[test]
fn grid25_dsm_and_hybrid_training() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let dsm = grid25_run(false);
    let ok8 = dsm.covered == 25 && dsm.dist_denoised < dsm.dist_plain && dsm.secs < 1200.0;
    report(
        8,
        "grid25 DSM sampling",
        ok8,
        &format!(
            "coverage {}/25 (without denoising {}/25), KL {:.3}, nearest-mode distance {:.4} -> {:.4} denoised, {:.0} s (< 1200 s)",
            dsm.covered, dsm.plain.covered, dsm.kl, dsm.dist_plain, dsm.dist_denoised, dsm.secs
        ),
    );

    let hy = grid25_run(true);
    let ok9 = hy.covered == 25 && (hy.kl - dsm.kl).abs() <= 0.5;
    report(
        9,
        "grid25 hybrid diversity",
        ok9,
        &format!(
            "coverage {}/25, KL {:.3} vs DSM {:.3} (|diff| {:.3} <= 0.5), assigned {} of 2600 before denoising, {:.0} s",
            hy.covered,
            hy.kl,
            dsm.kl,
            (hy.kl - dsm.kl).abs(),
            hy.plain.assigned(),
            hy.secs
        ),
    );
    assert!(ok8 && ok9);
}

#[test]
fn trace_csv_orders_the_samplers() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let t = Instant::now();
    let s = geometric_schedule(50.0, 0.01, 232).unwrap();
    let mut ok = true;
    let mut worst_cas = 0.0f64;
    let mut rising = Vec::new();
    let mut summary = Vec::new();
    for eta in [0.05, 0.1, 0.2] {
        let mut gaps: Vec<Vec<f64>> = Vec::new();
        for n_sigma in [1, 2, 5] {
            let mut csv = Vec::new();
            write_comparison_csv(&mut csv, &comparison_rows(&s, eta, n_sigma, None).unwrap()).unwrap();
            let text = String::from_utf8(csv).unwrap();
            let mut lines = text.lines();
            assert_eq!(lines.next(), Some("step,level,sigma_t,v_als,v_cas,diff"));
            let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
            assert_eq!(rows.len(), 232);
            for row in &rows {
                let (sigma, als, cas) = (row[2], row[3], row[4]);
                worst_cas = worst_cas.max((cas - sigma).abs() / sigma);
                ok &= als >= cas;
            }
            gaps.push(rows.iter().map(|row| row[3] - row[4]).collect());
        }
        // Every n starts the first level from the same v0. Below the ALS fixed point of that
        // level (eta above the monotonicity threshold) more steps raise the noise, so there the
        // gap must grow with n; everywhere else it must shrink.
        let first_level_rises = eta > als_monotonicity_condition(s.sigma1(), s.sigma0());
        for pair in gaps.windows(2) {
            for (i, (a, b)) in pair[0].iter().zip(&pair[1]).enumerate() {
                ok &= if i == 0 && first_level_rises { b >= a } else { b <= a };
            }
        }
        if first_level_rises {
            rising.push(format!("{eta}"));
        }
        let mean = |g: &Vec<f64>| g.iter().sum::<f64>() / g.len() as f64;
        let max = |g: &Vec<f64>| g.iter().copied().fold(f64::MIN, f64::max);
        for pair in gaps.windows(2) {
            ok &= mean(&pair[1]) < mean(&pair[0]) && max(&pair[1]) < max(&pair[0]);
        }
        summary.push(format!("eta {eta}: mean gap {}", gaps.iter().map(|g| format!("{:.3}", mean(g))).collect::<Vec<_>>().join(" > ")));
    }
    ok &= worst_cas < 1e-12;
    let secs = t.elapsed().as_secs_f64();
    ok &= secs < 5.0;
    report(
        10,
        "noise trace ordering",
        ok,
        &format!(
            "v_als >= v_cas everywhere, max |v_cas - sigma|/sigma {worst_cas:.1e}; over n_sigma 1, 2, 5 the gap is \
             non-increasing at every level except level 0 for eta in [{}] where v0 sits below the fixed point and it \
             grows as predicted; {}; {secs:.3} s (< 5 s)",
            rising.join(", "),
            summary.join("; ")
        ),
    );
    assert!(ok);
}
