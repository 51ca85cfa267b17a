//! Idealised noise-variance recurrences of ALS and CAS under the optimal score for Dirac data.
//!
//! With the optimal score every update contracts the noise by `1 - eta` and injects fresh
//! Gaussian noise, so only the noise standard deviation needs tracking.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::schedule::{cas_constants_from_eta, dilate, NoiseSchedule};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TracePoint {
    /// 1-based update count.
    pub step: usize,
    /// 0-based index of the level in the schedule.
    pub level: usize,
    pub sigma: f64,
    /// Noise standard deviation after the update.
    pub v: f64,
}

impl TracePoint {
    pub fn diff(&self) -> f64 {
        self.v - self.sigma
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct VarianceTrace {
    pub points: Vec<TracePoint>,
}

impl VarianceTrace {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn max_abs_diff(&self) -> f64 {
        self.points.iter().map(|p| p.diff().abs()).fold(0.0, f64::max)
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::InvalidArgument(format!("eta = {eta} must lie in (0, 1]")));
    }
    Ok(())
}

/// ALS noise trace: `n_sigma` updates `v^2 <- v^2 (1 - eta)^2 + 2 eta sigma_t^2` per level,
/// starting from `v0` and carrying `v` across levels.
pub fn als_trace(schedule: &NoiseSchedule, eta: f64, n_sigma: usize, v0: f64) -> Result<VarianceTrace> {
    check_eta(eta)?;
    if n_sigma == 0 {
        return Err(Error::InvalidArgument("n_sigma must be at least 1".into()));
    }
    if !(v0 > 0.0 && v0.is_finite()) {
        return Err(Error::InvalidArgument(format!("v0 = {v0} must be > 0")));
    }
    let keep = (1.0 - eta) * (1.0 - eta);
    let mut var = v0 * v0;
    let mut points = Vec::with_capacity(schedule.len() * n_sigma);
    for (level, &sigma) in schedule.sigmas().iter().enumerate() {
        for _ in 0..n_sigma {
            var = var * keep + 2.0 * eta * sigma * sigma;
            points.push(TracePoint { step: points.len() + 1, level, sigma, v: var.sqrt() });
        }
    }
    Ok(VarianceTrace { points })
}

/// Noise standard deviation after `n` ALS updates at a single level, in closed form.
pub fn als_level_closed_form(v0: f64, sigma: f64, eta: f64, n: u32) -> f64 {
    let decay = (1.0 - eta).powi(2 * n as i32);
    (v0 * v0 * decay + 2.0 * sigma * sigma / (2.0 - eta) * (1.0 - decay)).sqrt()
}

/// Stationary ALS noise level at a single level, `sigma sqrt(2 / (2 - eta))`.
pub fn als_limit(sigma: f64, eta: f64) -> f64 {
    sigma * (2.0 / (2.0 - eta)).sqrt()
}

/// Largest `eta` for which ALS noise decreases at a level, `2 - 2 sigma_t^2 / v0^2`.
/// A non-positive value means no step size decreases it.
pub fn als_monotonicity_condition(sigma_t: f64, v0: f64) -> f64 {
    2.0 - 2.0 * sigma_t * sigma_t / (v0 * v0)
}

/// CAS noise trace `v_{t+1}^2 = v_t^2 (1 - eta)^2 + beta^2 sigma_{t+1}^2` from
/// `v_0 = sigma_1 / gamma`; one point per level.
pub fn cas_trace(schedule: &NoiseSchedule, eta: f64) -> Result<VarianceTrace> {
    check_eta(eta)?;
    let c = cas_constants_from_eta(schedule, eta)?;
    Ok(cas_trace_with_beta(schedule, eta, c.beta, schedule.sigma0()))
}

/// [`cas_trace`] with an explicit noise factor and starting level.
pub fn cas_trace_with_beta(schedule: &NoiseSchedule, eta: f64, beta: f64, v0: f64) -> VarianceTrace {
    let keep = (1.0 - eta) * (1.0 - eta);
    let mut var = v0 * v0;
    let points = schedule
        .sigmas()
        .iter()
        .enumerate()
        .map(|(level, &sigma)| {
            var = var * keep + beta * beta * sigma * sigma;
            TracePoint { step: level + 1, level, sigma, v: var.sqrt() }
        })
        .collect();
    VarianceTrace { points }
}

/// One row of the ALS-versus-CAS comparison, taken at the end of each training level.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub step: usize,
    pub level: usize,
    pub sigma_t: f64,
    pub v_als: f64,
    pub v_cas: f64,
    pub diff: f64,
}

/// ALS with `n_sigma` updates per level against CAS on the schedule dilated by `n_sigma`, both
/// started from `v0` (default `sigma_1 / gamma` of `schedule`).
pub fn comparison_rows(
    schedule: &NoiseSchedule,
    eta: f64,
    n_sigma: usize,
    v0: Option<f64>,
) -> Result<Vec<ComparisonRow>> {
    let v0 = v0.unwrap_or_else(|| schedule.sigma0());
    let als = als_trace(schedule, eta, n_sigma, v0)?;
    let dilated = dilate(schedule, n_sigma)?;
    let cas = cas_trace(&dilated, eta)?;
    Ok(schedule
        .sigmas()
        .iter()
        .enumerate()
        .map(|(level, &sigma_t)| {
            let v_als = als.points[(level + 1) * n_sigma - 1].v;
            let v_cas = cas.points[level * n_sigma].v;
            ComparisonRow {
                step: (level + 1) * n_sigma,
                level,
                sigma_t,
                v_als,
                v_cas,
                diff: v_als - v_cas,
            }
        })
        .collect())
}

pub fn write_comparison_csv<W: Write>(mut w: W, rows: &[ComparisonRow]) -> Result<()> {
    writeln!(w, "step,level,sigma_t,v_als,v_cas,diff")?;
    for r in rows {
        writeln!(w, "{},{},{},{},{},{}", r.step, r.level, r.sigma_t, r.v_als, r.v_cas, r.diff)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::geometric_schedule;

    fn cifar() -> NoiseSchedule {
        geometric_schedule(50.0, 0.01, 232).unwrap()
    }

    #[test]
    fn single_level_limit() {
        let s = geometric_schedule(1.0, 1.0, 1).unwrap();
        let t = als_trace(&s, 0.1, 500, 1.0).unwrap();
        let last = t.points.last().unwrap().v;
        assert!((last - als_limit(1.0, 0.1)).abs() < 1e-12);
        assert!((als_limit(1.0, 0.1) - 1.025_978_352_085_154).abs() < 1e-12);
    }

    #[test]
    fn fixed_point_is_stationary() {
        let s = geometric_schedule(2.0, 2.0, 1).unwrap();
        let v = als_limit(2.0, 0.3);
        for p in als_trace(&s, 0.3, 50, v).unwrap().points {
            assert!((p.v - v).abs() < 1e-13);
        }
    }

    #[test]
    fn within_level_matches_closed_form() {
        let s = geometric_schedule(3.0, 3.0, 1).unwrap();
        for (eta, v0) in [(0.1, 7.0), (0.5, 0.2), (1.0, 2.0)] {
            let t = als_trace(&s, eta, 40, v0).unwrap();
            for (n, p) in t.points.iter().enumerate() {
                let cf = als_level_closed_form(v0, 3.0, eta, n as u32 + 1);
                assert!((p.v - cf).abs() <= 1e-12 * cf);
            }
        }
    }

    #[test]
    fn monotonicity_threshold() {
        assert_eq!(als_monotonicity_condition(1.0, 1.0), 0.0);
        assert_eq!(als_monotonicity_condition(1.0, 2.0), 1.5);
        let s = geometric_schedule(1.0, 1.0, 1).unwrap();
        for eta in [0.2f64, 0.7, 1.4999] {
            let t = als_trace(&s, eta.min(1.0), 30, 2.0).unwrap();
            let mut prev = 2.0;
            for p in &t.points {
                assert!(p.v <= prev);
                prev = p.v;
            }
        }
    }

    #[test]
    fn cas_trace_is_the_schedule() {
        for eta in [0.05, 0.1, 0.5, 1.0] {
            let s = cifar();
            let t = cas_trace(&s, eta).unwrap();
            assert_eq!(t.len(), 232);
            assert!(t.max_abs_diff() < 1e-12 * 50.0);
        }
    }

    #[test]
    fn als_stays_above_schedule() {
        let t = als_trace(&cifar(), 0.1, 1, 50.0).unwrap();
        assert!(t.points.iter().all(|p| p.v > p.sigma));
    }

    #[test]
    fn corrupted_beta_breaks_cas() {
        let s = cifar();
        let c = cas_constants_from_eta(&s, 0.1).unwrap();
        let t = cas_trace_with_beta(&s, 0.1, c.beta * 1.01, s.sigma0());
        assert!(t.max_abs_diff() > 1e-6);
    }

    #[test]
    fn comparison_gap_shrinks_with_more_steps() {
        let s = cifar();
        let rows: Vec<Vec<ComparisonRow>> = [1, 2, 5]
            .iter()
            .map(|&n| comparison_rows(&s, 0.1, n, None).unwrap())
            .collect();
        for r in &rows {
            assert_eq!(r.len(), 232);
            for row in r {
                assert!(row.v_als >= row.v_cas);
                assert!((row.v_cas - row.sigma_t).abs() < 1e-12 * 50.0);
            }
        }
        for i in 0..232 {
            assert!(rows[1][i].diff <= rows[0][i].diff && rows[2][i].diff <= rows[1][i].diff);
        }
        let mut buf = Vec::new();
        write_comparison_csv(&mut buf, &rows[0]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("step,level,sigma_t,v_als,v_cas,diff\n"));
        assert_eq!(text.lines().count(), 233);
    }
}
