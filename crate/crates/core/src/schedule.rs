//! Geometric noise schedules and the constants derived from them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Strictly decreasing noise levels `sigma_1 > ... > sigma_L` with a common ratio `gamma`.
///
/// The levels are stored explicitly so that the endpoints are exact as constructed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleRepr", into = "ScheduleRepr")]
pub struct NoiseSchedule {
    sigmas: Vec<f64>,
    gamma: f64,
}

/// JSON form: `{"sigma1", "sigmaL", "L", "gamma", "sigmas"}`. `gamma` and `sigmas` may be
/// omitted on input; when given they must agree with the endpoints.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleRepr {
    sigma1: f64,
    #[serde(rename = "sigmaL")]
    sigma_l: f64,
    #[serde(rename = "L")]
    levels: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sigmas: Option<Vec<f64>>,
}

impl TryFrom<ScheduleRepr> for NoiseSchedule {
    type Error = Error;

    fn try_from(repr: ScheduleRepr) -> Result<Self> {
        let schedule = geometric_schedule(repr.sigma1, repr.sigma_l, repr.levels)?;
        if let Some(g) = repr.gamma {
            if (g - schedule.gamma).abs() > 1e-12 * schedule.gamma {
                return Err(Error::InvalidSchedule(format!(
                    "gamma = {g} does not match the endpoints (expected {})",
                    schedule.gamma
                )));
            }
        }
        if let Some(given) = repr.sigmas {
            if given.len() != schedule.len() {
                return Err(Error::InvalidSchedule(format!(
                    "sigmas has {} entries but L = {}",
                    given.len(),
                    schedule.len()
                )));
            }
            for (i, (a, b)) in given.iter().zip(&schedule.sigmas).enumerate() {
                if (a - b).abs() > 1e-12 * b.abs() {
                    return Err(Error::InvalidSchedule(format!(
                        "sigmas[{i}] = {a} is not the geometric level {b}"
                    )));
                }
            }
        }
        Ok(schedule)
    }
}

impl From<NoiseSchedule> for ScheduleRepr {
    fn from(s: NoiseSchedule) -> Self {
        ScheduleRepr {
            sigma1: s.sigma1(),
            sigma_l: s.sigma_l(),
            levels: s.len(),
            gamma: Some(s.gamma),
            sigmas: Some(s.sigmas),
        }
    }
}

impl NoiseSchedule {
    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn len(&self) -> usize {
        self.sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigmas.is_empty()
    }

    pub fn sigma1(&self) -> f64 {
        self.sigmas[0]
    }

    pub fn sigma_l(&self) -> f64 {
        self.sigmas[self.sigmas.len() - 1]
    }

    /// The level one step above `sigma_1`, `sigma_1 / gamma`.
    pub fn sigma0(&self) -> f64 {
        self.sigma1() / self.gamma
    }

    /// Harmonic-type mean `sigma_bar` with `1/sigma_bar = mean(1/sigma_i)`.
    pub fn sigma_bar(&self) -> f64 {
        let inv: f64 = self.sigmas.iter().map(|s| 1.0 / s).sum::<f64>() / self.len() as f64;
        1.0 / inv
    }

    /// Index of `sigma` in the schedule, matching to relative tolerance 1e-12.
    pub fn level_of(&self, sigma: f64) -> Option<usize> {
        self.sigmas
            .iter()
            .position(|s| (s - sigma).abs() <= 1e-12 * s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("schedule serializes")
    }
}

/// Builds `L` geometrically spaced levels from `sigma1` down to `sigma_l`.
///
/// For `L = 1` the two endpoints must coincide and `gamma` is defined as 1.
pub fn geometric_schedule(sigma1: f64, sigma_l: f64, levels: usize) -> Result<NoiseSchedule> {
    if !(sigma1.is_finite() && sigma_l.is_finite()) || sigma1 <= 0.0 || sigma_l <= 0.0 {
        return Err(Error::InvalidSchedule(format!(
            "noise levels must be positive and finite (sigma1 = {sigma1}, sigmaL = {sigma_l})"
        )));
    }
    if sigma1 < sigma_l {
        return Err(Error::InvalidSchedule(format!(
            "sigma1 = {sigma1} is below sigmaL = {sigma_l}"
        )));
    }
    match levels {
        0 => Err(Error::InvalidSchedule("L must be at least 1".into())),
        1 => {
            if sigma1 != sigma_l {
                return Err(Error::InvalidSchedule(format!(
                    "L = 1 requires sigma1 == sigmaL (got {sigma1} and {sigma_l})"
                )));
            }
            Ok(NoiseSchedule {
                sigmas: vec![sigma1],
                gamma: 1.0,
            })
        }
        _ => {
            if sigma1 == sigma_l {
                return Err(Error::InvalidSchedule(
                    "L >= 2 requires sigma1 > sigmaL".into(),
                ));
            }
            let gamma = (sigma_l / sigma1).powf(1.0 / (levels - 1) as f64);
            let mut sigmas: Vec<f64> = (0..levels).map(|i| sigma1 * gamma.powi(i as i32)).collect();
            sigmas[0] = sigma1;
            sigmas[levels - 1] = sigma_l;
            Ok(NoiseSchedule { sigmas, gamma })
        }
    }
}

/// Refines the schedule by `n_sigma` intermediate steps per original interval.
///
/// The result keeps both endpoints and has `(L - 1) * n_sigma + 1` levels with ratio
/// `gamma^(1 / n_sigma)`.
pub fn dilate(schedule: &NoiseSchedule, n_sigma: usize) -> Result<NoiseSchedule> {
    if n_sigma == 0 {
        return Err(Error::InvalidArgument("n_sigma must be at least 1".into()));
    }
    if n_sigma == 1 || schedule.len() == 1 {
        return Ok(schedule.clone());
    }
    geometric_schedule(
        schedule.sigma1(),
        schedule.sigma_l(),
        (schedule.len() - 1) * n_sigma + 1,
    )
}

/// Largest pairwise Euclidean distance among `points`.
pub fn sigma1_from_data(points: &[Vec<f64>]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: points.len(),
        });
    }
    let mut best = 0.0f64;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            let d2: f64 = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum();
            best = best.max(d2);
        }
    }
    Ok(best.sqrt())
}

/// Step-size constants shared by the samplers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConstants {
    /// Sampling step size, in variance units relative to `sigma_L^2`.
    pub epsilon: f64,
    /// `epsilon / sigma_L^2`.
    pub eta: f64,
    /// Noise-scale factor of consistent annealed sampling.
    pub beta: f64,
}

/// `beta = sqrt(1 - (1 - eta)^2 / gamma^2)` for consistent annealed sampling.
///
/// A negative radicand is a hard error: the prescribed decay cannot be reached with so small
/// a step.
pub fn cas_constants(schedule: &NoiseSchedule, epsilon: f64) -> Result<SamplerConstants> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let eta = epsilon / (schedule.sigma_l() * schedule.sigma_l());
    if eta > 1.0 {
        return Err(Error::StepTooLarge { eta });
    }
    let gamma = schedule.gamma();
    let decay_sq = (1.0 - eta) * (1.0 - eta);
    let gamma_sq = gamma * gamma;
    if decay_sq > gamma_sq {
        return Err(Error::StepTooSmall { decay_sq, gamma_sq });
    }
    let beta = (1.0 - decay_sq / gamma_sq).max(0.0).sqrt();
    Ok(SamplerConstants { epsilon, eta, beta })
}

/// Same as [`cas_constants`] but parametrised by the dimensionless step `eta`.
pub fn cas_constants_from_eta(schedule: &NoiseSchedule, eta: f64) -> Result<SamplerConstants> {
    cas_constants(schedule, eta * schedule.sigma_l() * schedule.sigma_l())
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn schedule_strategy() -> impl Strategy<Value = NoiseSchedule> {
        (1e-3f64..10.0, 1.0f64..1e4, 2usize..300)
            .prop_map(|(sl, ratio, l)| geometric_schedule(sl * ratio, sl, l).unwrap())
    }

    proptest! {
        #[test]
        fn closed_form_levels(s in schedule_strategy()) {
            for (i, sig) in s.sigmas().iter().enumerate() {
                let closed = s.sigma1() * s.gamma().powi(i as i32);
                prop_assert!((sig - closed).abs() <= 1e-12 * closed);
            }
            for w in s.sigmas().windows(2) {
                prop_assert!(((w[1] / w[0]) - s.gamma()).abs() <= 1e-12 * s.gamma());
            }
            prop_assert!(s.gamma() < 1.0);
        }

        #[test]
        fn dilation_composes(s in schedule_strategy(), a in 1usize..6, b in 1usize..6) {
            let twice = dilate(&dilate(&s, a).unwrap(), b).unwrap();
            let once = dilate(&s, a * b).unwrap();
            prop_assert_eq!(twice.len(), once.len());
            for (x, y) in twice.sigmas().iter().zip(once.sigmas()) {
                prop_assert!((x - y).abs() <= 1e-12 * y);
            }
        }

        #[test]
        fn beta_identity(s in schedule_strategy(), t in 0.0f64..1.0) {
            // Any eta in [1 - gamma, 1] satisfies the radicand condition.
            let eta = 1.0 - s.gamma() + t * s.gamma();
            let c = cas_constants_from_eta(&s, eta).unwrap();
            let lhs = (1.0 - c.eta).powi(2) / s.gamma().powi(2) + c.beta * c.beta;
            prop_assert!((lhs - 1.0).abs() <= 1e-12);
            prop_assert!(c.eta > 0.0 && c.eta <= 1.0);
        }
    }
}
