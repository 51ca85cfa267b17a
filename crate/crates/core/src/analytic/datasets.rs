use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mixture::grid25_means;
use crate::error::{Error, Result};
use crate::rng::{self, streams};

/// Swiss-roll radius scale: the spiral `t (cos t, sin t)` for `t` in `[1.5 pi, 4.5 pi]` is
/// shrunk to fit inside `[-4, 4]^2`.
pub const SWISS_ROLL_SCALE: f64 = 4.0 / (4.5 * PI);
const SWISS_ROLL_T_MIN: f64 = 1.5 * PI;
const SWISS_ROLL_T_MAX: f64 = 4.5 * PI;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetKind {
    SwissRoll { noise: f64 },
    Grid25 { spacing: f64, tau: f64 },
    Dirac { x0: Vec<f64> },
    /// Points loaded from a file.
    External,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    pub points: Vec<Vec<f64>>,
    pub kind: DatasetKind,
    pub seed: u64,
}

impl SyntheticDataset {
    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Mode centres when the generator has discrete modes.
    pub fn mode_centers(&self) -> Option<Vec<Vec<f64>>> {
        match &self.kind {
            DatasetKind::Grid25 { spacing, .. } => Some(grid25_means(*spacing)),
            DatasetKind::Dirac { x0 } => Some(vec![x0.clone()]),
            _ => None,
        }
    }
}

fn check_size(n: usize) -> Result<()> {
    if n < 1 {
        return Err(Error::InvalidSize("dataset needs at least one point".into()));
    }
    Ok(())
}

/// 2-D swiss roll with additive isotropic Gaussian noise of standard deviation `noise`.
pub fn gen_swiss_roll(n: usize, noise: f64, seed: u64) -> Result<SyntheticDataset> {
    check_size(n)?;
    if !(noise.is_finite() && noise >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise = {noise} must be >= 0")));
    }
    let mut r = rng::stream(seed, streams::DATASET);
    let points = (0..n)
        .map(|_| {
            let t = r.random_range(SWISS_ROLL_T_MIN..SWISS_ROLL_T_MAX);
            let e = [rng::standard_normal(&mut r), rng::standard_normal(&mut r)];
            vec![
                SWISS_ROLL_SCALE * t * t.cos() + noise * e[0],
                SWISS_ROLL_SCALE * t * t.sin() + noise * e[1],
            ]
        })
        .collect();
    Ok(SyntheticDataset {
        points,
        kind: DatasetKind::SwissRoll { noise },
        seed,
    })
}

/// Equal-weight 5x5 grid of isotropic Gaussians with standard deviation `tau`.
pub fn gen_grid25(n: usize, spacing: f64, tau: f64, seed: u64) -> Result<SyntheticDataset> {
    check_size(n)?;
    if !(tau.is_finite() && tau >= 0.0) || !(spacing.is_finite() && spacing > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "grid25 needs spacing > 0 and tau >= 0 (got {spacing}, {tau})"
        )));
    }
    let means = grid25_means(spacing);
    let mut r = rng::stream(seed, streams::DATASET);
    let points = (0..n)
        .map(|_| {
            let mu = &means[r.random_range(0..means.len())];
            let e = [rng::standard_normal(&mut r), rng::standard_normal(&mut r)];
            vec![mu[0] + tau * e[0], mu[1] + tau * e[1]]
        })
        .collect();
    Ok(SyntheticDataset {
        points,
        kind: DatasetKind::Grid25 { spacing, tau },
        seed,
    })
}

/// `n` copies of a single atom.
pub fn gen_dirac(n: usize, x0: Vec<f64>) -> Result<SyntheticDataset> {
    check_size(n)?;
    Ok(SyntheticDataset {
        points: vec![x0.clone(); n],
        kind: DatasetKind::Dirac { x0 },
        seed: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid25_points_near_a_mode() {
        let ds = gen_grid25(1000, 2.0, 0.05, 3).unwrap();
        let centers = ds.mode_centers().unwrap();
        for p in &ds.points {
            let nearest = centers
                .iter()
                .map(|c| ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min);
            assert!(nearest < 6.0 * 0.05);
        }
    }

    #[test]
    fn grid25_zero_variance_is_exact() {
        let ds = gen_grid25(200, 1.5, 0.0, 9).unwrap();
        let centers = ds.mode_centers().unwrap();
        assert!(ds.points.iter().all(|p| centers.contains(p)));
    }

    #[test]
    fn noiseless_swiss_roll_on_spiral() {
        let ds = gen_swiss_roll(500, 0.0, 1).unwrap();
        for p in &ds.points {
            let t = (p[0] * p[0] + p[1] * p[1]).sqrt() / SWISS_ROLL_SCALE;
            assert!((SWISS_ROLL_T_MIN - 1e-9..=SWISS_ROLL_T_MAX + 1e-9).contains(&t));
            assert!((SWISS_ROLL_SCALE * t * t.cos() - p[0]).abs() < 1e-12);
            assert!((SWISS_ROLL_SCALE * t * t.sin() - p[1]).abs() < 1e-12);
            assert!(p[0].abs() <= 4.0 && p[1].abs() <= 4.0);
        }
    }

    #[test]
    fn generators_are_seeded() {
        assert_eq!(gen_grid25(10, 2.0, 0.05, 4).unwrap(), gen_grid25(10, 2.0, 0.05, 4).unwrap());
        assert_ne!(gen_swiss_roll(10, 0.1, 4).unwrap(), gen_swiss_roll(10, 0.1, 5).unwrap());
        assert!(matches!(gen_grid25(0, 2.0, 0.05, 4), Err(Error::InvalidSize(_))));
        assert!(matches!(gen_swiss_roll(0, 0.0, 4), Err(Error::InvalidSize(_))));
    }
}
