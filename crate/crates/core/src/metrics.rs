//! Sample-quality metrics for low-dimensional experiments.

use serde::Serialize;

use crate::error::{Error, Result};

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn nearest(p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centers.iter().enumerate() {
        let d = dist(p, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn check_sets(samples: &[Vec<f64>], centers: &[Vec<f64>]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("samples"));
    }
    if centers.is_empty() {
        return Err(Error::EmptyInput("mode centers"));
    }
    let d = centers[0].len();
    if let Some(p) = samples.iter().chain(centers).find(|p| p.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: p.len() });
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModeReport {
    pub total_modes: usize,
    pub covered: usize,
    /// KL divergence (nats) of the assigned-sample mode histogram from uniform; `None` when no
    /// sample was assigned.
    pub kl: Option<f64>,
    pub counts: Vec<usize>,
    pub unassigned: usize,
    pub threshold: f64,
}

impl ModeReport {
    pub fn assigned(&self) -> usize {
        self.counts.iter().sum()
    }

    pub const CSV_HEADER: &'static str = "total_modes,covered,kl,assigned,unassigned,threshold";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.total_modes,
            self.covered,
            self.kl.map_or_else(|| "nan".to_string(), |k| k.to_string()),
            self.assigned(),
            self.unassigned,
            self.threshold
        )
    }
}

/// KL divergence of a count histogram from the uniform distribution over its bins.
pub fn histogram_kl_from_uniform(counts: &[usize]) -> Option<f64> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return None;
    }
    let k = counts.len() as f64;
    let kl = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            p * (p * k).ln()
        })
        .sum::<f64>();
    Some(kl.max(0.0))
}

/// Assigns each sample to its nearest center when within `threshold`, then counts covered modes.
pub fn mode_coverage(samples: &[Vec<f64>], centers: &[Vec<f64>], threshold: f64) -> Result<ModeReport> {
    check_sets(samples, centers)?;
    if !(threshold > 0.0) {
        return Err(Error::InvalidArgument(format!("threshold = {threshold} must be > 0")));
    }
    let mut counts = vec![0usize; centers.len()];
    let mut unassigned = 0;
    for p in samples {
        let (k, d) = nearest(p, centers);
        if d <= threshold {
            counts[k] += 1;
        } else {
            unassigned += 1;
        }
    }
    Ok(ModeReport {
        total_modes: centers.len(),
        covered: counts.iter().filter(|&&c| c > 0).count(),
        kl: histogram_kl_from_uniform(&counts),
        counts,
        unassigned,
        threshold,
    })
}

/// Mean distance from each sample to its nearest reference point.
pub fn mean_nearest_mode_distance(samples: &[Vec<f64>], centers: &[Vec<f64>]) -> Result<f64> {
    check_sets(samples, centers)?;
    Ok(samples.iter().map(|p| nearest(p, centers).1).sum::<f64>() / samples.len() as f64)
}

fn mean_pair_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for x in a {
        for y in b {
            total += dist(x, y);
        }
    }
    total / (a.len() as f64 * b.len() as f64)
}

/// Energy distance `2 E|a - b| - E|a - a'| - E|b - b'|` between the empirical distributions of
/// two samples (all pairs, including coincident indices, enter the within-sample means).
///
/// This is zero for identical point sets and never negative.
pub fn energy_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput("energy distance sample"));
    }
    check_sets(a, b)?;
    let ed = 2.0 * mean_pair_distance(a, b) - mean_pair_distance(a, a) - mean_pair_distance(b, b);
    Ok(ed.max(0.0))
}

/// Sum of `|x_i - x_j|` over ordered pairs of a sorted slice.
fn sorted_pair_sum(sorted: &[f64]) -> f64 {
    let n = sorted.len() as f64;
    2.0 * sorted
        .iter()
        .enumerate()
        .map(|(i, x)| x * (2.0 * i as f64 - n + 1.0))
        .sum::<f64>()
}

/// [`energy_distance`] for scalar samples in `O(n log n)`.
pub fn energy_distance_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput("energy distance sample"));
    }
    let sort = |v: &[f64]| {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        s
    };
    let sa = sorted_pair_sum(&sort(a));
    let sb = sorted_pair_sum(&sort(b));
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let sp = sorted_pair_sum(&sort(&pooled));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let cross = (sp - sa - sb) / 2.0;
    Ok((2.0 * cross / (na * nb) - sa / (na * na) - sb / (nb * nb)).max(0.0))
}
