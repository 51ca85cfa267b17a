use rand::Rng;

use crate::error::{Error, Result};
use crate::model::ScoreModel;
use crate::nn::{Mlp, ScoreNet};
use crate::rng;
use crate::schedule::NoiseSchedule;

/// Clean points, per-row noise levels and standard-normal draws; the corrupted input is
/// `x + sigma z`.
#[derive(Clone, Debug, PartialEq)]
pub struct DsmBatch {
    pub dim: usize,
    pub x: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub z: Vec<f64>,
}

impl DsmBatch {
    /// Draws a batch, consuming `rng` in a fixed order: all data indices, then all noise-level
    /// indices (uniform over the schedule), then all Gaussian coordinates.
    pub fn draw<R: Rng + ?Sized>(data: &[Vec<f64>], schedule: &NoiseSchedule, size: usize, rng: &mut R) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyInput("training data"));
        }
        if size == 0 {
            return Err(Error::InvalidSize("batch size must be at least 1".into()));
        }
        let dim = data[0].len();
        let idx: Vec<usize> = (0..size).map(|_| rng.random_range(0..data.len())).collect();
        let sigmas: Vec<f64> = (0..size)
            .map(|_| schedule.sigmas()[rng.random_range(0..schedule.len())])
            .collect();
        let mut z = vec![0.0; size * dim];
        rng::fill_standard_normal(rng, &mut z);
        let mut x = Vec::with_capacity(size * dim);
        for &i in &idx {
            if data[i].len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: data[i].len() });
            }
            x.extend_from_slice(&data[i]);
        }
        Ok(Self { dim, x, sigmas, z })
    }

    pub fn len(&self) -> usize {
        self.sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigmas.is_empty()
    }

    pub fn noisy(&self) -> Vec<f64> {
        let d = self.dim;
        self.x
            .iter()
            .zip(&self.z)
            .enumerate()
            .map(|(k, (x, z))| x + self.sigmas[k / d] * z)
            .collect()
    }
}

/// Per-sample `0.5 |sigma s(x~, sigma) + z|^2` for any score model. Every noise level must
/// belong to `schedule`.
pub fn dsm_per_sample(model: &dyn ScoreModel, batch: &DsmBatch, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    let d = batch.dim;
    if model.dim() != d {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: d });
    }
    let noisy = batch.noisy();
    let mut out = Vec::with_capacity(batch.len());
    for (i, &s) in batch.sigmas.iter().enumerate() {
        if schedule.level_of(s).is_none() {
            return Err(Error::SigmaNotInSchedule(s));
        }
        let score = model.score(&noisy[i * d..(i + 1) * d], s)?;
        let r2: f64 = score.iter().zip(&batch.z[i * d..(i + 1) * d]).map(|(a, z)| (s * a + z).powi(2)).sum();
        out.push(0.5 * r2);
    }
    Ok(out)
}

/// Mean denoising score-matching loss of any score model.
pub fn dsm_loss(model: &dyn ScoreModel, batch: &DsmBatch, schedule: &NoiseSchedule) -> Result<f64> {
    let per = dsm_per_sample(model, batch, schedule)?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// Mean DSM loss of a score network and its parameter gradient.
///
/// The network output is `sigma s`, so the residual is simply `output + z`.
pub fn dsm_loss_grad(net: &ScoreNet, batch: &DsmBatch) -> Result<(f64, Vec<f64>)> {
    let tape = net.forward(&batch.noisy(), &batch.sigmas)?;
    let n = batch.len() as f64;
    let resid: Vec<f64> = tape.output().iter().zip(&batch.z).map(|(o, z)| o + z).collect();
    let loss = 0.5 * resid.iter().map(|r| r * r).sum::<f64>() / n;
    let upstream: Vec<f64> = resid.iter().map(|r| r / n).collect();
    let grads = net.mlp.backward(&tape, &upstream)?;
    Ok((loss, grads.params))
}

/// Expected denoised samples `sigma * output + x~` of a score network, detached.
pub fn eds_batch(net: &ScoreNet, batch: &DsmBatch) -> Result<Vec<f64>> {
    let noisy = batch.noisy();
    let tape = net.forward(&noisy, &batch.sigmas)?;
    let d = batch.dim;
    Ok(tape
        .output()
        .iter()
        .zip(&noisy)
        .enumerate()
        .map(|(k, (o, x))| batch.sigmas[k / d] * o + x)
        .collect())
}

/// Least-squares discriminator loss `E (D(x) - 1)^2 + E (D(h) + 1)^2` and its gradient with
/// respect to the discriminator parameters.
pub fn lsgan_d_loss(disc: &Mlp, real: &[f64], fake: &[f64]) -> Result<(f64, Vec<f64>)> {
    let d = disc.input_dim();
    if disc.output_dim() != 1 {
        return Err(Error::InvalidArgument("discriminator must have one output".into()));
    }
    let (nr, nf) = (real.len() / d, fake.len() / d);
    if nr == 0 || nf == 0 {
        return Err(Error::EmptyInput("discriminator batch"));
    }
    let mut loss = 0.0;
    let mut grads = vec![0.0; disc.n_params()];
    for (pts, n, target) in [(real, nr, 1.0), (fake, nf, -1.0)] {
        let tape = disc.forward_batch(pts, n)?;
        let mut upstream = Vec::with_capacity(n);
        for o in tape.output() {
            loss += (o - target) * (o - target) / n as f64;
            upstream.push(2.0 * (o - target) / n as f64);
        }
        let g = disc.backward(&tape, &upstream)?;
        for (a, b) in grads.iter_mut().zip(&g.params) {
            *a += b;
        }
    }
    Ok((loss, grads))
}

#[derive(Clone, Debug)]
pub struct HybridLoss {
    /// `adversarial_weight * adv + lambda * dsm`.
    pub total: f64,
    /// `E (D(H) - 1)^2`.
    pub adv: f64,
    /// `E 0.5 |sigma s + z|^2`.
    pub dsm: f64,
    /// Gradient of `total` with respect to the score-network parameters.
    pub grads: Vec<f64>,
}

/// Score-network objective of the hybrid scheme: `E (D(H) - 1)^2 + lambda/2 E|sigma s + z|^2`
/// with `H = sigma^2 s + x~`. The discriminator is treated as frozen.
///
/// `adversarial_weight` scales the first term; 1 is the standard objective and 0 reduces it
/// to `lambda` times denoising score matching.
pub fn hybrid_g_loss(
    net: &ScoreNet,
    disc: &Mlp,
    batch: &DsmBatch,
    lambda: f64,
    adversarial_weight: f64,
) -> Result<HybridLoss> {
    let d = batch.dim;
    let n = batch.len();
    let nf = n as f64;
    let noisy = batch.noisy();
    let tape = net.forward(&noisy, &batch.sigmas)?;
    let out = tape.output();
    let h: Vec<f64> = out
        .iter()
        .zip(&noisy)
        .enumerate()
        .map(|(k, (o, x))| batch.sigmas[k / d] * o + x)
        .collect();
    let dtape = disc.forward_batch(&h, n)?;
    let mut adv = 0.0;
    let mut d_up = Vec::with_capacity(n);
    for o in dtape.output() {
        adv += (o - 1.0) * (o - 1.0) / nf;
        d_up.push(adversarial_weight * 2.0 * (o - 1.0) / nf);
    }
    let dh = disc.backward(&dtape, &d_up)?.inputs;
    let mut dsm = 0.0;
    let mut upstream = Vec::with_capacity(out.len());
    for (k, (o, z)) in out.iter().zip(&batch.z).enumerate() {
        let r = o + z;
        dsm += 0.5 * r * r / nf;
        upstream.push(lambda * r / nf + batch.sigmas[k / d] * dh[k]);
    }
    let grads = net.mlp.backward(&tape, &upstream)?.params;
    Ok(HybridLoss {
        total: adversarial_weight * adv + lambda * dsm,
        adv,
        dsm,
        grads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::GaussianMixture;
    use crate::model::ZeroScore;
    use crate::nn::{Activation, Conditioning};
    use crate::schedule::geometric_schedule;

    fn setup() -> (Vec<Vec<f64>>, NoiseSchedule) {
        let data = vec![vec![0.0, 1.0], vec![2.0, -1.0], vec![-1.0, 0.5]];
        (data, geometric_schedule(2.0, 0.1, 6).unwrap())
    }

    #[test]
    fn draw_order_is_fixed() {
        let (data, s) = setup();
        let mut r = rng::stream(4, 0);
        let b = DsmBatch::draw(&data, &s, 5, &mut r).unwrap();
        let mut r2 = rng::stream(4, 0);
        let idx: Vec<usize> = (0..5).map(|_| r2.random_range(0..3)).collect();
        let lv: Vec<usize> = (0..5).map(|_| r2.random_range(0..6)).collect();
        let z = rng::normal_vec(&mut r2, 10);
        for i in 0..5 {
            assert_eq!(&b.x[2 * i..2 * i + 2], &data[idx[i]][..]);
            assert_eq!(b.sigmas[i], s.sigmas()[lv[i]]);
        }
        assert_eq!(b.z, z);
    }

    #[test]
    fn optimum_for_dirac_is_zero() {
        let x0 = vec![0.3, -0.7];
        let data = vec![x0.clone(); 4];
        let s = geometric_schedule(3.0, 0.05, 10).unwrap();
        let b = DsmBatch::draw(&data, &s, 64, &mut rng::stream(1, 0)).unwrap();
        let oracle = GaussianMixture::dirac(x0).unwrap();
        for v in dsm_per_sample(&oracle, &b, &s).unwrap() {
            assert!(v <= 1e-10);
        }
    }

    #[test]
    fn zero_model_gives_half_chi_square() {
        let (data, s) = setup();
        let b = DsmBatch::draw(&data, &s, 20_000, &mut rng::stream(2, 0)).unwrap();
        let loss = dsm_loss(&ZeroScore(2), &b, &s).unwrap();
        // Mean of 0.5 chi^2_2 is 1 with standard error 1/sqrt(n).
        assert!((loss - 1.0).abs() < 4.0 / (20_000f64).sqrt());
    }

    #[test]
    fn foreign_sigma_is_rejected() {
        let (data, s) = setup();
        let mut b = DsmBatch::draw(&data, &s, 3, &mut rng::stream(2, 0)).unwrap();
        b.sigmas[1] = 0.123;
        assert!(matches!(dsm_loss(&ZeroScore(2), &b, &s), Err(Error::SigmaNotInSchedule(_))));
    }

    #[test]
    fn network_loss_matches_generic_loss() {
        let (data, s) = setup();
        let b = DsmBatch::draw(&data, &s, 16, &mut rng::stream(3, 0)).unwrap();
        for cond in [Conditioning::Unconditional, Conditioning::Conditional] {
            let net = ScoreNet::new(2, &[8, 8], Activation::Tanh, cond, &mut rng::stream(3, 1)).unwrap();
            let (l, _) = dsm_loss_grad(&net, &b).unwrap();
            let g = dsm_loss(&net, &b, &s).unwrap();
            assert!((l - g).abs() < 1e-12 * l.max(1.0));
        }
    }

    #[test]
    fn lsgan_zero_discriminator() {
        let (z, _) = constant_disc(0.0);
        let pts = [0.5, 0.2, -1.0, 3.0];
        assert_eq!(lsgan_d_loss(&z, &pts, &pts).unwrap().0, 2.0);
    }

    #[test]
    fn lsgan_perfect_discriminator_has_zero_loss() {
        // D(x) = x_0: reals at x_0 = 1, fakes at x_0 = -1.
        let mut d = Mlp::zeros(vec![2, 1], Activation::Identity).unwrap();
        d.params_mut()[0] = 1.0;
        let (l, g) = lsgan_d_loss(&d, &[1.0, 5.0, 1.0, -2.0], &[-1.0, 0.0]).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn lsgan_matches_scalar_reference() {
        let d = Mlp::new(vec![2, 5, 1], Activation::Softplus, &mut rng::stream(8, 2)).unwrap();
        let real = [0.1, 0.4, -0.3, 1.2, 2.0, -2.0];
        let fake = [0.7, 0.7, -1.5, 0.0];
        let mut expect = 0.0;
        for p in real.chunks(2) {
            expect += (d.forward(p).unwrap()[0] - 1.0).powi(2) / 3.0;
        }
        for p in fake.chunks(2) {
            expect += (d.forward(p).unwrap()[0] + 1.0).powi(2) / 2.0;
        }
        let (l, _) = lsgan_d_loss(&d, &real, &fake).unwrap();
        assert!((l - expect).abs() < 1e-14);
    }

    fn constant_disc(c: f64) -> (Mlp, f64) {
        let mut d = Mlp::zeros(vec![2, 3, 1], Activation::Softplus).unwrap();
        let n = d.n_params();
        d.params_mut()[n - 1] = c;
        (d, c)
    }

    #[test]
    fn constant_discriminator_leaves_only_dsm_gradient() {
        let (data, s) = setup();
        let b = DsmBatch::draw(&data, &s, 12, &mut rng::stream(5, 0)).unwrap();
        let net = ScoreNet::new(2, &[6], Activation::Softplus, Conditioning::Unconditional, &mut rng::stream(5, 1)).unwrap();
        let (disc, c) = constant_disc(0.3);
        let h = hybrid_g_loss(&net, &disc, &b, 2.0, 1.0).unwrap();
        let (dsm, g) = dsm_loss_grad(&net, &b).unwrap();
        assert!((h.adv - (c - 1.0) * (c - 1.0)).abs() < 1e-15);
        assert!((h.total - (h.adv + 2.0 * dsm)).abs() < 1e-12);
        for (a, b) in h.grads.iter().zip(&g) {
            assert!((a - 2.0 * b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn zero_lambda_and_satisfied_discriminator() {
        let (data, s) = setup();
        let b = DsmBatch::draw(&data, &s, 4, &mut rng::stream(6, 0)).unwrap();
        let net = ScoreNet::new(2, &[4], Activation::Softplus, Conditioning::Unconditional, &mut rng::stream(6, 1)).unwrap();
        let (disc, _) = constant_disc(1.0);
        let h = hybrid_g_loss(&net, &disc, &b, 0.0, 1.0).unwrap();
        assert_eq!(h.total, 0.0);
    }

    #[test]
    fn hybrid_loss_is_affine_in_lambda() {
        let (data, s) = setup();
        let b = DsmBatch::draw(&data, &s, 9, &mut rng::stream(7, 0)).unwrap();
        let net = ScoreNet::new(2, &[5], Activation::Tanh, Conditioning::Conditional, &mut rng::stream(7, 1)).unwrap();
        let disc = Mlp::new(vec![2, 5, 1], Activation::Softplus, &mut rng::stream(7, 2)).unwrap();
        let l0 = hybrid_g_loss(&net, &disc, &b, 0.0, 1.0).unwrap();
        for lambda in [0.5, 1.0, 7.0] {
            let l = hybrid_g_loss(&net, &disc, &b, lambda, 1.0).unwrap();
            assert!((l.total - (l0.total + lambda * l.dsm)).abs() < 1e-12 * (1.0 + l.total));
        }
    }
}
