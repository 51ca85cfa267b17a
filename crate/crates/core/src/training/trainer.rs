use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::losses::{dsm_loss_grad, eds_batch, hybrid_g_loss, lsgan_d_loss, DsmBatch};
use crate::error::{Error, Result};
use crate::nn::{write_checkpoint, Activation, AdamConfig, AdamState, Checkpoint, Conditioning, EmaState, Mlp, ScoreNet};
use crate::rng::{self, streams};
use crate::schedule::NoiseSchedule;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "defaults::iterations")]
    pub iterations: usize,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    pub schedule: NoiseSchedule,
    #[serde(default = "defaults::hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "defaults::activation")]
    pub activation: Activation,
    #[serde(default)]
    pub conditioning: Conditioning,
    #[serde(default = "defaults::score_optimizer")]
    pub score_optimizer: AdamConfig,
    /// `None` disables the parameter average; sampling then reads the raw parameters.
    #[serde(default = "defaults::ema_decay")]
    pub ema_decay: Option<f64>,
    #[serde(default = "defaults::checkpoint_every")]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub checkpoint_dir: Option<PathBuf>,
    /// Loss rows are averaged over this many iterations.
    #[serde(default = "defaults::log_every")]
    pub log_every: usize,
    #[serde(default)]
    pub seed: u64,
    /// Present for adversarial training.
    #[serde(default)]
    pub hybrid: Option<HybridConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HybridConfig {
    /// Weight of the score-matching term.
    #[serde(default = "defaults::lambda")]
    pub lambda: f64,
    /// Discriminator updates per score update.
    #[serde(default = "defaults::n_d")]
    pub n_d: usize,
    #[serde(default = "defaults::hidden")]
    pub disc_hidden: Vec<usize>,
    #[serde(default = "defaults::disc_optimizer")]
    pub disc_optimizer: AdamConfig,
    /// Scale on the adversarial term of the score objective; 0 switches it off.
    #[serde(default = "defaults::adversarial_weight")]
    pub adversarial_weight: f64,
}

pub mod defaults {
    use super::*;

    pub fn iterations() -> usize {
        20_000
    }
    pub fn batch_size() -> usize {
        128
    }
    pub fn hidden() -> Vec<usize> {
        vec![128, 128, 128]
    }
    pub fn activation() -> Activation {
        Activation::Softplus
    }
    pub fn score_optimizer() -> AdamConfig {
        AdamConfig::new(1e-3, 0.0, 0.9)
    }
    pub fn disc_optimizer() -> AdamConfig {
        AdamConfig::new(1e-3, -0.5, 0.9)
    }
    pub fn ema_decay() -> Option<f64> {
        Some(0.999)
    }
    pub fn checkpoint_every() -> usize {
        2500
    }
    pub fn log_every() -> usize {
        100
    }
    pub fn lambda() -> f64 {
        1.0
    }
    pub fn n_d() -> usize {
        1
    }
    pub fn adversarial_weight() -> f64 {
        1.0
    }
}

impl Default for HybridConfig {
    fn default() -> Self {
        Self {
            lambda: defaults::lambda(),
            n_d: defaults::n_d(),
            disc_hidden: defaults::hidden(),
            disc_optimizer: defaults::disc_optimizer(),
            adversarial_weight: defaults::adversarial_weight(),
        }
    }
}

impl TrainConfig {
    pub fn new(schedule: NoiseSchedule) -> Self {
        Self {
            iterations: defaults::iterations(),
            batch_size: defaults::batch_size(),
            schedule,
            hidden: defaults::hidden(),
            activation: defaults::activation(),
            conditioning: Conditioning::default(),
            score_optimizer: defaults::score_optimizer(),
            ema_decay: defaults::ema_decay(),
            checkpoint_every: defaults::checkpoint_every(),
            checkpoint_dir: None,
            log_every: defaults::log_every(),
            seed: 0,
            hybrid: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if self.log_every == 0 || self.checkpoint_every == 0 {
            return Err(Error::InvalidConfig("log_every and checkpoint_every must be at least 1".into()));
        }
        self.score_optimizer.validate()?;
        if let Some(m) = self.ema_decay {
            if !(0.0..1.0).contains(&m) {
                return Err(Error::InvalidConfig(format!("ema_decay = {m} must lie in [0, 1)")));
            }
        }
        if let Some(h) = &self.hybrid {
            if !(h.lambda >= 0.0 && h.lambda.is_finite()) {
                return Err(Error::InvalidConfig(format!("lambda = {} must be >= 0", h.lambda)));
            }
            if h.n_d == 0 {
                return Err(Error::InvalidConfig("n_d must be at least 1".into()));
            }
            if !(h.adversarial_weight >= 0.0 && h.adversarial_weight.is_finite()) {
                return Err(Error::InvalidConfig("adversarial_weight must be >= 0".into()));
            }
            h.disc_optimizer.validate()?;
        }
        Ok(())
    }
}

/// Networks, optimizer moments and parameter averages of a training run.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub score: ScoreNet,
    pub score_opt: AdamState,
    pub ema: Option<EmaState>,
    pub disc: Option<Mlp>,
    pub disc_opt: Option<AdamState>,
    /// Score-network updates applied.
    pub step: u64,
    /// Discriminator updates applied.
    pub disc_steps: u64,
}

impl TrainState {
    pub fn new(config: &TrainConfig, dim: usize) -> Result<Self> {
        config.validate()?;
        let score = ScoreNet::new(
            dim,
            &config.hidden,
            config.activation,
            config.conditioning,
            &mut rng::stream(config.seed, streams::SCORE_INIT),
        )?;
        let score_opt = AdamState::new(config.score_optimizer, score.mlp.n_params())?;
        let ema = config
            .ema_decay
            .map(|m| EmaState::new(m, score.mlp.params().to_vec()))
            .transpose()?;
        let (disc, disc_opt) = match &config.hybrid {
            Some(h) => {
                let mut widths = vec![dim];
                widths.extend_from_slice(&h.disc_hidden);
                widths.push(1);
                let disc = Mlp::new(widths, config.activation, &mut rng::stream(config.seed, streams::DISC_INIT))?;
                let opt = AdamState::new(h.disc_optimizer, disc.n_params())?;
                (Some(disc), Some(opt))
            }
            None => (None, None),
        };
        Ok(Self { score, score_opt, ema, disc, disc_opt, step: 0, disc_steps: 0 })
    }

    /// The network used for sampling: the EMA shadow when enabled, raw parameters otherwise.
    pub fn sampling_net(&self) -> Result<ScoreNet> {
        let mut net = self.score.clone();
        if let Some(ema) = &self.ema {
            net.mlp.set_params(&ema.shadow)?;
        }
        Ok(net)
    }

    pub fn score_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            "score",
            &self.score.mlp,
            self.score.conditioning,
            self.step,
            self.ema.as_ref().map(|e| e.shadow.as_slice()),
        )
    }

    fn save(&self, dir: &Path, tag: &str, schedule: &NoiseSchedule) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(format!("score_{tag}.ckpt"));
        write_checkpoint(&path, &self.score_checkpoint().with_schedule(schedule))?;
        if let Some(disc) = &self.disc {
            let ck = Checkpoint::new("discriminator", disc, Conditioning::Unconditional, self.disc_steps, None);
            write_checkpoint(&dir.join(format!("disc_{tag}.ckpt")), &ck)?;
        }
        Ok(path)
    }
}

/// Losses averaged over one logging interval. The adversarial columns are empty for
/// non-adversarial runs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LossRow {
    /// Last iteration of the interval (1-based).
    pub iteration: usize,
    pub dsm_loss: f64,
    pub d_loss: Option<f64>,
    pub g_adv_loss: Option<f64>,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct TrainReport {
    pub rows: Vec<LossRow>,
    pub wall_clock_secs: f64,
    pub checkpoints: Vec<PathBuf>,
    pub final_checkpoint: Option<PathBuf>,
}

impl TrainReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "iteration,dsm_loss,d_loss,g_adv_loss")?;
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        for r in &self.rows {
            writeln!(w, "{},{},{},{}", r.iteration, r.dsm_loss, opt(r.d_loss), opt(r.g_adv_loss))?;
        }
        Ok(())
    }
}

#[derive(Default)]
struct Accum {
    n: usize,
    dsm: f64,
    d: f64,
    adv: f64,
}

fn diverged(iteration: usize, loss: f64, last_good: &Option<PathBuf>) -> Error {
    Error::TrainingDiverged { iteration: iteration as u64, loss, last_good: last_good.clone() }
}

/// Non-adversarial denoising score matching.
pub fn train_dsm(config: &TrainConfig, data: &[Vec<f64>]) -> Result<(TrainState, TrainReport)> {
    if config.hybrid.is_some() {
        return Err(Error::InvalidConfig("train_dsm called with a hybrid section".into()));
    }
    train(config, data)
}

/// Alternating adversarial training: `n_d` discriminator updates, then one score update, per
/// iteration. All updates of an iteration share one drawn batch.
pub fn train_hybrid(config: &TrainConfig, data: &[Vec<f64>]) -> Result<(TrainState, TrainReport)> {
    if config.hybrid.is_none() {
        return Err(Error::InvalidConfig("train_hybrid needs a hybrid section".into()));
    }
    train(config, data)
}

/// Dispatches on the presence of a hybrid section.
pub fn train(config: &TrainConfig, data: &[Vec<f64>]) -> Result<(TrainState, TrainReport)> {
    let dim = data.first().ok_or(Error::EmptyInput("training data"))?.len();
    let mut state = TrainState::new(config, dim)?;
    let report = run(config, data, &mut state)?;
    Ok((state, report))
}

fn run(config: &TrainConfig, data: &[Vec<f64>], state: &mut TrainState) -> Result<TrainReport> {
    let start = Instant::now();
    let mut rng = rng::stream(config.seed, streams::TRAIN_BATCHES);
    let mut report = TrainReport::default();
    let mut acc = Accum::default();
    let mut last_good: Option<PathBuf> = None;
    for it in 1..=config.iterations {
        let batch = DsmBatch::draw(data, &config.schedule, config.batch_size, &mut rng)?;
        let dsm = match &config.hybrid {
            None => {
                let (loss, grads) = dsm_loss_grad(&state.score, &batch)?;
                if !loss.is_finite() {
                    return Err(diverged(it, loss, &last_good));
                }
                state
                    .score_opt
                    .step(state.score.mlp.params_mut(), &grads)
                    .map_err(|_| diverged(it, loss, &last_good))?;
                loss
            }
            Some(h) => {
                let (disc, disc_opt) = match (state.disc.as_mut(), state.disc_opt.as_mut()) {
                    (Some(d), Some(o)) => (d, o),
                    _ => return Err(Error::InvalidConfig("hybrid state lacks a discriminator".into())),
                };
                let mut d_loss = 0.0;
                for _ in 0..h.n_d {
                    let fake = eds_batch(&state.score, &batch)?;
                    let (loss, grads) = lsgan_d_loss(disc, &batch.x, &fake)?;
                    if !loss.is_finite() {
                        return Err(diverged(it, loss, &last_good));
                    }
                    disc_opt
                        .step(disc.params_mut(), &grads)
                        .map_err(|_| diverged(it, loss, &last_good))?;
                    state.disc_steps += 1;
                    d_loss += loss / h.n_d as f64;
                }
                let g = hybrid_g_loss(&state.score, disc, &batch, h.lambda, h.adversarial_weight)?;
                if !g.total.is_finite() {
                    return Err(diverged(it, g.total, &last_good));
                }
                state
                    .score_opt
                    .step(state.score.mlp.params_mut(), &g.grads)
                    .map_err(|_| diverged(it, g.total, &last_good))?;
                acc.d += d_loss;
                acc.adv += g.adv;
                g.dsm
            }
        };
        state.step += 1;
        if let Some(ema) = state.ema.as_mut() {
            ema.update(state.score.mlp.params())?;
        }
        acc.dsm += dsm;
        acc.n += 1;
        if it % config.log_every == 0 || it == config.iterations {
            let n = acc.n as f64;
            let adversarial = config.hybrid.is_some();
            report.rows.push(LossRow {
                iteration: it,
                dsm_loss: acc.dsm / n,
                d_loss: adversarial.then(|| acc.d / n),
                g_adv_loss: adversarial.then(|| acc.adv / n),
            });
            acc = Accum::default();
        }
        if let Some(dir) = &config.checkpoint_dir {
            if it % config.checkpoint_every == 0 {
                let path = state.save(dir, &format!("{it:07}"), &config.schedule)?;
                report.checkpoints.push(path.clone());
                last_good = Some(path);
            }
        }
    }
    if let Some(dir) = &config.checkpoint_dir {
        report.final_checkpoint = Some(state.save(dir, "final", &config.schedule)?);
    }
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(report)
}
