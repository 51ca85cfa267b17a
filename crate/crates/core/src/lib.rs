//! Desk-scale laboratory for score-based generative sampling.
//!
//! The crate is organised around a handful of small modules:
//!
//! - [`schedule`]: geometric noise schedules, dilation and the consistent-sampling constants.
//! - [`analytic`]: Gaussian mixtures with closed-form smoothed densities, scores and
//!   posterior means, plus synthetic 2-D datasets.
//! - [`nn`]: a minimal MLP with exact reverse-mode gradients, Adam and parameter EMA.
//! - [`training`]: denoising score matching, least-squares adversarial losses and trainers.
//! - [`sampler`]: annealed Langevin sampling (ALS), consistent annealed sampling (CAS),
//!   expected denoised samples and final-step denoising.
//! - [`noisetrace`]: idealized noise-variance recurrences of both samplers.
//! - [`metrics`]: mode coverage, mode-histogram KL, nearest-mode distance, energy distance.
//! - [`check`]: the oracle battery run by `scorelab check`.

pub mod analytic;
pub mod check;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod noisetrace;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod svg;
pub mod training;

pub use analytic::{GaussianMixture, SyntheticDataset};
pub use error::{Error, Result};
pub use model::ScoreModel;
pub use schedule::{NoiseSchedule, SamplerConstants};
