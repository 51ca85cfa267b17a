//! Denoising score matching, least-squares adversarial losses and the training loops.

mod losses;
mod trainer;

pub use losses::{dsm_loss, dsm_loss_grad, dsm_per_sample, eds_batch, hybrid_g_loss, lsgan_d_loss, DsmBatch, HybridLoss};
pub use trainer::{defaults, train, train_dsm, train_hybrid, HybridConfig, LossRow, TrainConfig, TrainReport, TrainState};
