//! Small feed-forward networks, the Adam optimizer and parameter EMA.

mod adam;
mod checkpoint;
mod ema;
mod mlp;
mod score_net;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CheckpointHeader, CHECKPOINT_FORMAT};
pub use ema::EmaState;
pub use mlp::{param_count, Activation, Gradients, Mlp, Tape};
pub use score_net::{Conditioning, ScoreNet};
