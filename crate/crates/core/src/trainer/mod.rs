//! Desk-scale training: a procedural class-conditional latent stream,
//! horizontal flips, AdamW, EMA shadow weights, checkpoints and a loss log.
//!
//! Every random draw of step `s` comes from a stream keyed by
//! `(seed, s, purpose)`, so a run restarted from the checkpoint of step `k`
//! replays steps `k+1..` bit for bit.

mod checkpoint;
mod data;
mod gradcheck;
mod optim;
mod train;

pub use checkpoint::Checkpoint;
pub use data::{flip_columns, hflip, toy_dataset, ToyDataset};
pub use gradcheck::{check_model_gradients, ModelGradCheck};
pub use optim::{adamw_step, ema_update, AdamState, AdamWConfig};
pub use train::{
    sample_timesteps, train, StepRecord, TrainConfig, TrainOutcome, Trainer, LOSS_CSV_HEADER,
};

#[cfg(test)]
mod tests;
