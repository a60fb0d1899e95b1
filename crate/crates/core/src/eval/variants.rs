use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalProtocol, FeatureStats};
use crate::model::{BlockVariant, DiT, DiTConfig};
use crate::trainer::{Checkpoint, StepRecord, ToyDataset, TrainConfig, Trainer};

/// Steps averaged at each end of the loss curve.
pub const LOSS_WINDOW: usize = 100;

/// Outcome of training one block variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantRecord {
    pub variant: String,
    pub params: usize,
    pub train_steps: u64,
    /// Mean `L_simple` over the first and last [`LOSS_WINDOW`] steps.
    pub initial_l_simple: Option<f64>,
    pub final_l_simple: Option<f64>,
    pub final_l_vlb: Option<f64>,
    /// Fréchet distance of EMA samples, when an evaluation was requested.
    pub metric: Option<f64>,
    pub wall_clock_s: f64,
    /// `ok`, or the first failure.
    pub status: String,
}

/// A [`VariantRecord`] plus the trained weights when training finished.
#[derive(Clone, Debug)]
pub struct VariantRun {
    pub record: VariantRecord,
    pub checkpoint: Option<Checkpoint>,
    pub log: Vec<StepRecord>,
}

/// Sampling settings for scoring each trained variant.
#[derive(Clone, Copy, Debug)]
pub struct VariantEval<'a> {
    pub protocol: &'a EvalProtocol,
    pub num_steps: usize,
    pub reference: &'a FeatureStats,
}

fn window_mean(log: &[StepRecord], f: impl Fn(&StepRecord) -> f64) -> Option<f64> {
    (!log.is_empty()).then(|| log.iter().map(f).sum::<f64>() / log.len() as f64)
}

/// Trains `base` once per block variant under the same `train` settings.
///
/// A variant that hits a non-finite loss gets a failure record instead of
/// aborting the sweep. With `out` set, each variant logs and checkpoints into
/// `out/<variant>/`.
pub fn variant_sweep(
    base: &DiTConfig,
    variants: &[BlockVariant],
    train: &TrainConfig,
    dataset: &ToyDataset,
    eval: Option<VariantEval<'_>>,
    out: Option<&Path>,
) -> Result<Vec<VariantRun>> {
    let mut runs = Vec::with_capacity(variants.len());
    for &variant in variants {
        let config = base.clone().with_variant(variant);
        let start = Instant::now();
        let mut trainer = Trainer::new(config.clone(), train.clone(), dataset.clone())?;
        let dir = out.map(|d| d.join(variant.name()));
        let result = trainer.run_until(train.steps, dir.as_deref());
        let mut record = VariantRecord {
            variant: variant.name().into(),
            params: trainer.params.num_params(),
            train_steps: trainer.step,
            initial_l_simple: None,
            final_l_simple: None,
            final_l_vlb: None,
            metric: None,
            wall_clock_s: 0.0,
            status: "ok".into(),
        };
        let (log, checkpoint) = match result {
            Ok(log) => {
                let w = LOSS_WINDOW.min(log.len());
                let tail = &log[log.len() - w..];
                record.initial_l_simple = window_mean(&log[..w], |r| r.l_simple);
                record.final_l_simple = window_mean(tail, |r| r.l_simple);
                record.final_l_vlb = window_mean(tail, |r| r.l_vlb);
                let ckpt = trainer.checkpoint();
                if let Some(e) = eval {
                    let model = DiT {
                        config: config.clone(),
                        params: ckpt.ema.clone(),
                    };
                    record.metric = Some(evaluate(
                        &model,
                        trainer.schedule(),
                        e.num_steps,
                        e.protocol,
                        e.reference,
                    )?);
                }
                (log, Some(ckpt))
            }
            Err(err @ Error::NonFinite(_)) => {
                record.status = err.to_string();
                (Vec::new(), None)
            }
            Err(err) => return Err(err),
        };
        record.wall_clock_s = start.elapsed().as_secs_f64();
        log::info!(
            "{}: {} steps, status {}",
            record.variant,
            record.train_steps,
            record.status
        );
        runs.push(VariantRun {
            record,
            checkpoint,
            log,
        });
    }
    Ok(runs)
}

/// Writes the comparison table as CSV with a header row.
pub fn write_variant_csv(path: impl AsRef<Path>, records: &[VariantRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(super::sweep::csv_error)?;
    for r in records {
        w.serialize(r).map_err(super::sweep::csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_variant_csv(path: impl AsRef<Path>) -> Result<Vec<VariantRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(super::sweep::csv_error)?;
    r.deserialize()
        .map(|row| row.map_err(super::sweep::csv_error))
        .collect()
}
