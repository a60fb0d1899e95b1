use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{count_flops, sampling_compute, training_compute};
use crate::error::Result;
use crate::eval::{extract_features, frechet_distance, gaussian_stats, FeatureStats};
use crate::model::{DiT, DiTConfig};
use crate::sampler::{sample, SampleRequest};
use crate::schedule::DiffusionSchedule;
use crate::trainer::Checkpoint;

/// Where a sweep model's weights come from.
#[derive(Clone, Debug)]
pub enum CheckpointSource {
    Path(PathBuf),
    Loaded(Box<Checkpoint>),
}

/// One trained model of the grid.
#[derive(Clone, Debug)]
pub struct SweepModel {
    pub name: String,
    pub source: CheckpointSource,
}

/// How every grid point is evaluated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalProtocol {
    pub step_counts: Vec<usize>,
    pub sample_count: usize,
    pub seed: u64,
    pub guidance_scale: f64,
    pub extractor_seed: u64,
    /// Sample from the EMA weights rather than the raw ones.
    pub use_ema: bool,
    pub chunk_size: usize,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        EvalProtocol {
            step_counts: vec![16, 32, 64, 128, 256, 1000],
            sample_count: 512,
            seed: 0,
            guidance_scale: 1.0,
            extractor_seed: 0,
            use_ema: true,
            chunk_size: 64,
        }
    }
}

/// One (model, sampling steps) evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub model: String,
    pub variant: String,
    pub patch: usize,
    pub num_steps: usize,
    pub train_step: u64,
    /// Fréchet distance to the reference statistics; empty when skipped.
    pub metric: Option<f64>,
    pub sampling_tflops: f64,
    pub training_gflops: f64,
    /// `ok`, or why the point was skipped.
    pub status: String,
}

/// Per-image sampling Tflops and total training Gflops for a configuration.
pub fn compute_columns(
    config: &DiTConfig,
    num_steps: usize,
    guided: bool,
    batch: usize,
    train_steps: u64,
) -> (f64, f64) {
    let gflops = count_flops(config, config.input).gflops();
    (
        sampling_compute(gflops, num_steps as u64, guided),
        training_compute(gflops, batch as u64, train_steps),
    )
}

/// Fréchet distance of `protocol.sample_count` class-balanced samples from
/// `model` at `num_steps`, against `reference`.
pub fn evaluate(
    model: &DiT<f32>,
    schedule: &DiffusionSchedule,
    num_steps: usize,
    protocol: &EvalProtocol,
    reference: &FeatureStats,
) -> Result<f64> {
    let k = model.config.num_classes;
    let labels = (0..protocol.sample_count).map(|i| i % k).collect();
    let request = SampleRequest {
        chunk_size: protocol.chunk_size,
        ..SampleRequest::new(protocol.sample_count, num_steps, protocol.seed)
            .with_labels(labels)
            .with_guidance(protocol.guidance_scale)
    };
    let x = sample(model, schedule, &request)?;
    let stats = gaussian_stats(&extract_features(&x, protocol.extractor_seed)?)?;
    frechet_distance(&stats, reference)
}

fn load(source: &CheckpointSource) -> Result<Checkpoint> {
    match source {
        CheckpointSource::Path(p) => Checkpoint::load(p),
        CheckpointSource::Loaded(c) => Ok((**c).clone()),
    }
}

/// Evaluates every model at every step count. Models whose checkpoint
/// cannot be read produce skip records instead of failing the sweep.
pub fn scaling_sweep(
    models: &[SweepModel],
    protocol: &EvalProtocol,
    reference: &FeatureStats,
) -> Result<Vec<SweepRecord>> {
    let guided = protocol.guidance_scale != 1.0;
    let mut records = Vec::with_capacity(models.len() * protocol.step_counts.len());
    for m in models {
        let ckpt = load(&m.source);
        for &steps in &protocol.step_counts {
            let rec = match &ckpt {
                Ok(ckpt) => {
                    let (tflops, train) = compute_columns(
                        &ckpt.model,
                        steps,
                        guided,
                        ckpt.train.batch_size,
                        ckpt.step,
                    );
                    let params = if protocol.use_ema {
                        &ckpt.ema
                    } else {
                        &ckpt.params
                    };
                    let model = DiT {
                        config: ckpt.model.clone(),
                        params: params.clone(),
                    };
                    SweepRecord {
                        model: m.name.clone(),
                        variant: ckpt.model.variant.name().into(),
                        patch: ckpt.model.patch,
                        num_steps: steps,
                        train_step: ckpt.step,
                        metric: Some(evaluate(
                            &model,
                            &ckpt.train.schedule()?,
                            steps,
                            protocol,
                            reference,
                        )?),
                        sampling_tflops: tflops,
                        training_gflops: train,
                        status: "ok".into(),
                    }
                }
                Err(err) => SweepRecord {
                    model: m.name.clone(),
                    variant: String::new(),
                    patch: 0,
                    num_steps: steps,
                    train_step: 0,
                    metric: None,
                    sampling_tflops: 0.0,
                    training_gflops: 0.0,
                    status: format!("skipped: {err}"),
                },
            };
            records.push(rec);
        }
    }
    Ok(records)
}

/// Writes records as CSV with a header row.
pub fn write_sweep_csv(path: impl AsRef<Path>, records: &[SweepRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    for r in records {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sweep_csv(path: impl AsRef<Path>) -> Result<Vec<SweepRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
    r.deserialize().map(|row| row.map_err(csv_error)).collect()
}

pub(super) fn csv_error(err: csv::Error) -> crate::error::Error {
    crate::error::Error::Format(format!("sweep CSV: {err}"))
}
