//! Toy-scale quality measurement: a frozen random-projection feature map,
//! Gaussian feature statistics and the Fréchet distance between them, plus
//! the compute/quality sweep and block-variant comparison harnesses.

mod features;
mod stats;
mod sweep;
mod variants;

use std::path::{Path, PathBuf};

pub use features::{extract_features, projection, FEATURE_DIM};
pub use stats::{frechet_distance, gaussian_stats, FeatureStats, COV_EPS, NEGATIVE_WARN};
pub use sweep::{
    compute_columns, evaluate, read_sweep_csv, scaling_sweep, write_sweep_csv, CheckpointSource,
    EvalProtocol, SweepModel, SweepRecord,
};
pub use variants::{
    read_variant_csv, variant_sweep, write_variant_csv, VariantEval, VariantRecord, VariantRun,
    LOSS_WINDOW,
};

use crate::error::Result;
use crate::trainer::ToyDataset;

/// Dataset index where reference samples start, far past any training batch.
pub const REFERENCE_OFFSET: u64 = 1 << 40;

/// Default number of reference samples.
pub const REFERENCE_COUNT: usize = 10_000;

/// Cache file name for reference statistics.
pub fn reference_cache_name(dataset: &ToyDataset, count: usize, extractor_seed: u64) -> String {
    format!(
        "reference-k{}-{}x{}x{}-data{}-n{count}-extractor{extractor_seed}.ditt",
        dataset.num_classes, dataset.input, dataset.input, dataset.channels, dataset.seed
    )
}

/// Feature statistics of `count` held-out dataset samples, read from or
/// written to `cache_dir` when given.
pub fn reference_stats(
    dataset: &ToyDataset,
    count: usize,
    extractor_seed: u64,
    cache_dir: Option<&Path>,
) -> Result<FeatureStats> {
    let path: Option<PathBuf> =
        cache_dir.map(|d| d.join(reference_cache_name(dataset, count, extractor_seed)));
    if let Some(p) = path.as_ref().filter(|p| p.exists()) {
        let (stats, seed) = FeatureStats::load(p)?;
        if seed == extractor_seed && stats.count == count {
            return Ok(stats);
        }
    }
    let (x, _) = dataset.batch::<f64>(REFERENCE_OFFSET, count);
    let stats = gaussian_stats(&extract_features(&x, extractor_seed)?)?;
    if let Some(p) = path {
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir)?;
        }
        stats.save(&p, extractor_seed)?;
    }
    Ok(stats)
}

#[cfg(test)]
mod tests;
