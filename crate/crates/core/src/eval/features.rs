use crate::diffcore::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::rng;

/// Width of the extracted feature vectors.
pub const FEATURE_DIM: usize = 64;

/// The frozen projection for flattened inputs of size `input_dim`:
/// `[input_dim, 64]` with entries `N(0, 1/input_dim)`.
pub fn projection(input_dim: usize, seed: u64) -> Tensor<f64> {
    rng::normal_tensor::<f64>(&[input_dim, FEATURE_DIM], &[seed, 0xfea7, input_dim as u64])
        .map(|w| w / (input_dim as f64).sqrt())
}

/// `tanh(flatten(x)·W)` for a batch `[B, ...]`, giving `[B, 64]` in 64-bit.
///
/// This is a fixed random map, not a perceptual network; distances computed
/// from it are not comparable to Inception-based scores.
pub fn extract_features<S: Scalar>(batch: &Tensor<S>, seed: u64) -> Result<Tensor<f64>> {
    let b = *batch
        .shape()
        .first()
        .ok_or_else(|| Error::Contract("extract_features needs a leading batch axis".into()))?;
    if b == 0 {
        return Err(Error::Contract(
            "extract_features got an empty batch".into(),
        ));
    }
    let d = batch.numel() / b;
    let flat = batch.cast::<f64>().reshape([b, d])?;
    Ok(flat.matmul(&projection(d, seed))?.map(f64::tanh))
}
