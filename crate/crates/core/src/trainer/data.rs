use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::diffcore::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::rng;

const TEXTURE_STD: f64 = 0.35;
const STATS_SAMPLES: u64 = 4096;

/// Procedural class-conditional latents standing in for encoded images.
///
/// Class `k` draws an oriented bar at angle `kπ/K` plus a Gaussian blob
/// whose position also depends on `k`; each channel mixes the two with its
/// own weights, then Gaussian texture is added. Values are normalised per
/// channel with statistics measured over the first 4096 stream items.
/// Item `i` of the stream depends only on `(seed, i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyDataset {
    pub num_classes: usize,
    pub input: usize,
    pub channels: usize,
    pub seed: u64,
    mean: Vec<f64>,
    std: Vec<f64>,
}

/// Builds the toy stream for the given shape.
pub fn toy_dataset(
    num_classes: usize,
    input: usize,
    channels: usize,
    seed: u64,
) -> Result<ToyDataset> {
    if num_classes == 0 || input < 2 || channels == 0 {
        return Err(Error::Config(format!(
            "toy dataset needs classes ≥ 1, input ≥ 2, channels ≥ 1; got {num_classes}, {input}, {channels}"
        )));
    }
    let mut ds = ToyDataset {
        num_classes,
        input,
        channels,
        seed,
        mean: vec![0.0; channels],
        std: vec![1.0; channels],
    };
    let mut sum = vec![0.0; channels];
    let mut sq = vec![0.0; channels];
    for i in 0..STATS_SAMPLES {
        let (raw, _) = ds.raw(i);
        for (k, v) in raw.iter().enumerate() {
            sum[k % channels] += v;
            sq[k % channels] += v * v;
        }
    }
    let n = (STATS_SAMPLES as usize * input * input) as f64;
    for c in 0..channels {
        let mean = sum[c] / n;
        ds.mean[c] = mean;
        ds.std[c] = (sq[c] / n - mean * mean).sqrt().max(1e-12);
    }
    Ok(ds)
}

impl ToyDataset {
    /// Class of stream item `index`.
    pub fn label(&self, index: u64) -> usize {
        (rng::mix(&[self.seed, 0x1abe1, index]) % self.num_classes as u64) as usize
    }

    /// Noise-free pattern of `class`, `[I, I, C]` row-major, before
    /// normalisation.
    fn pattern(&self, class: usize) -> Vec<f64> {
        let (n, c) = (self.input, self.channels);
        let theta = PI * class as f64 / self.num_classes as f64;
        let (dir_x, dir_y) = (theta.cos(), theta.sin());
        let centre = (n as f64 - 1.0) / 2.0;
        let phase = 2.0 * PI * class as f64 / self.num_classes as f64;
        let (bx, by) = (
            centre + 0.3 * n as f64 * phase.cos(),
            centre + 0.3 * n as f64 * phase.sin(),
        );
        let width = (n as f64 / 8.0).max(0.75);
        let mut out = vec![0.0; n * n * c];
        for r in 0..n {
            for col in 0..n {
                let (x, y) = (col as f64 - centre, r as f64 - centre);
                // Distance from the line through the centre with direction θ.
                let dist = (x * dir_y - y * dir_x).abs();
                let bar = (-(dist * dist) / (2.0 * width * width)).exp();
                let d2 = (col as f64 - bx).powi(2) + (r as f64 - by).powi(2);
                let blob = (-d2 / (2.0 * (1.5 * width).powi(2))).exp();
                for ch in 0..c {
                    let a = (ch as f64 * 0.9 + 0.4).cos();
                    let b = (ch as f64 * 1.3 + 0.2).sin();
                    out[(r * n + col) * c + ch] = 2.0 * (a * bar + b * blob);
                }
            }
        }
        out
    }

    fn raw(&self, index: u64) -> (Vec<f64>, usize) {
        let label = self.label(index);
        let mut rng = rng::keyed(&[self.seed, 0x7e47, index]);
        let mut x = self.pattern(label);
        for v in &mut x {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += TEXTURE_STD * z;
        }
        (x, label)
    }

    /// Stream item `index`: a normalised `[I, I, C]` latent and its label.
    pub fn sample<S: Scalar>(&self, index: u64) -> (Tensor<S>, usize) {
        let (raw, label) = self.raw(index);
        let c = self.channels;
        let data: Vec<f64> = raw
            .iter()
            .enumerate()
            .map(|(k, v)| (v - self.mean[k % c]) / self.std[k % c])
            .collect();
        let t = Tensor::from_f64([self.input, self.input, c], &data).expect("pattern shape");
        (t, label)
    }

    /// Items `start..start + count` stacked into `[count, I, I, C]`.
    pub fn batch<S: Scalar>(&self, start: u64, count: usize) -> (Tensor<S>, Vec<usize>) {
        let mut data = Vec::with_capacity(count * self.input * self.input * self.channels);
        let mut labels = Vec::with_capacity(count);
        for i in 0..count as u64 {
            let (x, y) = self.sample::<S>(start + i);
            data.extend_from_slice(x.data());
            labels.push(y);
        }
        let t =
            Tensor::new([count, self.input, self.input, self.channels], data).expect("batch shape");
        (t, labels)
    }

    /// Normalised class pattern (the noise-free class mean).
    pub fn class_mean(&self, class: usize) -> Tensor<f64> {
        let c = self.channels;
        let data: Vec<f64> = self
            .pattern(class)
            .iter()
            .enumerate()
            .map(|(k, v)| (v - self.mean[k % c]) / self.std[k % c])
            .collect();
        Tensor::from_f64([self.input, self.input, c], &data).expect("pattern shape")
    }
}

/// Reverses the column axis of `[I, I, C]` (or each image of a batch).
pub fn flip_columns<S: Scalar>(z: &Tensor<S>) -> Tensor<S> {
    let shape = z.shape();
    let nd = shape.len();
    let (w, c) = (shape[nd - 2], shape[nd - 1]);
    let mut out = z.clone();
    for (src, dst) in z
        .data()
        .chunks_exact(w * c)
        .zip(out.data_mut().chunks_exact_mut(w * c))
    {
        for col in 0..w {
            dst[col * c..(col + 1) * c].copy_from_slice(&src[(w - 1 - col) * c..(w - col) * c]);
        }
    }
    out
}

/// Horizontal flip with probability one half.
pub fn hflip<S: Scalar>(z: &Tensor<S>, rng: &mut impl Rng) -> Tensor<S> {
    if rng.random_bool(0.5) {
        flip_columns(z)
    } else {
        z.clone()
    }
}
