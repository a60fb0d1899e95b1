use crate::diffcore::{Scalar, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::params::FREQ_DIM;

/// Largest period of the timestep frequency ladder.
pub const MAX_PERIOD: f64 = 10_000.0;

fn patch_dims(shape: &[usize], p: usize) -> Result<(usize, usize, usize)> {
    let (b, rest) = match shape.len() {
        3 => (1, shape),
        4 => (shape[0], &shape[1..]),
        _ => return Err(Error::shape("patchify", shape, &[p, p, 0])),
    };
    let (i, c) = (rest[0], rest[2]);
    if rest[1] != i || p == 0 || i % p != 0 {
        return Err(Error::shape("patchify", shape, &[p, p, c]));
    }
    Ok((b, i / p, c))
}

/// Cuts `[I, I, C]` (or `[B, I, I, C]`) into `(I/p)²` tokens of width p²·C.
///
/// Patches come in raster order over the patch grid; inside a patch the
/// values are row-major over (row, column, channel).
///
/// ```
/// use dit::{model::patchify, Tensor};
/// let z = Tensor::<f32>::new([4, 4, 1], (0..16).map(|v| v as f32).collect()).unwrap();
/// let tokens = patchify(&z, 2).unwrap();
/// assert_eq!(tokens.shape(), &[4, 4]);
/// assert_eq!(&tokens.data()[..4], &[0.0, 1.0, 4.0, 5.0]);
/// ```
pub fn patchify<S: Scalar>(z: &Tensor<S>, p: usize) -> Result<Tensor<S>> {
    let (b, g, c) = patch_dims(z.shape(), p)?;
    let tokens = z
        .reshape([b, g, p, g, p, c])?
        .permute(&[0, 1, 3, 2, 4, 5])?;
    if z.ndim() == 3 {
        tokens.reshape([g * g, p * p * c])
    } else {
        tokens.reshape([b, g * g, p * p * c])
    }
}

fn unpatch_dims(shape: &[usize], p: usize, i: usize, k: usize) -> Result<usize> {
    let expected_t = if p > 0 && i.is_multiple_of(p) {
        (i / p) * (i / p)
    } else {
        0
    };
    let (b, t, w) = match *shape {
        [t, w] => (1, t, w),
        [b, t, w] => (b, t, w),
        _ => return Err(Error::shape("unpatchify", shape, &[expected_t, p * p * k])),
    };
    if expected_t == 0 || t != expected_t || w != p * p * k {
        return Err(Error::shape("unpatchify", shape, &[expected_t, p * p * k]));
    }
    Ok(b)
}

/// Inverse of [`patchify`]: `[T, p²·K]` → `[I, I, K]`, batched likewise.
pub fn unpatchify<S: Scalar>(
    tokens: &Tensor<S>,
    p: usize,
    i: usize,
    k: usize,
) -> Result<Tensor<S>> {
    let b = unpatch_dims(tokens.shape(), p, i, k)?;
    let g = i / p;
    let z = tokens
        .reshape([b, g, g, p, p, k])?
        .permute(&[0, 1, 3, 2, 4, 5])?;
    if tokens.ndim() == 2 {
        z.reshape([i, i, k])
    } else {
        z.reshape([b, i, i, k])
    }
}

/// Differentiable [`patchify`] for a batch `[B, I, I, C]` → `[B, T, p²C]`.
pub fn patchify_var<S: Scalar>(z: &Var<S>, p: usize) -> Result<Var<S>> {
    let shape = z.shape();
    if shape.len() != 4 {
        return Err(Error::shape("patchify", &shape, &[0, 0, 0, 0]));
    }
    let (b, g, c) = patch_dims(&shape, p)?;
    z.reshape(&[b, g, p, g, p, c])?
        .permute(&[0, 1, 3, 2, 4, 5])?
        .reshape(&[b, g * g, p * p * c])
}

/// Differentiable [`unpatchify`] for a batch `[B, T, p²K]` → `[B, I, I, K]`.
pub fn unpatchify_var<S: Scalar>(tokens: &Var<S>, p: usize, i: usize, k: usize) -> Result<Var<S>> {
    let shape = tokens.shape();
    if shape.len() != 3 {
        return Err(Error::shape("unpatchify", &shape, &[0, 0, 0]));
    }
    let b = unpatch_dims(&shape, p, i, k)?;
    let g = i / p;
    tokens
        .reshape(&[b, g, g, p, p, k])?
        .permute(&[0, 1, 3, 2, 4, 5])?
        .reshape(&[b, i, i, k])
}

fn sincos_1d(out: &mut [f64], pos: f64) {
    let quarter = out.len() / 2;
    for (i, pair) in out.chunks_exact_mut(2).enumerate() {
        let omega = 1.0 / MAX_PERIOD.powf(i as f64 / quarter as f64);
        pair[0] = (pos * omega).sin();
        pair[1] = (pos * omega).cos();
    }
}

/// Fixed 2-D sine-cosine positional embedding for a `grid × grid` patch grid.
///
/// The first half of each row encodes the patch row, the second half the
/// patch column, each as interleaved `(sin, cos)` pairs over frequencies
/// `1/10000^(i/(d/4))`.
pub fn pos_embed_2d<S: Scalar>(grid: usize, d: usize) -> Result<Tensor<S>> {
    if !d.is_multiple_of(4) || d == 0 || grid == 0 {
        return Err(Error::Config(format!(
            "positional embedding needs d divisible by 4, got {d}"
        )));
    }
    let mut data = vec![0.0; grid * grid * d];
    for (k, row) in data.chunks_exact_mut(d).enumerate() {
        let (h, w) = row.split_at_mut(d / 2);
        sincos_1d(h, (k / grid) as f64);
        sincos_1d(w, (k % grid) as f64);
    }
    Tensor::from_f64([grid * grid, d], &data)
}

/// Sinusoidal timestep features `[cos(t·ω_i)…, sin(t·ω_i)…]`, one row per
/// timestep, with `ω_i = 10000^(−i/128)`.
pub fn timestep_frequencies<S: Scalar>(t: &[usize]) -> Result<Tensor<S>> {
    let half = FREQ_DIM / 2;
    let mut data = Vec::with_capacity(t.len() * FREQ_DIM);
    for &t in t {
        let args: Vec<f64> = (0..half)
            .map(|i| t as f64 * (-MAX_PERIOD.ln() * i as f64 / half as f64).exp())
            .collect();
        data.extend(args.iter().map(|a| a.cos()));
        data.extend(args.iter().map(|a| a.sin()));
    }
    Tensor::from_f64([t.len(), FREQ_DIM], &data)
}
