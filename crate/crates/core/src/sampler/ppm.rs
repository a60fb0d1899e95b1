use std::path::Path;

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// Tiles a batch `[B, I, I, C]` into a binary PPM (P6) image with `cols`
/// tiles per row and a one-pixel gap.
///
/// Each channel is min-max scaled over the batch. One channel renders as
/// grey, two as (c0, c1, mean), three or more use the first three.
pub fn ppm_grid(samples: &Tensor, cols: usize) -> Result<Vec<u8>> {
    let &[b, h, w, c] = samples.shape() else {
        return Err(Error::Contract(format!(
            "ppm_grid wants [B, I, I, C], got {:?}",
            samples.shape()
        )));
    };
    if cols == 0 || b == 0 || c == 0 {
        return Err(Error::Config(
            "ppm_grid needs a non-empty batch and at least one column".into(),
        ));
    }
    let rows = b.div_ceil(cols);
    let (width, height) = (cols * (w + 1) - 1, rows * (h + 1) - 1);
    let mut range = vec![(f32::INFINITY, f32::NEG_INFINITY); c];
    for (i, &x) in samples.data().iter().enumerate() {
        let r = &mut range[i % c];
        *r = (r.0.min(x), r.1.max(x));
    }
    let unit: Vec<f32> = samples
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let (lo, hi) = range[i % c];
            ((x - lo) / (hi - lo).max(1e-12)).clamp(0.0, 1.0)
        })
        .collect();
    let byte = |x: f32| (x * 255.0).round() as u8;

    let mut pixels = vec![0u8; width * height * 3];
    for n in 0..b {
        let (oy, ox) = ((n / cols) * (h + 1), (n % cols) * (w + 1));
        for y in 0..h {
            for x in 0..w {
                let at = |ch: usize| unit[((n * h + y) * w + x) * c + ch];
                let rgb = match c {
                    1 => [at(0); 3],
                    2 => [at(0), at(1), 0.5 * (at(0) + at(1))],
                    _ => [at(0), at(1), at(2)],
                };
                let p = ((oy + y) * width + ox + x) * 3;
                for (k, v) in rgb.into_iter().enumerate() {
                    pixels[p + k] = byte(v);
                }
            }
        }
    }
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend(pixels);
    Ok(out)
}

/// Writes [`ppm_grid`] output to `path`.
pub fn write_ppm(path: impl AsRef<Path>, samples: &Tensor, cols: usize) -> Result<()> {
    std::fs::write(path, ppm_grid(samples, cols)?)?;
    Ok(())
}
