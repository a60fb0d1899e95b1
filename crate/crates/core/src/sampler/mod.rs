//! Ancestral sampling with learned variances and classifier-free guidance.
//!
//! Noise for respaced step `k` of sample `i` comes from the stream keyed by
//! `(seed, k, i)`, and the network treats every batch row independently, so
//! the output bits do not depend on how samples are chunked or parallelised.

use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;

use crate::diffcore::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::model::{DiT, DiTConfig};
use crate::rng;
use crate::schedule::DiffusionSchedule;

mod ppm;

pub use ppm::{ppm_grid, write_ppm};

/// Anything that predicts `(ε̂, v)` for a batch `[B, I, I, C]`.
pub trait Denoiser: Sync {
    fn config(&self) -> &DiTConfig;
    fn predict(&self, z: &Tensor, t: &[usize], labels: &[usize]) -> Result<(Tensor, Tensor)>;
}

impl Denoiser for DiT<f32> {
    fn config(&self) -> &DiTConfig {
        &self.config
    }

    fn predict(&self, z: &Tensor, t: &[usize], labels: &[usize]) -> Result<(Tensor, Tensor)> {
        DiT::predict(self, z, t, labels)
    }
}

/// Wraps a [`Denoiser`] and counts per-image network evaluations.
#[derive(Debug)]
pub struct CountingDenoiser<D> {
    inner: D,
    evaluations: AtomicUsize,
}

impl<D: Denoiser> CountingDenoiser<D> {
    pub fn new(inner: D) -> Self {
        CountingDenoiser {
            inner,
            evaluations: AtomicUsize::new(0),
        }
    }

    /// Total batch rows passed through the network so far.
    pub fn evaluations(&self) -> usize {
        self.evaluations.load(Ordering::Relaxed)
    }

    pub fn into_inner(self) -> D {
        self.inner
    }
}

impl<D: Denoiser> Denoiser for CountingDenoiser<D> {
    fn config(&self) -> &DiTConfig {
        self.inner.config()
    }

    fn predict(&self, z: &Tensor, t: &[usize], labels: &[usize]) -> Result<(Tensor, Tensor)> {
        self.evaluations.fetch_add(z.shape()[0], Ordering::Relaxed);
        self.inner.predict(z, t, labels)
    }
}

/// `ε_uncond + s·(ε_cond − ε_uncond)`; `s = 1` returns `ε_cond` exactly.
pub fn cfg_combine<S: Scalar>(
    eps_cond: &Tensor<S>,
    eps_uncond: &Tensor<S>,
    s: f64,
) -> Result<Tensor<S>> {
    if eps_cond.shape() != eps_uncond.shape() {
        return Err(Error::shape(
            "cfg_combine",
            eps_cond.shape(),
            eps_uncond.shape(),
        ));
    }
    if s == 1.0 {
        return Ok(eps_cond.clone());
    }
    let s = S::from_f64(s);
    Ok(eps_uncond.zip_map(eps_cond, |u, c| u + s * (c - u)))
}

/// One reverse step `x_t → x_{t−1}` on a batch that shares timestep `t`.
///
/// The mean is the true posterior mean around `x̂0` recovered from `ε̂`
/// (optionally clamped to [−1, 1]); the log-variance interpolates
/// `log β_t` and `log β̃_t` with weight `(v + 1)/2`. At `t = 1` the mean is
/// returned and `noise` is ignored.
pub fn p_sample_step<S: Scalar>(
    eps_hat: &Tensor<S>,
    v: &Tensor<S>,
    xt: &Tensor<S>,
    t: usize,
    schedule: &DiffusionSchedule,
    noise: &Tensor<S>,
    clip_denoised: bool,
) -> Result<Tensor<S>> {
    for other in [v, xt, noise] {
        if other.shape() != eps_hat.shape() {
            return Err(Error::shape(
                "p_sample_step",
                eps_hat.shape(),
                other.shape(),
            ));
        }
    }
    let ts = vec![t; xt.shape()[0]];
    let mut x0 = schedule.predict_x0_from_eps(xt, &ts, eps_hat)?;
    if clip_denoised {
        x0 = x0.map(|x| x.max(-S::one()).min(S::one()));
    }
    let (mean, _) = schedule.posterior_mean_variance(&x0, xt, &ts)?;
    if t == 1 {
        return Ok(mean);
    }
    let (max_log, min_log) = (schedule.log_beta(t), schedule.log_posterior_variance(t));
    let data = mean
        .data()
        .iter()
        .zip(v.data())
        .zip(noise.data())
        .map(|((&m, &v), &z)| {
            let frac = (v.as_f64() + 1.0) / 2.0;
            let logvar = frac * max_log + (1.0 - frac) * min_log;
            S::from_f64(m.as_f64() + (0.5 * logvar).exp() * z.as_f64())
        })
        .collect();
    Tensor::new(mean.shape(), data)
}

/// What to generate.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRequest {
    pub count: usize,
    /// One class per sample; `None` samples unconditionally (null label,
    /// no guidance).
    pub labels: Option<Vec<usize>>,
    /// Guidance scale `s ≥ 1`; `1` disables guidance.
    pub guidance_scale: f64,
    pub num_steps: usize,
    pub seed: u64,
    pub clip_denoised: bool,
    /// Samples per network batch.
    pub chunk_size: usize,
    /// Run chunks on the rayon pool.
    pub parallel: bool,
}

impl SampleRequest {
    pub fn new(count: usize, num_steps: usize, seed: u64) -> Self {
        SampleRequest {
            count,
            labels: None,
            guidance_scale: 1.0,
            num_steps,
            seed,
            clip_denoised: false,
            chunk_size: 64,
            parallel: true,
        }
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Self {
        self.labels = Some(labels);
        self
    }

    pub fn with_guidance(mut self, s: f64) -> Self {
        self.guidance_scale = s;
        self
    }

    fn guided(&self) -> bool {
        self.labels.is_some() && self.guidance_scale != 1.0
    }

    fn validate(&self, config: &DiTConfig, schedule: &DiffusionSchedule) -> Result<()> {
        if !(self.guidance_scale >= 1.0 && self.guidance_scale.is_finite()) {
            return Err(Error::Config(format!(
                "guidance scale must be ≥ 1, got {}",
                self.guidance_scale
            )));
        }
        if self.num_steps == 0 || self.num_steps > schedule.t_max() {
            return Err(Error::Config(format!(
                "num_steps must be in 1..={}, got {}",
                schedule.t_max(),
                self.num_steps
            )));
        }
        if self.count == 0 || self.chunk_size == 0 {
            return Err(Error::Config(
                "count and chunk size must be positive".into(),
            ));
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.count {
                return Err(Error::Config(format!(
                    "{} labels for {} samples",
                    labels.len(),
                    self.count
                )));
            }
            if let Some(&bad) = labels.iter().find(|&&c| c >= config.num_classes) {
                return Err(Error::Index {
                    what: "class label",
                    index: bad,
                    limit: config.num_classes,
                });
            }
        }
        Ok(())
    }
}

fn stack(shape: &[usize], rows: impl Iterator<Item = Tensor>) -> Tensor {
    let mut data = Vec::new();
    let mut n = 0;
    for r in rows {
        data.extend_from_slice(r.data());
        n += 1;
    }
    let mut full = vec![n];
    full.extend_from_slice(shape);
    Tensor::new(full, data).expect("rows share a shape")
}

/// Generates `request.count` latents `[count, I, I, C]`.
pub fn sample<D: Denoiser + ?Sized>(
    model: &D,
    schedule: &DiffusionSchedule,
    request: &SampleRequest,
) -> Result<Tensor> {
    let config = model.config().clone();
    request.validate(&config, schedule)?;
    let respaced = schedule.respace(request.num_steps)?;
    let img = [config.input, config.input, config.channels];
    let null = config.null_label();
    let labels: Vec<usize> = request
        .labels
        .clone()
        .unwrap_or_else(|| vec![null; request.count]);
    let guided = request.guided();
    let seed = request.seed;

    let run_chunk = |start: usize| -> Result<Tensor> {
        let end = (start + request.chunk_size).min(request.count);
        let idx = start..end;
        let b = end - start;
        let mut x = stack(
            &img,
            idx.clone()
                .map(|i| rng::normal_tensor(&img, &[seed, 0, i as u64])),
        );
        let cond = &labels[start..end];
        for k in (1..=respaced.len()).rev() {
            let t = respaced.original_timestep(k);
            let (eps, v) = if guided {
                let both = Tensor::concat(&[&x, &x], 0)?;
                let mut lab = cond.to_vec();
                lab.extend(std::iter::repeat_n(null, b));
                let (eps, v) = model.predict(&both, &vec![t; 2 * b], &lab)?;
                let eps = cfg_combine(
                    &eps.narrow(0, 0, b)?,
                    &eps.narrow(0, b, b)?,
                    request.guidance_scale,
                )?;
                (eps, v.narrow(0, 0, b)?)
            } else {
                model.predict(&x, &vec![t; b], cond)?
            };
            let noise = stack(
                &img,
                idx.clone()
                    .map(|i| rng::normal_tensor(&img, &[seed, k as u64, i as u64])),
            );
            x = p_sample_step(
                &eps,
                &v,
                &x,
                k,
                &respaced.schedule,
                &noise,
                request.clip_denoised,
            )?;
            if !x.all_finite() {
                return Err(Error::NonFinite(format!(
                    "sample chunk at {start}, step {k} (t = {t})"
                )));
            }
        }
        Ok(x)
    };

    let starts: Vec<usize> = (0..request.count).step_by(request.chunk_size).collect();
    let chunks: Vec<Tensor> = if request.parallel {
        starts
            .par_iter()
            .map(|&s| run_chunk(s))
            .collect::<Result<_>>()?
    } else {
        starts
            .iter()
            .map(|&s| run_chunk(s))
            .collect::<Result<_>>()?
    };
    let refs: Vec<&Tensor> = chunks.iter().collect();
    Tensor::concat(&refs, 0)
}
