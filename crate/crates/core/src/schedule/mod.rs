//! Time-indexed diffusion quantities.
//!
//! Timesteps are 1-based: `t = 1..=t_max`, with `ᾱ_0 = 1`. All constants are
//! held in 64-bit and converted at use.

mod loss;

use std::fmt::Write as _;

pub use loss::{
    decoder_nll, gaussian_kl, hybrid_loss, hybrid_loss_with_mean_eps, model_variance, vlb_term,
    HybridLoss, VLB_WEIGHT,
};

use crate::diffcore::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Precomputed per-step constants of a discrete forward process.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    betas: Vec<f64>,
    alpha_bar: Vec<f64>,
    alpha_bar_prev: Vec<f64>,
    sqrt_alpha_bar: Vec<f64>,
    sqrt_one_minus_alpha_bar: Vec<f64>,
    posterior_variance: Vec<f64>,
    log_beta: Vec<f64>,
    log_posterior_variance: Vec<f64>,
    posterior_mean_coef1: Vec<f64>,
    posterior_mean_coef2: Vec<f64>,
}

impl DiffusionSchedule {
    /// Betas interpolated linearly from `beta_start` (t = 1) to `beta_end`
    /// (t = t_max), both inclusive.
    pub fn linear(t_max: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if t_max == 0 {
            return Err(Error::Config("t_max must be at least 1".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Config(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}..{beta_end}"
            )));
        }
        let betas = (0..t_max)
            .map(|i| {
                if t_max == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (t_max - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    /// The default process: 1000 steps, β from 1e-4 to 2e-2.
    pub fn default_linear() -> Self {
        Self::linear(1000, 1e-4, 2e-2).expect("default schedule is valid")
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::Config("empty beta sequence".into()));
        }
        if let Some(b) = betas.iter().find(|&&b| !(b > 0.0 && b < 1.0)) {
            return Err(Error::Config(format!("beta {b} outside (0, 1)")));
        }
        let mut alpha_bar = Vec::with_capacity(betas.len());
        let mut acc = 1.0;
        for &b in &betas {
            acc *= 1.0 - b;
            alpha_bar.push(acc);
        }
        Ok(Self::assemble(betas, alpha_bar))
    }

    /// Builds a schedule whose cumulative products are exactly `alpha_bar`.
    pub fn from_alpha_bar(alpha_bar: Vec<f64>) -> Result<Self> {
        if alpha_bar.is_empty() {
            return Err(Error::Config("empty alpha_bar sequence".into()));
        }
        let mut prev = 1.0;
        let mut betas = Vec::with_capacity(alpha_bar.len());
        for &a in &alpha_bar {
            if !(a > 0.0 && a < prev) {
                return Err(Error::Config(format!(
                    "alpha_bar must decrease strictly within (0, 1), saw {a} after {prev}"
                )));
            }
            betas.push(1.0 - a / prev);
            prev = a;
        }
        Ok(Self::assemble(betas, alpha_bar))
    }

    fn assemble(betas: Vec<f64>, alpha_bar: Vec<f64>) -> Self {
        let n = betas.len();
        let alpha_bar_prev: Vec<f64> = std::iter::once(1.0)
            .chain(alpha_bar[..n - 1].iter().copied())
            .collect();
        let posterior_variance: Vec<f64> = (0..n)
            .map(|i| betas[i] * (1.0 - alpha_bar_prev[i]) / (1.0 - alpha_bar[i]))
            .collect();
        // β̃_1 = 0, so its log is replaced by log β̃_2 (or log β_1 for a
        // single-step process).
        let first = if n > 1 {
            posterior_variance[1]
        } else {
            betas[0]
        };
        let log_posterior_variance = (0..n)
            .map(|i| {
                if i == 0 {
                    first.ln()
                } else {
                    posterior_variance[i].ln()
                }
            })
            .collect();
        DiffusionSchedule {
            log_beta: betas.iter().map(|b| b.ln()).collect(),
            sqrt_alpha_bar: alpha_bar.iter().map(|a| a.sqrt()).collect(),
            sqrt_one_minus_alpha_bar: alpha_bar.iter().map(|a| (1.0 - a).sqrt()).collect(),
            posterior_mean_coef1: (0..n)
                .map(|i| betas[i] * alpha_bar_prev[i].sqrt() / (1.0 - alpha_bar[i]))
                .collect(),
            posterior_mean_coef2: (0..n)
                .map(|i| (1.0 - alpha_bar_prev[i]) * (1.0 - betas[i]).sqrt() / (1.0 - alpha_bar[i]))
                .collect(),
            betas,
            alpha_bar,
            alpha_bar_prev,
            posterior_variance,
            log_posterior_variance,
        }
    }

    pub fn t_max(&self) -> usize {
        self.betas.len()
    }

    pub fn check(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.t_max() {
            return Err(Error::Index {
                what: "timestep (1-based)",
                index: t,
                limit: self.t_max(),
            });
        }
        Ok(t - 1)
    }

    fn at(&self, v: &[f64], t: usize) -> f64 {
        v[self.check(t).expect("timestep in range")]
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.at(&self.betas, t)
    }

    /// ᾱ_t; `alpha_bar(0)` is 1 by convention.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.at(&self.alpha_bar, t)
        }
    }

    pub fn alpha_bar_prev(&self, t: usize) -> f64 {
        self.at(&self.alpha_bar_prev, t)
    }

    pub fn sqrt_alpha_bar(&self, t: usize) -> f64 {
        self.at(&self.sqrt_alpha_bar, t)
    }

    pub fn sqrt_one_minus_alpha_bar(&self, t: usize) -> f64 {
        self.at(&self.sqrt_one_minus_alpha_bar, t)
    }

    /// β̃_t = β_t·(1 − ᾱ_{t−1})/(1 − ᾱ_t)
    pub fn posterior_variance(&self, t: usize) -> f64 {
        self.at(&self.posterior_variance, t)
    }

    pub fn log_beta(&self, t: usize) -> f64 {
        self.at(&self.log_beta, t)
    }

    /// log β̃_t, clipped at t = 1 where β̃_1 = 0.
    pub fn log_posterior_variance(&self, t: usize) -> f64 {
        self.at(&self.log_posterior_variance, t)
    }

    pub fn posterior_mean_coefs(&self, t: usize) -> (f64, f64) {
        (
            self.at(&self.posterior_mean_coef1, t),
            self.at(&self.posterior_mean_coef2, t),
        )
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// Reparameterized forward sample `x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·ε`.
    ///
    /// `x0` and `eps` are `[B, ...]` with one timestep per leading row.
    pub fn q_sample<S: Scalar>(
        &self,
        x0: &Tensor<S>,
        t: &[usize],
        eps: &Tensor<S>,
    ) -> Result<Tensor<S>> {
        if x0.shape() != eps.shape() {
            return Err(Error::shape("q_sample", x0.shape(), eps.shape()));
        }
        per_sample_combine(x0, eps, t, |t| {
            self.check(t)?;
            Ok((self.sqrt_alpha_bar(t), self.sqrt_one_minus_alpha_bar(t)))
        })
    }

    /// Mean and variance of q(x_{t−1} | x_t, x_0). The variance is one
    /// scalar per sample.
    pub fn posterior_mean_variance<S: Scalar>(
        &self,
        x0: &Tensor<S>,
        xt: &Tensor<S>,
        t: &[usize],
    ) -> Result<(Tensor<S>, Vec<f64>)> {
        if x0.shape() != xt.shape() {
            return Err(Error::shape(
                "posterior_mean_variance",
                x0.shape(),
                xt.shape(),
            ));
        }
        let mean = per_sample_combine(x0, xt, t, |t| {
            self.check(t)?;
            Ok(self.posterior_mean_coefs(t))
        })?;
        let var = t.iter().map(|&t| self.posterior_variance(t)).collect();
        Ok((mean, var))
    }

    /// `x̂0 = (x_t − √(1−ᾱ_t)·ε̂)/√ᾱ_t`
    pub fn predict_x0_from_eps<S: Scalar>(
        &self,
        xt: &Tensor<S>,
        t: &[usize],
        eps_hat: &Tensor<S>,
    ) -> Result<Tensor<S>> {
        if xt.shape() != eps_hat.shape() {
            return Err(Error::shape(
                "predict_x0_from_eps",
                xt.shape(),
                eps_hat.shape(),
            ));
        }
        per_sample_combine(xt, eps_hat, t, |t| {
            self.check(t)?;
            let s = self.sqrt_alpha_bar(t);
            Ok((1.0 / s, -self.sqrt_one_minus_alpha_bar(t) / s))
        })
    }

    /// Keeps `num_steps` evenly spaced steps ending at `t_max`.
    pub fn respace(&self, num_steps: usize) -> Result<RespacedSchedule> {
        let t_max = self.t_max();
        if num_steps == 0 || num_steps > t_max {
            return Err(Error::Config(format!(
                "num_steps must be in 1..={t_max}, got {num_steps}"
            )));
        }
        if num_steps == t_max {
            return Ok(RespacedSchedule {
                timesteps: (1..=t_max).collect(),
                schedule: self.clone(),
            });
        }
        let timesteps: Vec<usize> = (1..=num_steps).map(|i| i * t_max / num_steps).collect();
        let alpha_bar = timesteps.iter().map(|&t| self.alpha_bar(t)).collect();
        Ok(RespacedSchedule {
            timesteps,
            schedule: DiffusionSchedule::from_alpha_bar(alpha_bar)?,
        })
    }

    /// CSV with columns `t,beta,alpha_bar,posterior_variance`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,beta,alpha_bar,posterior_variance\n");
        for i in 0..self.t_max() {
            writeln!(
                s,
                "{},{:e},{:e},{:e}",
                i + 1,
                self.betas[i],
                self.alpha_bar[i],
                self.posterior_variance[i]
            )
            .unwrap();
        }
        s
    }
}

/// `out[b] = ca(t_b)·a[b] + cb(t_b)·b[b]` for each leading row `b`.
fn per_sample_combine<S: Scalar>(
    a: &Tensor<S>,
    b: &Tensor<S>,
    t: &[usize],
    coefs: impl Fn(usize) -> Result<(f64, f64)>,
) -> Result<Tensor<S>> {
    let batch = a.shape().first().copied().unwrap_or(1);
    if t.len() != batch {
        return Err(Error::shape("timesteps per sample", a.shape(), &[t.len()]));
    }
    let per = a.numel() / batch;
    let mut out = Vec::with_capacity(a.numel());
    for (i, &ti) in t.iter().enumerate() {
        let (ca, cb) = coefs(ti)?;
        let rows = a.data()[i * per..(i + 1) * per]
            .iter()
            .zip(&b.data()[i * per..(i + 1) * per]);
        out.extend(rows.map(|(&x, &y)| S::from_f64(ca * x.as_f64() + cb * y.as_f64())));
    }
    Tensor::new(a.shape().to_vec(), out)
}

/// A subsequence of an original schedule with ᾱ preserved at kept steps.
///
/// `schedule` is indexed `1..=len()`; step `k` corresponds to original
/// timestep `timesteps[k − 1]`, which is what the network is conditioned on.
#[derive(Debug, Clone, PartialEq)]
pub struct RespacedSchedule {
    pub timesteps: Vec<usize>,
    pub schedule: DiffusionSchedule,
}

impl RespacedSchedule {
    pub fn len(&self) -> usize {
        self.timesteps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timesteps.is_empty()
    }

    /// Original timestep for respaced step `k` (1-based).
    pub fn original_timestep(&self, k: usize) -> usize {
        self.timesteps[k - 1]
    }

    /// CSV with columns `k,t,beta,alpha_bar,posterior_variance`, where `t`
    /// is the original timestep of respaced step `k`.
    pub fn to_csv(&self) -> String {
        let s = &self.schedule;
        let mut out = String::from("k,t,beta,alpha_bar,posterior_variance\n");
        for k in 1..=self.len() {
            writeln!(
                out,
                "{k},{},{:e},{:e},{:e}",
                self.original_timestep(k),
                s.beta(k),
                s.alpha_bar(k),
                s.posterior_variance(k)
            )
            .unwrap();
        }
        out
    }
}
