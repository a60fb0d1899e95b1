//! Differentiable diffusion losses: learned variance, Gaussian KL, the
//! variational-bound term and the hybrid objective.

use std::f64::consts::PI;

use crate::diffcore::{Scalar, Tensor, Var};
use crate::error::{Error, Result};
use crate::schedule::DiffusionSchedule;

/// Weight of the variational-bound term in the hybrid objective.
pub const VLB_WEIGHT: f64 = 1.0;

/// `[B, 1, ..., 1]` constant holding one value per sample.
fn per_sample<S: Scalar>(like: &Var<S>, values: impl IntoIterator<Item = f64>) -> Var<S> {
    let shape = like.shape();
    let data: Vec<S> = values.into_iter().map(S::from_f64).collect();
    let mut bshape = vec![1; shape.len()];
    bshape[0] = data.len();
    like.tape()
        .constant(Tensor::new(bshape, data).expect("one value per sample"))
}

fn check_batch<S: Scalar>(x: &Var<S>, t: &[usize], schedule: &DiffusionSchedule) -> Result<()> {
    let shape = x.shape();
    if shape.first() != Some(&t.len()) {
        return Err(Error::shape("timesteps per sample", &shape, &[t.len()]));
    }
    for &ti in t {
        schedule.check(ti)?;
    }
    Ok(())
}

/// Sum over all axes but the first: `[B, ...]` → `[B]`.
fn sum_per_sample<S: Scalar>(x: &Var<S>) -> Result<Var<S>> {
    let shape = x.shape();
    let rest: usize = shape[1..].iter().product();
    x.reshape(&[shape[0], rest])?.sum_axis(1, false)
}

/// Log-variance from the network's raw `v` channel:
/// `f·log β_t + (1 − f)·log β̃_t` with `f = (v + 1)/2`.
pub fn model_variance<S: Scalar>(
    v: &Var<S>,
    t: &[usize],
    schedule: &DiffusionSchedule,
) -> Result<Var<S>> {
    check_batch(v, t, schedule)?;
    let max_log = per_sample(v, t.iter().map(|&t| schedule.log_beta(t)));
    let min_log = per_sample(v, t.iter().map(|&t| schedule.log_posterior_variance(t)));
    let frac = v.add_scalar(1.0).scale(0.5);
    let span = max_log.sub(&min_log)?;
    frac.mul(&span)?.add(&min_log)
}

/// KL(N(mean1, e^logvar1) ‖ N(mean2, e^logvar2)) in nats, summed per
/// sample: `[B, ...]` → `[B]`.
pub fn gaussian_kl<S: Scalar>(
    mean1: &Var<S>,
    logvar1: &Var<S>,
    mean2: &Var<S>,
    logvar2: &Var<S>,
) -> Result<Var<S>> {
    let shape = mean1.shape();
    for other in [logvar1, mean2, logvar2] {
        if other.shape() != shape {
            return Err(Error::shape("gaussian_kl", &shape, &other.shape()));
        }
    }
    let diff = mean1.sub(mean2)?;
    let inv_var2 = logvar2.neg().exp();
    let terms = logvar2
        .sub(logvar1)?
        .add(&logvar1.sub(logvar2)?.exp())?
        .add(&diff.square().mul(&inv_var2)?)?
        .add_scalar(-1.0)
        .scale(0.5);
    sum_per_sample(&terms)
}

/// −log N(x0; mean, e^logvar), summed per sample.
pub fn decoder_nll<S: Scalar>(x0: &Var<S>, mean: &Var<S>, logvar: &Var<S>) -> Result<Var<S>> {
    let sq = x0.sub(mean)?.square().mul(&logvar.neg().exp())?;
    let terms = sq.add(logvar)?.add_scalar((2.0 * PI).ln()).scale(0.5);
    sum_per_sample(&terms)
}

/// One term of the variational bound per sample, in nats.
///
/// For `t > 1` this is KL(q(x_{t−1}|x_t,x_0) ‖ p(x_{t−1}|x_t)); for `t = 1`
/// it is the Gaussian negative log-likelihood of `x0` under the model's
/// reverse kernel.
pub fn vlb_term<S: Scalar>(
    model_mean: &Var<S>,
    model_logvar: &Var<S>,
    x0: &Var<S>,
    xt: &Var<S>,
    t: &[usize],
    schedule: &DiffusionSchedule,
) -> Result<Var<S>> {
    check_batch(x0, t, schedule)?;
    let (true_mean, _) = schedule.posterior_mean_variance(&x0.to_tensor(), &xt.to_tensor(), t)?;
    let true_mean = x0.tape().constant(true_mean);
    let true_logvar = per_sample(x0, t.iter().map(|&t| schedule.log_posterior_variance(t)))
        .add(&x0.tape().constant(Tensor::zeros(x0.shape())))?;
    let kl = gaussian_kl(&true_mean, &true_logvar, model_mean, model_logvar)?;
    let nll = decoder_nll(x0, model_mean, model_logvar)?;
    let is_first: Vec<f64> = t.iter().map(|&t| if t == 1 { 1.0 } else { 0.0 }).collect();
    let first = x0.tape().constant(Tensor::from_f64([t.len()], &is_first)?);
    let rest = first.scale(-1.0).add_scalar(1.0);
    kl.mul(&rest)?.add(&nll.mul(&first)?)
}

/// Differentiable posterior mean μ̃_t(x_t, x̂0) with x̂0 recovered from ε̂.
fn model_mean_from_eps<S: Scalar>(
    eps: &Var<S>,
    xt: &Var<S>,
    t: &[usize],
    schedule: &DiffusionSchedule,
) -> Result<Var<S>> {
    let inv_sqrt_ab = per_sample(xt, t.iter().map(|&t| 1.0 / schedule.sqrt_alpha_bar(t)));
    let eps_coef = per_sample(
        xt,
        t.iter()
            .map(|&t| -schedule.sqrt_one_minus_alpha_bar(t) / schedule.sqrt_alpha_bar(t)),
    );
    let x0_hat = xt.mul(&inv_sqrt_ab)?.add(&eps.mul(&eps_coef)?)?;
    let c1 = per_sample(xt, t.iter().map(|&t| schedule.posterior_mean_coefs(t).0));
    let c2 = per_sample(xt, t.iter().map(|&t| schedule.posterior_mean_coefs(t).1));
    x0_hat.mul(&c1)?.add(&xt.mul(&c2)?)
}

/// Scalar objective plus its two components (as plain numbers).
#[derive(Debug)]
pub struct HybridLoss<S: Scalar> {
    pub total: Var<S>,
    /// Mean squared noise-prediction error over all elements.
    pub simple: f64,
    /// Batch mean of the VLB term divided by the per-sample dimension (nats
    /// per dimension).
    pub vlb: f64,
}

/// `mean((ε̂ − ε)²) + λ·mean_b(vlb_b / D)`, where the VLB sees a
/// gradient-blocked copy of ε̂ so it only trains the variance channel.
pub fn hybrid_loss<S: Scalar>(
    eps_hat: &Var<S>,
    v: &Var<S>,
    eps: &Var<S>,
    x0: &Var<S>,
    xt: &Var<S>,
    t: &[usize],
    schedule: &DiffusionSchedule,
) -> Result<HybridLoss<S>> {
    hybrid_loss_with_mean_eps(eps_hat, &eps_hat.detach(), v, eps, x0, xt, t, schedule)
}

/// [`hybrid_loss`] with the ε̂ feeding the VLB mean supplied explicitly.
///
/// Passing a constant captured at a base point turns the stop-gradient into
/// an ordinary function of the parameters, which finite differences can
/// check.
#[allow(clippy::too_many_arguments)]
pub fn hybrid_loss_with_mean_eps<S: Scalar>(
    eps_hat: &Var<S>,
    mean_eps: &Var<S>,
    v: &Var<S>,
    eps: &Var<S>,
    x0: &Var<S>,
    xt: &Var<S>,
    t: &[usize],
    schedule: &DiffusionSchedule,
) -> Result<HybridLoss<S>> {
    let shape = eps_hat.shape();
    for other in [mean_eps, v, eps, x0, xt] {
        if other.shape() != shape {
            return Err(Error::shape("hybrid_loss", &shape, &other.shape()));
        }
    }
    check_batch(x0, t, schedule)?;
    let dims = shape.iter().product::<usize>() / t.len();

    let simple = eps_hat.sub(eps)?.square().mean();
    let mean = model_mean_from_eps(mean_eps, xt, t, schedule)?;
    let logvar = model_variance(v, t, schedule)?;
    let vlb = vlb_term(&mean, &logvar, x0, xt, t, schedule)?
        .mean()
        .scale(1.0 / dims as f64);
    let total = simple.add(&vlb.scale(VLB_WEIGHT))?;
    let (simple, vlb) = (simple.value().item().as_f64(), vlb.value().item().as_f64());
    Ok(HybridLoss { total, simple, vlb })
}
