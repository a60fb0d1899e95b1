use serde::{Deserialize, Serialize};

use crate::diffcore::Scalar;
use crate::error::{Error, Result};
use crate::model::ParameterStore;

/// AdamW hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First and second moment estimates, shaped like the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<S: Scalar = f32> {
    pub m: ParameterStore<S>,
    pub v: ParameterStore<S>,
}

impl<S: Scalar> AdamState<S> {
    pub fn zeros_like(params: &ParameterStore<S>) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// One AdamW update with bias correction; `step` counts from 1.
///
/// Weight decay is decoupled: `θ ← θ − lr·(m̂/(√v̂ + ε) + λθ)`.
pub fn adamw_step<S: Scalar>(
    params: &mut ParameterStore<S>,
    grads: &ParameterStore<S>,
    state: &mut AdamState<S>,
    config: &AdamWConfig,
    step: u64,
) -> Result<()> {
    if step == 0 {
        return Err(Error::Contract("AdamW steps count from 1".into()));
    }
    let c1 = 1.0 - config.beta1.powf(step as f64);
    let c2 = 1.0 - config.beta2.powf(step as f64);
    let (b1, b2) = (config.beta1, config.beta2);
    for (name, p) in params.iter_mut() {
        let g = grads.get(name)?;
        let m = state.m.get_mut(name)?;
        if g.shape() != p.shape() || m.shape() != p.shape() {
            return Err(Error::shape("adamw_step", p.shape(), g.shape()));
        }
        let v = state.v.get_mut(name)?;
        let it = p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut()));
        for ((p, &g), (m, v)) in it {
            let g = g.as_f64();
            let mf = b1 * m.as_f64() + (1.0 - b1) * g;
            let vf = b2 * v.as_f64() + (1.0 - b2) * g * g;
            *m = S::from_f64(mf);
            *v = S::from_f64(vf);
            let update =
                (mf / c1) / ((vf / c2).sqrt() + config.eps) + config.weight_decay * p.as_f64();
            *p = S::from_f64(p.as_f64() - config.lr * update);
        }
    }
    Ok(())
}

/// `ema ← decay·ema + (1 − decay)·params`, elementwise.
pub fn ema_update<S: Scalar>(
    ema: &mut ParameterStore<S>,
    params: &ParameterStore<S>,
    decay: f64,
) -> Result<()> {
    for (name, e) in ema.iter_mut() {
        let p = params.get(name)?;
        if p.shape() != e.shape() {
            return Err(Error::shape("ema_update", e.shape(), p.shape()));
        }
        for (e, &p) in e.data_mut().iter_mut().zip(p.data()) {
            *e = S::from_f64(decay * e.as_f64() + (1.0 - decay) * p.as_f64());
        }
    }
    Ok(())
}
