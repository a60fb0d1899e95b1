use indexmap::IndexMap;
use rand::seq::index::sample;

use crate::diffcore::{grad_check_coords, GradCheckReport, Tape, Tensor, Var};
use crate::error::Result;
use crate::model::{forward, init_parameters, Bound, DiTConfig, ParameterStore};
use crate::rng;
use crate::schedule::{hybrid_loss_with_mean_eps, DiffusionSchedule};

/// Settings for [`check_model_gradients`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGradCheck {
    pub seed: u64,
    /// Std of the noise added to the initial parameters.
    pub jitter: f64,
    /// Coordinates probed per named tensor (all of them if the tensor is smaller).
    pub coords_per_tensor: usize,
    /// Central-difference step. Key-projection biases have an identically
    /// zero gradient (softmax ignores a shared shift), so one ulp of loss
    /// noise divided by `2·step` must stay well under 1e-4 × the checker's
    /// 1e-8 floor; larger steps run into curvature instead.
    pub step: f64,
    /// Timesteps of the two-sample batch; include 1 to exercise the decoder term.
    pub timesteps: [usize; 2],
}

impl Default for ModelGradCheck {
    fn default() -> Self {
        ModelGradCheck {
            seed: 0,
            jitter: 0.05,
            coords_per_tensor: 6,
            step: 3e-4,
            timesteps: [1, 400],
        }
    }
}

fn unflatten(flat: &Var<f64>, template: &ParameterStore<f64>) -> Result<Bound<f64>> {
    let mut vars = IndexMap::new();
    let mut offset = 0;
    for (name, t) in template.iter() {
        let n = t.numel();
        vars.insert(
            name.to_string(),
            flat.narrow(0, offset, n)?.reshape(t.shape())?,
        );
        offset += n;
    }
    Ok(Bound::from_vars(vars))
}

/// Finite-difference check of the hybrid loss through the full network,
/// in 64-bit, against every parameter tensor.
///
/// Parameters start from the usual init plus Gaussian jitter so the zero
/// layers do not hide gradients. The VLB's stop-gradient on ε̂ is replaced by
/// the ε̂ measured at the base point, which makes the objective an ordinary
/// differentiable function whose gradient equals the training gradient there.
pub fn check_model_gradients(config: &DiTConfig, opts: &ModelGradCheck) -> Result<GradCheckReport> {
    let schedule = DiffusionSchedule::default_linear();
    let params = init_parameters::<f64>(config, opts.seed)?.jittered(opts.seed ^ 0x6a, opts.jitter);
    let shape = [2, config.input, config.input, config.channels];
    let x0: Tensor<f64> = rng::normal_tensor(&shape, &[opts.seed, 1]);
    let eps: Tensor<f64> = rng::normal_tensor(&shape, &[opts.seed, 2]);
    let t = opts.timesteps.to_vec();
    let labels = [0, config.null_label()];
    let xt = schedule.q_sample(&x0, &t, &eps)?;

    let base = {
        let tape = Tape::new();
        let out = forward(
            &params.bind(&tape, false),
            config,
            &tape.constant(xt.clone()),
            &t,
            &labels,
        )?;
        out.eps.to_tensor()
    };

    let mut coords = Vec::new();
    let mut offset = 0;
    let mut pick = rng::keyed(&[opts.seed, 3]);
    for (_, tensor) in params.iter() {
        let n = tensor.numel();
        let k = opts.coords_per_tensor.min(n);
        coords.extend(sample(&mut pick, n, k).into_iter().map(|i| offset + i));
        offset += n;
    }
    coords.sort_unstable();

    let point = Tensor::new([params.num_params()], params.flatten())?;
    grad_check_coords(
        |flat| {
            let tape = flat.tape();
            let bound = unflatten(flat, &params)?;
            let out = forward(&bound, config, &tape.constant(xt.clone()), &t, &labels)?;
            let c = |x: &Tensor<f64>| tape.constant(x.clone());
            let loss = hybrid_loss_with_mean_eps(
                &out.eps,
                &c(&base),
                &out.v,
                &c(&eps),
                &c(&x0),
                &c(&xt),
                &t,
                &schedule,
            )?;
            Ok(loss.total)
        },
        &point,
        opts.step,
        &coords,
    )
}
