use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::model::{forward_train, init_parameters, DiTConfig, ParameterStore};
use crate::rng;
use crate::schedule::{hybrid_loss, DiffusionSchedule};
use crate::trainer::{
    adamw_step, ema_update, hflip, AdamState, AdamWConfig, Checkpoint, ToyDataset,
};

/// Optimisation and diffusion hyperparameters of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub steps: u64,
    pub ema_decay: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Checkpoint every this many steps (0 disables periodic checkpoints).
    pub checkpoint_every: u64,
    /// Number of periodic checkpoints kept on disk.
    pub keep_checkpoints: usize,
    pub t_max: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for TrainConfig {
    /// The large-scale recipe: constant lr 1e-4, no weight decay, batch 256,
    /// EMA 0.9999 and a 1000-step linear schedule.
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            weight_decay: 0.0,
            batch_size: 256,
            steps: 400_000,
            ema_decay: 0.9999,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            checkpoint_every: 500,
            keep_checkpoints: 3,
            t_max: 1000,
            beta_start: 1e-4,
            beta_end: 2e-2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be finite and ≥ 0, got {}",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::Config(format!(
                "EMA decay must lie in [0, 1), got {}",
                self.ema_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn schedule(&self) -> Result<DiffusionSchedule> {
        DiffusionSchedule::linear(self.t_max, self.beta_start, self.beta_end)
    }
}

/// One row of the loss log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub l_simple: f64,
    pub l_vlb: f64,
    /// Seconds since the run (or resume) started.
    pub wall_clock: f64,
}

pub const LOSS_CSV_HEADER: &str = "step,l_simple,l_vlb,wall_clock_s";

impl StepRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{:.3}",
            self.step, self.l_simple, self.l_vlb, self.wall_clock
        )
    }
}

/// Draws `n` timesteps uniformly from `1..=t_max`.
pub fn sample_timesteps(n: usize, t_max: usize, rng: &mut impl Rng) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(1..=t_max)).collect()
}

/// Stateful training loop over a toy stream.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: DiTConfig,
    pub train: TrainConfig,
    pub dataset: ToyDataset,
    pub params: ParameterStore,
    pub ema: ParameterStore,
    pub adam: AdamState,
    /// Number of completed steps.
    pub step: u64,
    schedule: DiffusionSchedule,
}

impl Trainer {
    pub fn new(model: DiTConfig, train: TrainConfig, dataset: ToyDataset) -> Result<Self> {
        train.validate()?;
        check_dataset(&model, &dataset)?;
        let params = init_parameters(&model, train.seed)?;
        Ok(Trainer {
            schedule: train.schedule()?,
            ema: params.clone(),
            adam: AdamState::zeros_like(&params),
            params,
            model,
            train,
            dataset,
            step: 0,
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint, dataset: ToyDataset) -> Result<Self> {
        ckpt.train.validate()?;
        check_dataset(&ckpt.model, &dataset)?;
        Ok(Trainer {
            schedule: ckpt.train.schedule()?,
            model: ckpt.model,
            train: ckpt.train,
            dataset,
            params: ckpt.params,
            ema: ckpt.ema,
            adam: ckpt.adam,
            step: ckpt.step,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            train: self.train.clone(),
            step: self.step,
            params: self.params.clone(),
            ema: self.ema.clone(),
            adam: self.adam.clone(),
        }
    }

    pub fn schedule(&self) -> &DiffusionSchedule {
        &self.schedule
    }

    /// Runs one optimisation step and returns its losses.
    ///
    /// On a non-finite loss or gradient the parameters are left untouched
    /// and [`Error::NonFinite`] is returned.
    pub fn step(&mut self) -> Result<StepRecord> {
        let step = self.step + 1;
        let seed = self.train.seed;
        let b = self.train.batch_size;
        let (x0, labels) = self.dataset.batch::<f32>((step - 1) * b as u64, b);
        let x0 = flip_some(&x0, &[seed, step, 1]);
        let t = sample_timesteps(b, self.schedule.t_max(), &mut rng::keyed(&[seed, step, 2]));
        let eps: Tensor = rng::normal_tensor(x0.shape(), &[seed, step, 3]);
        let xt = self.schedule.q_sample(&x0, &t, &eps)?;

        let tape = Tape::with_finite_checks(false);
        let bound = self.params.bind(&tape, true);
        let out = forward_train(
            &bound,
            &self.model,
            &tape.constant(xt.clone()),
            &t,
            &labels,
            &mut rng::keyed(&[seed, step, 4]),
        )?;
        let loss = hybrid_loss(
            &out.eps,
            &out.v,
            &tape.constant(eps),
            &tape.constant(x0),
            &tape.constant(xt),
            &t,
            &self.schedule,
        )?;
        if !(loss.simple.is_finite() && loss.vlb.is_finite()) {
            return Err(Error::NonFinite(format!(
                "loss at step {step}: L_simple = {}, L_vlb = {}",
                loss.simple, loss.vlb
            )));
        }
        loss.total.backward()?;
        let grads = bound.grads();
        if let Some((name, _)) = grads.iter().find(|(_, g)| !g.all_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient of {name} at step {step}"
            )));
        }
        adamw_step(
            &mut self.params,
            &grads,
            &mut self.adam,
            &self.train.adamw(),
            step,
        )?;
        ema_update(&mut self.ema, &self.params, self.train.ema_decay)?;
        self.step = step;
        Ok(StepRecord {
            step,
            l_simple: loss.simple,
            l_vlb: loss.vlb,
            wall_clock: 0.0,
        })
    }

    /// Steps until `self.step == until`, logging and checkpointing into `out`
    /// when given.
    pub fn run_until(&mut self, until: u64, out: Option<&Path>) -> Result<Vec<StepRecord>> {
        let start = Instant::now();
        let mut log = Vec::new();
        let mut csv = match out {
            Some(dir) => Some(open_log(dir, self.step)?),
            None => None,
        };
        while self.step < until {
            let mut rec = match self.step() {
                Ok(rec) => rec,
                Err(err @ Error::NonFinite(_)) => {
                    if let Some(dir) = out {
                        let path = dir.join(format!("nonfinite-step{:07}.ditt", self.step + 1));
                        self.checkpoint().save(&path)?;
                        return Err(Error::NonFinite(format!(
                            "{err}; snapshot at {}",
                            path.display()
                        )));
                    }
                    return Err(err);
                }
                Err(err) => return Err(err),
            };
            rec.wall_clock = start.elapsed().as_secs_f64();
            if let Some(f) = csv.as_mut() {
                writeln!(f, "{}", rec.csv_row())?;
            }
            log.push(rec);
            let every = self.train.checkpoint_every;
            if let Some(dir) = out {
                if (every > 0 && self.step.is_multiple_of(every)) || self.step == until {
                    self.save_rotating(dir)?;
                }
            }
        }
        Ok(log)
    }

    fn save_rotating(&self, dir: &Path) -> Result<PathBuf> {
        let ckpt_dir = dir.join("checkpoints");
        fs::create_dir_all(&ckpt_dir)?;
        let path = ckpt_dir.join(format!("step{:07}.ditt", self.step));
        self.checkpoint().save(&path)?;
        let mut existing: Vec<PathBuf> = fs::read_dir(&ckpt_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "ditt"))
            .collect();
        existing.sort();
        let keep = self.train.keep_checkpoints.max(1);
        if existing.len() > keep {
            for old in &existing[..existing.len() - keep] {
                fs::remove_file(old)?;
            }
        }
        Ok(path)
    }
}

fn check_dataset(model: &DiTConfig, ds: &ToyDataset) -> Result<()> {
    if (ds.input, ds.channels) != (model.input, model.channels)
        || ds.num_classes > model.num_classes
    {
        return Err(Error::Config(format!(
            "dataset ({} classes, {}×{}×{}) does not fit the model ({} classes, {}×{}×{})",
            ds.num_classes,
            ds.input,
            ds.input,
            ds.channels,
            model.num_classes,
            model.input,
            model.input,
            model.channels
        )));
    }
    Ok(())
}

fn open_log(dir: &Path, step: u64) -> Result<fs::File> {
    fs::create_dir_all(dir)?;
    let path = dir.join("loss.csv");
    if step > 0 && path.exists() {
        return Ok(fs::OpenOptions::new().append(true).open(path)?);
    }
    let mut f = fs::File::create(path)?;
    writeln!(f, "{LOSS_CSV_HEADER}")?;
    Ok(f)
}

/// Flips each image of a batch independently with probability one half.
fn flip_some(x: &Tensor, key: &[u64]) -> Tensor {
    let b = x.shape()[0];
    let per = x.numel() / b;
    let mut out = x.clone();
    let mut rng = rng::keyed(key);
    for i in 0..b {
        let img = hflip(&x.narrow(0, i, 1).expect("in range"), &mut rng);
        out.data_mut()[i * per..(i + 1) * per].copy_from_slice(img.data());
    }
    out
}

/// Result of [`train`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<StepRecord>,
}

/// Trains from scratch for `train.steps` steps.
pub fn train(
    model: &DiTConfig,
    train: &TrainConfig,
    dataset: &ToyDataset,
    out: Option<&Path>,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(model.clone(), train.clone(), dataset.clone())?;
    let log = trainer.run_until(train.steps, out)?;
    Ok(TrainOutcome {
        checkpoint: trainer.checkpoint(),
        log,
    })
}
