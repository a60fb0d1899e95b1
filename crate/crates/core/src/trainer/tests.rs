use indexmap::IndexMap;
use proptest::prelude::*;

use super::*;
use crate::diffcore::Tensor;
use crate::error::Error;
use crate::model::{BlockVariant, DiTConfig, ParameterStore};
use crate::rng;

fn mini() -> DiTConfig {
    DiTConfig::mini(BlockVariant::AdaLNZero)
}

fn small_run(batch_size: usize) -> (DiTConfig, TrainConfig, ToyDataset) {
    let train = TrainConfig {
        batch_size,
        steps: 20,
        seed: 5,
        checkpoint_every: 0,
        ..TrainConfig::default()
    };
    (mini(), train, toy_dataset(4, 8, 2, 1).unwrap())
}

fn scalar_store(x: f64) -> ParameterStore<f64> {
    let mut map = IndexMap::new();
    map.insert("x".to_string(), Tensor::full([1], x));
    ParameterStore::from_map(map)
}

#[test]
fn dataset_is_deterministic() {
    let a = toy_dataset(4, 8, 2, 9).unwrap();
    let b = toy_dataset(4, 8, 2, 9).unwrap();
    assert_eq!(a.batch::<f32>(100, 16), b.batch::<f32>(100, 16));
    let c = toy_dataset(4, 8, 2, 10).unwrap();
    assert_ne!(a.batch::<f32>(0, 4).0, c.batch::<f32>(0, 4).0);
}

#[test]
fn class_means_are_separated() {
    let ds = toy_dataset(4, 8, 2, 0).unwrap();
    let means: Vec<_> = (0..4).map(|k| ds.class_mean(k)).collect();
    for i in 0..4 {
        for j in i + 1..4 {
            let d = means[i].zip_map(&means[j], |a, b| a - b);
            let norm = d.data().iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(norm >= 1.0, "classes {i}, {j}: {norm}");
        }
    }
}

#[test]
fn channel_statistics_are_standardised() {
    let ds = toy_dataset(4, 8, 2, 3).unwrap();
    let (x, labels) = ds.batch::<f64>(50_000, 10_000);
    let c = 2;
    for ch in 0..c {
        let vals: Vec<f64> = x.data().iter().skip(ch).step_by(c).copied().collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.05, "channel {ch} mean {mean}");
        assert!((var - 1.0).abs() < 0.1, "channel {ch} var {var}");
    }
    let mut counts = [0usize; 4];
    labels.iter().for_each(|&l| counts[l] += 1);
    assert!(counts.iter().all(|&n| n > 2200), "{counts:?}");
}

#[test]
fn double_flip_is_identity() {
    let z: Tensor = rng::normal_tensor(&[3, 5, 5, 2], &[1]);
    assert_eq!(flip_columns(&flip_columns(&z)), z);
}

#[test]
fn flip_reverses_column_ramp() {
    let w = 6;
    let data: Vec<f64> = (0..2 * w).map(|i| (i % w) as f64).collect();
    let ramp = Tensor::<f64>::from_f64([2, w, 1], &data).unwrap();
    let flipped = flip_columns(&ramp);
    for row in flipped.data().chunks(w) {
        let expect: Vec<f64> = (0..w).rev().map(|c| c as f64).collect();
        assert_eq!(row, expect.as_slice());
    }
}

#[test]
fn flip_rate_is_one_half() {
    let z: Tensor = rng::normal_tensor(&[4, 4, 1], &[2]);
    let flipped = flip_columns(&z);
    let mut r = rng::keyed(&[77]);
    let n = 100_000;
    let hits = (0..n).filter(|_| hflip(&z, &mut r) == flipped).count() as f64;
    let sd = (n as f64 * 0.25).sqrt();
    assert!((hits - n as f64 / 2.0).abs() < 3.0 * sd, "{hits} flips");
}

#[test]
fn adam_zero_gradient_is_noop() {
    let mut p = scalar_store(0.7);
    let mut state = AdamState::zeros_like(&p);
    adamw_step(
        &mut p,
        &scalar_store(0.0),
        &mut state,
        &AdamWConfig::default(),
        1,
    )
    .unwrap();
    assert_eq!(p, scalar_store(0.7));
}

#[test]
fn adam_first_step_moves_by_lr() {
    // f(x) = x²/2 so the gradient at x = 1 is 1; bias correction makes
    // m̂ = 1 and v̂ = 1, giving a step of lr/(1 + ε).
    let cfg = AdamWConfig {
        lr: 1e-3,
        ..AdamWConfig::default()
    };
    let mut p = scalar_store(1.0);
    let mut state = AdamState::zeros_like(&p);
    adamw_step(&mut p, &scalar_store(1.0), &mut state, &cfg, 1).unwrap();
    let x = p.get("x").unwrap().item();
    assert!((x - (1.0 - cfg.lr / (1.0 + cfg.eps))).abs() < 1e-15, "{x}");
}

#[test]
fn adam_matches_scalar_reference() {
    // Textbook Adam on x²/2 for a few steps.
    let cfg = AdamWConfig {
        lr: 0.1,
        ..AdamWConfig::default()
    };
    let mut p = scalar_store(2.0);
    let mut state = AdamState::zeros_like(&p);
    let (mut x, mut m, mut v) = (2.0f64, 0.0f64, 0.0f64);
    for step in 1..=5u64 {
        let g = x;
        let grad = scalar_store(p.get("x").unwrap().item());
        adamw_step(&mut p, &grad, &mut state, &cfg, step).unwrap();
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        let mh = m / (1.0 - 0.9f64.powi(step as i32));
        let vh = v / (1.0 - 0.999f64.powi(step as i32));
        x -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
        assert!((p.get("x").unwrap().item() - x).abs() < 1e-14);
    }
}

#[test]
fn weight_decay_is_decoupled() {
    let base = AdamWConfig {
        lr: 0.01,
        ..AdamWConfig::default()
    };
    let decayed = AdamWConfig {
        weight_decay: 0.5,
        ..base
    };
    let run = |cfg: &AdamWConfig| {
        let mut p = scalar_store(1.5);
        let mut s = AdamState::zeros_like(&p);
        adamw_step(&mut p, &scalar_store(0.3), &mut s, cfg, 1).unwrap();
        (p.get("x").unwrap().item(), s)
    };
    let (plain, s0) = run(&base);
    let (wd, s1) = run(&decayed);
    assert_eq!(s0, s1, "decay must not touch the moments");
    assert!((plain - wd - 0.01 * 0.5 * 1.5).abs() < 1e-15);
}

#[test]
fn adam_step_zero_is_rejected() {
    let mut p = scalar_store(1.0);
    let mut s = AdamState::zeros_like(&p);
    let err = adamw_step(
        &mut p,
        &scalar_store(1.0),
        &mut s,
        &AdamWConfig::default(),
        0,
    );
    assert!(matches!(err, Err(Error::Contract(_))));
}

#[test]
fn ema_boundaries() {
    let params = scalar_store(3.0);
    let mut ema = scalar_store(-1.0);
    ema_update(&mut ema, &params, 0.0).unwrap();
    assert_eq!(ema, params);

    let mut ema = scalar_store(-1.0);
    ema_update(&mut ema, &params, 1.0).unwrap();
    assert_eq!(ema, scalar_store(-1.0));

    let mut ema = params.clone();
    ema_update(&mut ema, &params, 0.9999).unwrap();
    assert_eq!(ema, params);
}

#[test]
fn ema_converges_geometrically() {
    let decay = 0.9;
    let params = scalar_store(1.0);
    let mut ema = scalar_store(0.0);
    for k in 1..=50 {
        ema_update(&mut ema, &params, decay).unwrap();
        let gap = 1.0 - ema.get("x").unwrap().item();
        assert!((gap - decay.powi(k)).abs() < 1e-12);
    }
}

#[test]
fn timesteps_are_uniform() {
    let t_max = 1000;
    let n = 100_000;
    let t = sample_timesteps(n, t_max, &mut rng::keyed(&[3]));
    assert!(t.iter().all(|&t| (1..=t_max).contains(&t)));
    // Chi-square over 20 equal bins, 19 dof; 43.8 is the 0.999 quantile.
    let bins = 20;
    let mut counts = vec![0f64; bins];
    for &t in &t {
        counts[(t - 1) * bins / t_max] += 1.0;
    }
    let expect = n as f64 / bins as f64;
    let chi2: f64 = counts.iter().map(|c| (c - expect).powi(2) / expect).sum();
    assert!(chi2 < 43.8, "chi² = {chi2}");
}

#[test]
fn zero_lr_freezes_parameters() {
    let (model, mut train, ds) = small_run(4);
    train.lr = 0.0;
    let mut trainer = Trainer::new(model, train, ds).unwrap();
    let before = trainer.params.clone();
    let log = trainer.run_until(6, None).unwrap();
    assert_eq!(trainer.params, before);
    assert_eq!(trainer.ema, before);
    assert!(log
        .iter()
        .all(|r| r.l_simple.is_finite() && r.l_vlb.is_finite()));
}

#[test]
fn training_is_deterministic_in_seed() {
    let (model, train, ds) = small_run(4);
    let run = |train: &TrainConfig| {
        let mut t = Trainer::new(model.clone(), train.clone(), ds.clone()).unwrap();
        let log = t.run_until(3, None).unwrap();
        (
            t.params,
            log.iter()
                .map(|r| (r.l_simple, r.l_vlb))
                .collect::<Vec<_>>(),
        )
    };
    assert_eq!(run(&train), run(&train));
    let other = TrainConfig {
        seed: 6,
        ..train.clone()
    };
    assert_ne!(run(&train).1, run(&other).1);
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let (model, train, ds) = small_run(4);
    let mut trainer = Trainer::new(model, train, ds).unwrap();
    trainer.run_until(2, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.ditt");
    trainer.checkpoint().save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, trainer.checkpoint());
    let again = dir.path().join("b.ditt");
    loaded.save(&again).unwrap();
    assert_eq!(
        std::fs::read(&path).unwrap(),
        std::fs::read(&again).unwrap()
    );
}

#[test]
fn checkpoint_rejects_foreign_metadata() {
    let (model, train, ds) = small_run(4);
    let mut file = Trainer::new(model, train, ds)
        .unwrap()
        .checkpoint()
        .to_file();
    file.metadata = file.metadata.replace("dit-checkpoint-v1", "other");
    assert!(matches!(
        Checkpoint::from_file(&file),
        Err(Error::Format(_))
    ));
}

#[test]
fn resume_replays_next_steps_exactly() {
    let (model, train, ds) = small_run(6);
    let mut straight = Trainer::new(model.clone(), train.clone(), ds.clone()).unwrap();
    let full = straight.run_until(15, None).unwrap();

    let mut first = Trainer::new(model, train, ds.clone()).unwrap();
    first.run_until(5, None).unwrap();
    let bytes = first.checkpoint().to_bytes();
    let mut resumed =
        Trainer::from_checkpoint(Checkpoint::from_bytes(&bytes).unwrap(), ds).unwrap();
    let tail = resumed.run_until(15, None).unwrap();

    let key = |r: &StepRecord| (r.step, r.l_simple.to_bits(), r.l_vlb.to_bits());
    assert_eq!(
        tail.iter().map(key).collect::<Vec<_>>(),
        full[5..].iter().map(key).collect::<Vec<_>>()
    );
    assert_eq!(resumed.checkpoint(), straight.checkpoint());
}

#[test]
fn run_writes_log_and_rotates_checkpoints() {
    let (model, mut train, ds) = small_run(2);
    train.checkpoint_every = 2;
    train.keep_checkpoints = 2;
    let dir = tempfile::tempdir().unwrap();
    let mut trainer = Trainer::new(model, train, ds).unwrap();
    trainer.run_until(7, Some(dir.path())).unwrap();
    let log = std::fs::read_to_string(dir.path().join("loss.csv")).unwrap();
    let lines: Vec<_> = log.lines().collect();
    assert_eq!(lines[0], LOSS_CSV_HEADER);
    assert_eq!(lines.len(), 8);
    let mut names: Vec<_> = std::fs::read_dir(dir.path().join("checkpoints"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["step0000006.ditt", "step0000007.ditt"]);

    trainer.run_until(8, Some(dir.path())).unwrap();
    let log = std::fs::read_to_string(dir.path().join("loss.csv")).unwrap();
    assert_eq!(log.lines().count(), 9, "resumed runs append");
}

#[test]
fn non_finite_loss_aborts_with_snapshot() {
    let (model, train, ds) = small_run(2);
    let mut trainer = Trainer::new(model, train, ds).unwrap();
    trainer.run_until(1, None).unwrap();
    let poisoned = trainer.params.get_mut("final_layer.linear.bias").unwrap();
    poisoned.data_mut()[0] = f32::NAN;
    let before = trainer.params.clone();

    let dir = tempfile::tempdir().unwrap();
    let err = trainer.run_until(3, Some(dir.path())).unwrap_err();
    assert!(matches!(err, Error::NonFinite(_)), "{err}");
    assert_eq!(trainer.step, 1);
    let snap = Checkpoint::load(dir.path().join("nonfinite-step0000002.ditt")).unwrap();
    assert_eq!(snap.step, 1);
    assert_eq!(
        snap.params.get("final_layer.linear.weight").unwrap(),
        before.get("final_layer.linear.weight").unwrap()
    );
}

#[test]
fn mismatched_dataset_is_rejected() {
    let (model, train, _) = small_run(2);
    let wrong = toy_dataset(4, 16, 2, 0).unwrap();
    assert!(matches!(
        Trainer::new(model, train, wrong),
        Err(Error::Config(_))
    ));
}

#[test]
fn train_config_toml_defaults() {
    let cfg: TrainConfig = toml::from_str("lr = 3e-4\nbatch_size = 32").unwrap();
    assert_eq!(cfg.lr, 3e-4);
    assert_eq!(cfg.ema_decay, 0.9999);
    assert!(toml::from_str::<TrainConfig>("learning_rate = 1.0").is_err());
    assert!(TrainConfig {
        ema_decay: 1.0,
        ..cfg
    }
    .validate()
    .is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn default_steps_stay_finite(seed in 0u64..1000, variant in 0usize..4) {
        let model = DiTConfig::mini(BlockVariant::ALL[variant]);
        let train = TrainConfig { batch_size: 4, seed, ..TrainConfig::default() };
        let mut trainer = Trainer::new(model, train, toy_dataset(4, 8, 2, seed).unwrap()).unwrap();
        for rec in trainer.run_until(2, None).unwrap() {
            prop_assert!(rec.l_simple.is_finite() && rec.l_vlb.is_finite());
        }
        prop_assert!(trainer.params.iter().all(|(_, t)| t.all_finite()));
    }
}
