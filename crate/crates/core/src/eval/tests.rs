use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use super::*;
use crate::diffcore::Tensor;
use crate::model::{BlockVariant, DiTConfig};
use crate::rng;
use crate::trainer::{toy_dataset, TrainConfig, Trainer};

fn stats(mean: Vec<f64>, cov: DMatrix<f64>) -> FeatureStats {
    FeatureStats {
        mean: DVector::from_vec(mean),
        cov,
        count: 100,
    }
}

fn random_spd(d: usize, key: u64) -> DMatrix<f64> {
    let a: Tensor<f64> = rng::normal_tensor(&[d, d], &[key]);
    let a = DMatrix::from_row_slice(d, d, a.data());
    &a * a.transpose() + DMatrix::identity(d, d) * 0.1
}

/// Denman–Beavers iteration for the principal square root of a matrix with
/// positive eigenvalues; needs no eigendecomposition.
fn denman_beavers(a: &DMatrix<f64>) -> DMatrix<f64> {
    let mut y = a.clone();
    let mut z = DMatrix::identity(a.nrows(), a.ncols());
    for _ in 0..60 {
        let yi = y.clone().try_inverse().unwrap();
        let zi = z.clone().try_inverse().unwrap();
        y = (&y + zi) * 0.5;
        z = (&z + yi) * 0.5;
    }
    y
}

#[test]
fn features_are_seeded_and_fixed_width() {
    let x: Tensor = rng::normal_tensor(&[5, 8, 8, 2], &[1]);
    let a = extract_features(&x, 3).unwrap();
    assert_eq!(a.shape(), &[5, FEATURE_DIM]);
    assert_eq!(a, extract_features(&x, 3).unwrap());
    assert_ne!(a, extract_features(&x, 4).unwrap());
    let big: Tensor = rng::normal_tensor(&[2, 16, 16, 4], &[1]);
    assert_eq!(
        extract_features(&big, 3).unwrap().shape(),
        &[2, FEATURE_DIM]
    );
    assert!(a.data().iter().all(|v| v.abs() < 1.0));
}

#[test]
fn features_separate_toy_classes() {
    let ds = toy_dataset(4, 8, 2, 0).unwrap();
    let feats: Vec<Tensor<f64>> = (0..4)
        .map(|k| {
            let m = ds.class_mean(k);
            extract_features(&m.reshape([1, 8, 8, 2]).unwrap(), 0).unwrap()
        })
        .collect();
    for i in 0..4 {
        for j in i + 1..4 {
            assert!(
                feats[i].max_abs_diff(&feats[j]) > 1e-3,
                "classes {i} and {j}"
            );
        }
    }
}

#[test]
fn repeated_vector_has_zero_covariance() {
    let row = [0.3, -1.0, 2.0];
    let data: Vec<f64> = row.iter().cycle().take(3 * 7).copied().collect();
    let s = gaussian_stats(&Tensor::new([7, 3], data).unwrap()).unwrap();
    assert_eq!(s.count, 7);
    assert!(s.cov.iter().all(|&c| c.abs() < 1e-15));
    assert!((s.mean - DVector::from_row_slice(&row)).norm() < 1e-15);
}

#[test]
fn normal_draws_give_identity_stats() {
    let (n, d) = (20_000, 4);
    let x: Tensor<f64> = rng::normal_tensor(&[n, d], &[5]);
    let s = gaussian_stats(&x).unwrap();
    assert_eq!(s.count, n);
    let se = 1.0 / (n as f64).sqrt();
    for i in 0..d {
        assert!(s.mean[i].abs() < 3.0 * se, "mean {i}");
        for j in 0..d {
            // Var of a sample variance is 2/n, of a covariance 1/n.
            let sd = if i == j { (2.0f64).sqrt() * se } else { se };
            let target = if i == j { 1.0 } else { 0.0 };
            assert!(
                (s.cov[(i, j)] - target).abs() < 4.0 * sd,
                "cov {i},{j}: {}",
                s.cov[(i, j)]
            );
        }
    }
}

#[test]
fn identical_stats_have_zero_distance() {
    let s = stats(vec![0.5, -1.0, 2.0], random_spd(3, 1));
    assert!(frechet_distance(&s, &s).unwrap().abs() < 1e-8);
}

#[test]
fn mean_shift_gives_squared_norm() {
    let cov = random_spd(4, 2);
    let a = stats(vec![0.0, 1.0, 2.0, 3.0], cov.clone());
    let b = stats(vec![1.0, -1.0, 2.0, 3.5], cov);
    let fd = frechet_distance(&a, &b).unwrap();
    assert!((fd - (1.0 + 4.0 + 0.25)).abs() < 1e-8, "{fd}");
}

#[test]
fn matches_denman_beavers_oracle() {
    let (sa, sb) = (random_spd(3, 3), random_spd(3, 4));
    let a = stats(vec![0.1, 0.2, 0.3], sa.clone());
    let b = stats(vec![-0.4, 0.0, 1.0], sb.clone());
    let ridge = DMatrix::<f64>::identity(3, 3) * COV_EPS;
    let (ra, rb) = (&sa + &ridge, &sb + &ridge);
    let root = denman_beavers(&(&ra * &rb));
    let expect = (&a.mean - &b.mean).norm_squared() + ra.trace() + rb.trace() - 2.0 * root.trace();
    let got = frechet_distance(&a, &b).unwrap();
    assert!(
        (got - expect).abs() < 1e-9 * expect.max(1.0),
        "{got} vs {expect}"
    );
}

#[test]
fn one_dimensional_closed_form() {
    // (μa − μb)² + (σa − σb)² for scalars.
    let a = stats(vec![1.0], DMatrix::from_element(1, 1, 4.0));
    let b = stats(vec![-2.0], DMatrix::from_element(1, 1, 9.0));
    let fd = frechet_distance(&a, &b).unwrap();
    let (va, vb): (f64, f64) = (4.0 + COV_EPS, 9.0 + COV_EPS);
    let expect: f64 = 9.0 + (vb.sqrt() - va.sqrt()).powi(2);
    assert!((fd - expect).abs() < 1e-12);
}

#[test]
fn dimension_mismatch_is_contract_error() {
    let a = stats(vec![0.0; 2], DMatrix::identity(2, 2));
    let b = stats(vec![0.0; 3], DMatrix::identity(3, 3));
    assert!(matches!(
        frechet_distance(&a, &b),
        Err(crate::Error::Contract(_))
    ));
}

#[test]
fn statistics_ignore_row_order() {
    let x: Tensor<f64> = rng::normal_tensor(&[50, 6], &[8]);
    let mut rows: Vec<&[f64]> = x.data().chunks(6).collect();
    rows.reverse();
    rows.swap(3, 40);
    let y = Tensor::new([50, 6], rows.concat()).unwrap();
    let (a, b) = (gaussian_stats(&x).unwrap(), gaussian_stats(&y).unwrap());
    let reference = gaussian_stats(&rng::normal_tensor(&[80, 6], &[9])).unwrap();
    let (fa, fb) = (
        frechet_distance(&a, &reference).unwrap(),
        frechet_distance(&b, &reference).unwrap(),
    );
    assert!((fa - fb).abs() < 1e-10);
}

#[test]
fn stats_file_round_trip() {
    let s = gaussian_stats(&rng::normal_tensor(&[30, 5], &[2])).unwrap();
    let (back, seed) = FeatureStats::from_file(&s.to_file(77)).unwrap();
    assert_eq!(seed, 77);
    assert_eq!(back, s);
}

#[test]
fn reference_stats_are_cached() {
    let ds = toy_dataset(4, 8, 2, 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let fresh = reference_stats(&ds, 500, 3, Some(dir.path())).unwrap();
    let path = dir.path().join(reference_cache_name(&ds, 500, 3));
    assert!(path.exists());
    assert!(path.to_string_lossy().contains("extractor3"));
    let cached = reference_stats(&ds, 500, 3, Some(dir.path())).unwrap();
    assert_eq!(cached, fresh);
    assert_eq!(reference_stats(&ds, 500, 3, None).unwrap(), fresh);
}

fn tiny_checkpoint() -> crate::trainer::Checkpoint {
    let train = TrainConfig {
        batch_size: 4,
        checkpoint_every: 0,
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(
        DiTConfig::mini(BlockVariant::AdaLNZero),
        train,
        toy_dataset(4, 8, 2, 0).unwrap(),
    )
    .unwrap();
    t.run_until(2, None).unwrap();
    t.checkpoint()
}

#[test]
fn sweep_records_and_skips() {
    let ds = toy_dataset(4, 8, 2, 0).unwrap();
    let reference = reference_stats(&ds, 300, 0, None).unwrap();
    let protocol = EvalProtocol {
        step_counts: vec![4, 8],
        sample_count: 40,
        ..EvalProtocol::default()
    };
    let models = [
        SweepModel {
            name: "mini".into(),
            source: CheckpointSource::Loaded(Box::new(tiny_checkpoint())),
        },
        SweepModel {
            name: "missing".into(),
            source: CheckpointSource::Path("/nonexistent/ckpt.ditt".into()),
        },
    ];
    let records = scaling_sweep(&models, &protocol, &reference).unwrap();
    assert_eq!(records.len(), models.len() * protocol.step_counts.len());
    assert!(records[..2]
        .iter()
        .all(|r| r.status == "ok" && r.metric.is_some_and(f64::is_finite)));
    assert!(records[2..]
        .iter()
        .all(|r| r.status.starts_with("skipped") && r.metric.is_none()));
    assert_eq!(records[0].train_step, 2);

    let again = scaling_sweep(&models[..1], &protocol, &reference).unwrap();
    assert_eq!(
        again[0].metric.unwrap().to_bits(),
        records[0].metric.unwrap().to_bits()
    );

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.csv");
    write_sweep_csv(&path, &records).unwrap();
    assert_eq!(read_sweep_csv(&path).unwrap(), records);
}

#[test]
fn sweep_compute_columns_match_published_arithmetic() {
    let l2 = DiTConfig::named("L/2").unwrap();
    let xl2 = DiTConfig::named("XL/2").unwrap();
    let (l_tflops, _) = compute_columns(&l2, 1000, false, 256, 400_000);
    let (xl_tflops, xl_train) = compute_columns(&xl2, 128, false, 256, 400_000);
    assert_eq!((l_tflops * 10.0).round() / 10.0, 80.7);
    assert_eq!((xl_tflops * 10.0).round() / 10.0, 15.2);
    assert!((xl_train / 3.64e10 - 1.0).abs() < 0.005);
    let (guided, _) = compute_columns(&xl2, 128, true, 256, 0);
    assert_eq!(guided, 2.0 * xl_tflops);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn distance_is_symmetric_and_nonnegative(k1 in 0u64..1000, k2 in 0u64..1000, d in 1usize..6) {
        let mean = |k: u64| rng::normal_tensor::<f64>(&[d], &[k, 1]).into_data();
        let a = stats(mean(k1), random_spd(d, k1));
        let b = stats(mean(k2), random_spd(d, k2 + 5000));
        let ab = frechet_distance(&a, &b).unwrap();
        let ba = frechet_distance(&b, &a).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() < 1e-8 * ab.max(1.0), "{} vs {}", ab, ba);
    }
}

#[test]
fn variant_sweep_trains_every_block() {
    let ds = toy_dataset(4, 8, 2, 0).unwrap();
    let reference = reference_stats(&ds, 200, 0, None).unwrap();
    let protocol = EvalProtocol {
        sample_count: 16,
        ..EvalProtocol::default()
    };
    let train = TrainConfig {
        batch_size: 4,
        steps: 3,
        checkpoint_every: 0,
        ..TrainConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let eval = VariantEval {
        protocol: &protocol,
        num_steps: 4,
        reference: &reference,
    };
    let runs = variant_sweep(
        &DiTConfig::mini(BlockVariant::AdaLNZero),
        &BlockVariant::ALL,
        &train,
        &ds,
        Some(eval),
        Some(dir.path()),
    )
    .unwrap();
    assert_eq!(runs.len(), 4);
    for (run, v) in runs.iter().zip(BlockVariant::ALL) {
        let r = &run.record;
        assert_eq!((r.variant.as_str(), r.status.as_str()), (v.name(), "ok"));
        assert_eq!(r.train_steps, 3);
        assert_eq!(run.log.len(), 3);
        assert!(r.final_l_simple.is_some_and(f64::is_finite));
        assert!(r.metric.is_some_and(f64::is_finite));
        assert_eq!(run.checkpoint.as_ref().unwrap().model.variant, v);
        assert!(dir.path().join(v.name()).join("loss.csv").exists());
    }
    let records: Vec<_> = runs.into_iter().map(|r| r.record).collect();
    let path = dir.path().join("variants.csv");
    write_variant_csv(&path, &records).unwrap();
    assert_eq!(read_variant_csv(&path).unwrap(), records);
}
