//! Forward pass against outputs computed by an independent NumPy
//! implementation (`fixtures/forward_oracle.py`) from the same parameters.
//!
//! Regenerate the inputs with
//! `cargo test -p dit --test golden_forward -- --ignored`, then run the
//! oracle script to refresh `forward_expected.json`.

use std::path::PathBuf;

use dit::diffcore::{Scalar, Tape, Tensor, TensorFile};
use dit::model::{forward, init_parameters, BlockVariant, DiTConfig, ParameterStore};
use dit::rng;

const TIMESTEPS: [usize; 3] = [1, 400, 1000];
const LABELS: [usize; 3] = [0, 2, 3];

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn tiny(variant: BlockVariant) -> DiTConfig {
    DiTConfig {
        depth: 2,
        hidden: 8,
        heads: 2,
        patch: 2,
        input: 4,
        channels: 2,
        num_classes: 3,
        variant,
        class_dropout_prob: 0.1,
    }
}

#[test]
#[ignore = "rewrites the fixture inputs"]
fn write_fixture_inputs() {
    let mut file = TensorFile::new();
    let configs: Vec<_> = BlockVariant::ALL.map(tiny).to_vec();
    file.metadata = serde_json::json!({
        "timesteps": TIMESTEPS,
        "labels": LABELS,
        "configs": configs,
    })
    .to_string();
    let z: Tensor<f64> = rng::normal_tensor(&[3, 4, 4, 2], &[2024]);
    file.insert("z", z);
    for c in &configs {
        let params = init_parameters::<f64>(c, 7).unwrap().jittered(8, 0.3);
        params.write_into(&mut file, &format!("{}/", c.variant));
    }
    file.save(fixture("forward_inputs.ditt")).unwrap();
}

#[test]
fn forward_matches_numpy_oracle() {
    let file = TensorFile::load(fixture("forward_inputs.ditt")).unwrap();
    let expected: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fixture("forward_expected.json")).unwrap())
            .unwrap();
    let z: Tensor<f64> = file.get("z").unwrap();
    for variant in BlockVariant::ALL {
        let config = tiny(variant);
        let template = init_parameters::<f64>(&config, 0).unwrap();
        let params = ParameterStore::read_from(&file, &format!("{variant}/"), &template).unwrap();
        let wide = run(&config, &params, &z);
        let narrow = run(&config, &params.cast::<f32>(), &z.cast::<f32>());
        for (i, name) in ["eps", "v"].into_iter().enumerate() {
            let want: Vec<f64> =
                serde_json::from_value(expected[variant.name()][name].clone()).unwrap();
            assert!(
                want.iter().any(|w| w.abs() > 1e-3),
                "{variant} {name} is trivial"
            );
            let err = max_error(&wide[i], &want);
            assert!(err < 1e-10, "{variant} {name}: max error {err:e}");
            let err = max_error(&narrow[i], &want);
            assert!(err < 1e-4, "{variant} {name} at f32: max error {err:e}");
        }
    }
}

fn run<S: Scalar>(config: &DiTConfig, params: &ParameterStore<S>, z: &Tensor<S>) -> [Vec<f64>; 2] {
    let tape = Tape::new();
    let out = forward(
        &params.bind(&tape, false),
        config,
        &tape.constant(z.clone()),
        &TIMESTEPS,
        &LABELS,
    )
    .unwrap();
    [
        out.eps.to_tensor().to_f64_vec(),
        out.v.to_tensor().to_f64_vec(),
    ]
}

fn max_error(got: &[f64], want: &[f64]) -> f64 {
    assert_eq!(got.len(), want.len());
    got.iter()
        .zip(want)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}
