use serde::Serialize;

use crate::analysis::{count_flops, count_params};
use crate::model::{BlockVariant, DiTConfig};

/// Which published table a reference row comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ReferenceKind {
    /// Model-size table, Gflops at I = 32, p = 4.
    ModelTable,
    /// Per-model details table with flops and parameters.
    DetailsTable,
}

/// A published figure: `(kind, model, variant, image size, Gflops, params in M)`.
pub type ReferenceRow = (
    ReferenceKind,
    &'static str,
    BlockVariant,
    usize,
    f64,
    Option<f64>,
);

use BlockVariant::*;
use ReferenceKind::*;

pub const REFERENCE_ROWS: [ReferenceRow; 20] = [
    (ModelTable, "S/4", AdaLNZero, 256, 1.4, None),
    (ModelTable, "B/4", AdaLNZero, 256, 5.6, None),
    (ModelTable, "L/4", AdaLNZero, 256, 19.7, None),
    (ModelTable, "XL/4", AdaLNZero, 256, 29.1, None),
    (DetailsTable, "S/8", AdaLNZero, 256, 0.36, Some(33.0)),
    (DetailsTable, "S/4", AdaLNZero, 256, 1.41, Some(33.0)),
    (DetailsTable, "S/2", AdaLNZero, 256, 6.06, Some(33.0)),
    (DetailsTable, "B/8", AdaLNZero, 256, 1.42, Some(131.0)),
    (DetailsTable, "B/4", AdaLNZero, 256, 5.56, Some(130.0)),
    (DetailsTable, "B/2", AdaLNZero, 256, 23.01, Some(130.0)),
    (DetailsTable, "L/8", AdaLNZero, 256, 5.01, Some(459.0)),
    (DetailsTable, "L/4", AdaLNZero, 256, 19.70, Some(458.0)),
    (DetailsTable, "L/2", AdaLNZero, 256, 80.71, Some(458.0)),
    (DetailsTable, "XL/8", AdaLNZero, 256, 7.39, Some(676.0)),
    (DetailsTable, "XL/4", AdaLNZero, 256, 29.05, Some(675.0)),
    (DetailsTable, "XL/2", AdaLNZero, 256, 118.64, Some(675.0)),
    (DetailsTable, "XL/2", InContext, 256, 119.37, Some(449.0)),
    (
        DetailsTable,
        "XL/2",
        CrossAttention,
        256,
        137.62,
        Some(598.0),
    ),
    (DetailsTable, "XL/2", AdaLN, 256, 118.56, Some(600.0)),
    (DetailsTable, "XL/2", AdaLNZero, 512, 524.60, Some(675.0)),
];

/// Relative tolerance on Gflops: the model table prints one decimal.
pub fn flop_tolerance(kind: ReferenceKind) -> f64 {
    match kind {
        ModelTable => 0.02,
        DetailsTable => 0.01,
    }
}

/// Relative tolerance on parameter counts.
pub const PARAM_TOLERANCE: f64 = 0.02;

/// Image pixels per latent cell of the autoencoder in front of the model.
pub const LATENT_DOWNSAMPLE: usize = 8;

/// Computed versus published figures for one model.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConformanceRow {
    pub kind: ReferenceKind,
    pub model: String,
    pub variant: BlockVariant,
    pub image_size: usize,
    pub reference_gflops: f64,
    pub gflops: f64,
    pub gflop_error: f64,
    pub reference_params_m: Option<f64>,
    pub params_m: f64,
    pub param_error: Option<f64>,
    pub pass: bool,
}

/// Compares every reference row against [`count_flops`] and [`count_params`].
pub fn conformance_table() -> Vec<ConformanceRow> {
    REFERENCE_ROWS
        .iter()
        .map(
            |&(kind, name, variant, image_size, ref_gflops, ref_params)| {
                let config = DiTConfig::named(name)
                    .expect("reference names are valid")
                    .with_variant(variant);
                let input = image_size / LATENT_DOWNSAMPLE;
                let gflops = count_flops(&config, input).gflops();
                let params_m = count_params(&config).millions();
                let gflop_error = (gflops - ref_gflops).abs() / ref_gflops;
                let param_error = ref_params.map(|r| (params_m - r).abs() / r);
                let pass = gflop_error <= flop_tolerance(kind)
                    && param_error.is_none_or(|e| e <= PARAM_TOLERANCE);
                ConformanceRow {
                    kind,
                    model: format!("DiT-{name}"),
                    variant,
                    image_size,
                    reference_gflops: ref_gflops,
                    gflops,
                    gflop_error,
                    reference_params_m: ref_params,
                    params_m,
                    param_error,
                    pass,
                }
            },
        )
        .collect()
}
