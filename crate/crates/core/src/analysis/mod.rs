//! Closed-form compute and parameter accounting.
//!
//! One multiply-accumulate counts as one flop. Every linear layer is counted,
//! including the conditioning MLPs and both attention matmuls; normalisation,
//! activations, softmax and embedding lookups are free.

mod conformance;

pub use conformance::{
    conformance_table, flop_tolerance, ConformanceRow, ReferenceKind, ReferenceRow,
    LATENT_DOWNSAMPLE, PARAM_TOLERANCE, REFERENCE_ROWS,
};

use serde::Serialize;

use crate::model::{BlockVariant, DiTConfig, FREQ_DIM};

/// Conditioning tokens seen by in-context and cross-attention blocks.
const COND_TOKENS: u64 = 2;

/// Multiply-accumulate counts of one forward pass on a single image.
///
/// The `attention_*`, `mlp`, `modulation` and `cross_attention` fields are per
/// block; `total` multiplies them by `blocks`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct FlopReport {
    pub patch_embed: u64,
    pub attention_projections: u64,
    pub attention_matmuls: u64,
    pub mlp: u64,
    pub modulation: u64,
    pub cross_attention: u64,
    pub blocks: u64,
    pub timestep_embedder: u64,
    pub label_embedding: u64,
    pub final_layer: u64,
    pub total: u64,
}

impl FlopReport {
    pub fn per_block(&self) -> u64 {
        self.attention_projections
            + self.attention_matmuls
            + self.mlp
            + self.modulation
            + self.cross_attention
    }

    /// Self-attention and MLP work of all blocks: the terms that grow with
    /// the token count.
    pub fn core(&self) -> u64 {
        self.blocks * (self.attention_projections + self.attention_matmuls + self.mlp)
    }

    /// Work done inside the transformer blocks.
    pub fn transformer(&self) -> u64 {
        self.blocks * self.per_block()
    }

    pub fn gflops(&self) -> f64 {
        self.total as f64 / 1e9
    }

    /// `(name, count)` pairs with per-block terms already multiplied out.
    pub fn components(&self) -> [(&'static str, u64); 9] {
        let n = self.blocks;
        [
            ("patch_embed", self.patch_embed),
            ("attention_projections", n * self.attention_projections),
            ("attention_matmuls", n * self.attention_matmuls),
            ("mlp", n * self.mlp),
            ("modulation", n * self.modulation),
            ("cross_attention", n * self.cross_attention),
            ("timestep_embedder", self.timestep_embedder),
            ("label_embedding", self.label_embedding),
            ("final_layer", self.final_layer),
        ]
    }
}

/// Forward-pass flops of `config` on an `input × input` latent.
///
/// ```
/// use dit::analysis::count_flops;
/// use dit::model::DiTConfig;
///
/// let xl2 = DiTConfig::named("XL/2").unwrap();
/// let gflops = count_flops(&xl2, 32).gflops();
/// assert!((gflops - 118.64).abs() / 118.64 < 0.01);
/// ```
pub fn count_flops(config: &DiTConfig, input: usize) -> FlopReport {
    let d = config.hidden as u64;
    let p = config.patch as u64;
    let c = config.channels as u64;
    let t = (input as u64 / p).pow(2);
    let variant = config.variant;
    // In-context conditioning lengthens the sequence inside the blocks.
    let seq = if variant == BlockVariant::InContext {
        t + COND_TOKENS
    } else {
        t
    };

    let cross_attention = if variant == BlockVariant::CrossAttention {
        // q and output projections on image tokens, k/v on the conditioning
        // tokens, then scores and weighted values against them.
        2 * t * d * d + 2 * COND_TOKENS * d * d + 2 * t * COND_TOKENS * d
    } else {
        0
    };
    let modulation = if variant.is_adaptive() {
        variant.modulation_chunks() as u64 * d * d
    } else {
        0
    };
    let final_modulation = if variant.is_adaptive() { 2 * d * d } else { 0 };

    let mut report = FlopReport {
        patch_embed: t * p * p * c * d,
        attention_projections: 4 * seq * d * d,
        attention_matmuls: 2 * seq * seq * d,
        mlp: 8 * seq * d * d,
        modulation,
        cross_attention,
        blocks: config.depth as u64,
        timestep_embedder: FREQ_DIM as u64 * d + d * d,
        label_embedding: 0,
        final_layer: final_modulation + t * d * p * p * 2 * c,
        total: 0,
    };
    report.total = report.components().iter().map(|(_, n)| n).sum();
    report
}

/// Learnable parameter counts by component.
///
/// `norms`, `attention`, `cross_attention`, `mlp` and `modulation` are per
/// block. The fixed positional embedding is not a parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ParamReport {
    pub patch_embed: u64,
    pub timestep_embedder: u64,
    pub label_embedding: u64,
    pub norms: u64,
    pub attention: u64,
    pub cross_attention: u64,
    pub mlp: u64,
    pub modulation: u64,
    pub blocks: u64,
    pub final_layer: u64,
    pub total: u64,
}

impl ParamReport {
    pub fn per_block(&self) -> u64 {
        self.norms + self.attention + self.cross_attention + self.mlp + self.modulation
    }

    pub fn millions(&self) -> f64 {
        self.total as f64 / 1e6
    }
}

/// Parameter count of `config`, matching [`crate::model::init_parameters`]
/// exactly.
pub fn count_params(config: &DiTConfig) -> ParamReport {
    let d = config.hidden as u64;
    let patch_dim = config.patch_dim() as u64;
    let linear = |i: u64, o: u64| i * o + o;
    let norm = 2 * d;
    let variant = config.variant;
    let adaptive = variant.is_adaptive();

    let norms = match variant {
        BlockVariant::InContext => 2 * norm,
        BlockVariant::CrossAttention => 4 * norm,
        BlockVariant::AdaLN | BlockVariant::AdaLNZero => 0,
    };
    let cross_attention = if variant == BlockVariant::CrossAttention {
        linear(d, d) + linear(d, 2 * d) + linear(d, d)
    } else {
        0
    };
    let modulation = if adaptive {
        linear(d, variant.modulation_chunks() as u64 * d)
    } else {
        0
    };
    let final_norm = if adaptive { linear(d, 2 * d) } else { norm };

    let mut report = ParamReport {
        patch_embed: linear(patch_dim, d),
        timestep_embedder: linear(FREQ_DIM as u64, d) + linear(d, d),
        label_embedding: (config.num_classes as u64 + 1) * d,
        norms,
        attention: linear(d, 3 * d) + linear(d, d),
        cross_attention,
        mlp: linear(d, 4 * d) + linear(4 * d, d),
        modulation,
        blocks: config.depth as u64,
        final_layer: final_norm + linear(d, 2 * patch_dim),
        total: 0,
    };
    report.total = report.patch_embed
        + report.timestep_embedder
        + report.label_embedding
        + report.blocks * report.per_block()
        + report.final_layer;
    report
}

/// Total training compute in Gflops: forward Gflops · batch · steps · 3,
/// the factor covering a backward pass twice as expensive as the forward.
pub fn training_compute(gflops_per_forward: f64, batch: u64, steps: u64) -> f64 {
    gflops_per_forward * batch as f64 * steps as f64 * 3.0
}

/// Per-image sampling compute in Tflops; guidance doubles the forwards.
pub fn sampling_compute(gflops_per_forward: f64, num_steps: u64, guided: bool) -> f64 {
    let passes = if guided { 2.0 } else { 1.0 };
    gflops_per_forward * num_steps as f64 * passes / 1e3
}

/// Reported Gflops rounded to two decimals, as in published tables.
pub fn round_gflops(gflops: f64) -> f64 {
    (gflops * 100.0).round() / 100.0
}
