use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the timestep and class embeddings enter each block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockVariant {
    /// Two extra tokens appended to the sequence.
    InContext,
    /// Cross-attention over the length-2 sequence `[t, c]`.
    CrossAttention,
    /// Adaptive layer norm: scale and shift regressed from `t + c`.
    #[serde(rename = "adaln")]
    AdaLN,
    /// Adaptive layer norm with zero-initialised residual gates.
    #[serde(rename = "adaln-zero")]
    AdaLNZero,
}

impl BlockVariant {
    pub const ALL: [BlockVariant; 4] = [
        BlockVariant::InContext,
        BlockVariant::CrossAttention,
        BlockVariant::AdaLN,
        BlockVariant::AdaLNZero,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BlockVariant::InContext => "in-context",
            BlockVariant::CrossAttention => "cross-attention",
            BlockVariant::AdaLN => "adaln",
            BlockVariant::AdaLNZero => "adaln-zero",
        }
    }

    /// Whether the variant regresses modulation from the conditioning vector.
    pub fn is_adaptive(self) -> bool {
        matches!(self, BlockVariant::AdaLN | BlockVariant::AdaLNZero)
    }

    /// Width multiple of the per-block modulation regressor (0 if none).
    pub fn modulation_chunks(self) -> usize {
        match self {
            BlockVariant::AdaLN => 4,
            BlockVariant::AdaLNZero => 6,
            _ => 0,
        }
    }
}

impl fmt::Display for BlockVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BlockVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace(['_', ' '], "-");
        BlockVariant::ALL
            .into_iter()
            .find(|v| v.name() == norm || v.name().replace('-', "") == norm)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown block variant {s:?}; expected one of in-context, cross-attention, adaln, adaln-zero"
                ))
            })
    }
}

/// Architecture hyperparameters of one DiT.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiTConfig {
    /// Number of blocks N.
    pub depth: usize,
    /// Token width d.
    pub hidden: usize,
    pub heads: usize,
    /// Patch edge p.
    pub patch: usize,
    /// Latent edge I.
    pub input: usize,
    /// Latent channels C.
    pub channels: usize,
    pub num_classes: usize,
    pub variant: BlockVariant,
    #[serde(default = "default_dropout")]
    pub class_dropout_prob: f64,
}

fn default_dropout() -> f64 {
    0.1
}

/// The four model sizes: (name, depth, hidden, heads).
pub const MODEL_SIZES: [(&str, usize, usize, usize); 4] = [
    ("S", 12, 384, 6),
    ("B", 12, 768, 12),
    ("L", 24, 1024, 16),
    ("XL", 28, 1152, 16),
];

/// Patch sizes explored for every model size.
pub const PATCH_SIZES: [usize; 3] = [2, 4, 8];

impl DiTConfig {
    /// A named size at latent edge 32 with 4 channels, 1000 classes and
    /// adaLN-Zero blocks.
    ///
    /// ```
    /// let c = dit::model::DiTConfig::named("XL/2").unwrap();
    /// assert_eq!((c.depth, c.hidden, c.heads, c.patch), (28, 1152, 16, 2));
    /// assert_eq!(c.tokens(), 256);
    /// ```
    pub fn named(name: &str) -> Result<Self> {
        let bad = || {
            Error::Config(format!(
                "bad model name {name:?}; expected e.g. S/2, B/4 or XL/8"
            ))
        };
        let (size, patch) = name.trim().split_once('/').ok_or_else(bad)?;
        let patch: usize = patch.parse().map_err(|_| bad())?;
        let size = size.to_ascii_uppercase();
        let size = size.trim_start_matches("DIT-");
        let &(_, depth, hidden, heads) =
            MODEL_SIZES.iter().find(|m| m.0 == size).ok_or_else(bad)?;
        let config = DiTConfig {
            depth,
            hidden,
            heads,
            patch,
            input: 32,
            channels: 4,
            num_classes: 1000,
            variant: BlockVariant::AdaLNZero,
            class_dropout_prob: default_dropout(),
        };
        config.validate()?;
        Ok(config)
    }

    /// The desk-scale model used for gradient checks and toy training.
    pub fn mini(variant: BlockVariant) -> Self {
        DiTConfig {
            depth: 2,
            hidden: 32,
            heads: 2,
            patch: 4,
            input: 8,
            channels: 2,
            num_classes: 4,
            variant,
            class_dropout_prob: default_dropout(),
        }
    }

    pub fn with_variant(mut self, variant: BlockVariant) -> Self {
        self.variant = variant;
        self
    }

    pub fn with_patch(mut self, patch: usize) -> Self {
        self.patch = patch;
        self
    }

    pub fn with_input(mut self, input: usize) -> Self {
        self.input = input;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if [
            self.depth,
            self.hidden,
            self.heads,
            self.patch,
            self.input,
            self.channels,
            self.num_classes,
        ]
        .contains(&0)
        {
            return fail(format!("all sizes must be positive: {self:?}"));
        }
        if !self.input.is_multiple_of(self.patch) {
            return fail(format!(
                "input {} is not divisible by patch {}",
                self.input, self.patch
            ));
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return fail(format!(
                "hidden {} is not divisible by heads {}",
                self.hidden, self.heads
            ));
        }
        if !self.hidden.is_multiple_of(4) {
            return fail(format!(
                "hidden {} must be divisible by 4 for 2-D positional embeddings",
                self.hidden
            ));
        }
        if !(0.0..=1.0).contains(&self.class_dropout_prob) {
            return fail(format!(
                "class_dropout_prob {} outside [0, 1]",
                self.class_dropout_prob
            ));
        }
        Ok(())
    }

    /// Patch-grid edge I/p.
    pub fn grid(&self) -> usize {
        self.input / self.patch
    }

    /// Token count T = (I/p)².
    pub fn tokens(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    /// Width of a patch token before embedding, p²·C.
    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch * self.channels
    }

    /// Label index reserved for the null embedding.
    pub fn null_label(&self) -> usize {
        self.num_classes
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: DiTConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}

/// Every named size/patch pair, e.g. `("DiT-B/4", config)`.
pub fn standard_configs() -> Vec<(String, DiTConfig)> {
    MODEL_SIZES
        .iter()
        .flat_map(|&(size, ..)| {
            PATCH_SIZES.iter().map(move |p| {
                let name = format!("{size}/{p}");
                (
                    format!("DiT-{name}"),
                    DiTConfig::named(&name).expect("table entries are valid"),
                )
            })
        })
        .collect()
}
