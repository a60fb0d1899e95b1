//! Layered configuration: built-in defaults, then a config file, then flags.
//!
//! A config file is TOML with one table per concern (`[model]`, `[train]`,
//! ...). A run manifest also works as a config file: its `config` object
//! holds exactly the resolved sections of that run.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use dit::model::{BlockVariant, DiTConfig};
use dit::trainer::{ModelGradCheck, TrainConfig};

/// Parsed config document; an empty object when no file was given.
#[derive(Clone, Debug, Default)]
pub struct Document(Map<String, Value>);

impl Document {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Document::default());
        };
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let value: Value = if path.extension().is_some_and(|e| e == "json") {
            let v: Value = serde_json::from_str(&text)
                .with_context(|| format!("{} is not valid JSON", path.display()))?;
            match v.get("config") {
                Some(c) if v.get("subcommand").is_some() => c.clone(),
                _ => v,
            }
        } else {
            let t: toml::Table = toml::from_str(&text)
                .with_context(|| format!("{} is not valid TOML", path.display()))?;
            serde_json::to_value(t)?
        };
        match value {
            Value::Object(map) => Ok(Document(map)),
            _ => bail!("{} must hold a table of sections", path.display()),
        }
    }

    /// `base` with the `[name]` table of the document laid over it.
    pub fn section<T: Serialize + DeserializeOwned>(&self, name: &str, base: T) -> Result<T> {
        let Some(overlay) = self.0.get(name) else {
            return Ok(base);
        };
        let mut merged = serde_json::to_value(&base)?;
        merge(&mut merged, overlay);
        serde_json::from_value(merged).with_context(|| format!("bad [{name}] section"))
    }
}

fn merge(base: &mut Value, overlay: &Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

/// Builds the `config` object recorded in a manifest.
pub fn resolved(sections: &[(&str, Value)]) -> Value {
    Value::Object(
        sections
            .iter()
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect(),
    )
}

/// Model size named on the command line: `mini` or a size such as `S/2`.
pub fn model_from_name(name: &str) -> Result<DiTConfig> {
    if name.eq_ignore_ascii_case("mini") {
        return Ok(DiTConfig::mini(BlockVariant::AdaLNZero));
    }
    Ok(DiTConfig::named(name)?)
}

/// Applies `--model` and `--variant` on top of the `[model]` section.
pub fn model_config(
    doc: &Document,
    name: Option<&str>,
    variant: Option<BlockVariant>,
) -> Result<DiTConfig> {
    let mut config = doc.section("model", DiTConfig::mini(BlockVariant::AdaLNZero))?;
    if let Some(name) = name {
        let named = model_from_name(name)?;
        config = DiTConfig {
            variant: config.variant,
            ..named
        };
    }
    if let Some(v) = variant {
        config.variant = v;
    }
    config.validate()?;
    Ok(config)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Classes in the toy stream; defaults to the model's.
    pub num_classes: Option<usize>,
    pub seed: u64,
}

/// Training defaults sized for the toy model.
pub fn toy_train_defaults() -> TrainConfig {
    TrainConfig {
        batch_size: 32,
        steps: 2000,
        ..TrainConfig::default()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weights {
    Ema,
    Raw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSection {
    pub ckpt: Option<PathBuf>,
    /// Classes cycled over the samples; empty samples unconditionally.
    pub class: Vec<usize>,
    pub cfg_scale: f64,
    pub steps: usize,
    pub count: usize,
    pub seed: u64,
    pub weights: Weights,
    pub clip_denoised: bool,
    pub chunk_size: usize,
    /// Images per row of the preview grid.
    pub cols: usize,
}

impl Default for SampleSection {
    fn default() -> Self {
        SampleSection {
            ckpt: None,
            class: Vec::new(),
            cfg_scale: 1.0,
            steps: 250,
            count: 16,
            seed: 0,
            weights: Weights::Ema,
            clip_denoised: false,
            chunk_size: 64,
            cols: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlopsSection {
    pub model: String,
    pub image_size: usize,
    pub variant: BlockVariant,
}

impl Default for FlopsSection {
    fn default() -> Self {
        FlopsSection {
            model: "XL/2".into(),
            image_size: 256,
            variant: BlockVariant::AdaLNZero,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckSection {
    pub variants: Vec<BlockVariant>,
    pub seed: u64,
    pub jitter: f64,
    pub coords_per_tensor: usize,
    pub step: f64,
    pub timesteps: [usize; 2],
    pub tolerance: f64,
}

impl Default for GradCheckSection {
    fn default() -> Self {
        let d = ModelGradCheck::default();
        GradCheckSection {
            variants: BlockVariant::ALL.to_vec(),
            seed: d.seed,
            jitter: d.jitter,
            coords_per_tensor: d.coords_per_tensor,
            step: d.step,
            timesteps: d.timesteps,
            tolerance: 1e-4,
        }
    }
}

impl GradCheckSection {
    pub fn options(&self) -> ModelGradCheck {
        ModelGradCheck {
            seed: self.seed,
            jitter: self.jitter,
            coords_per_tensor: self.coords_per_tensor,
            step: self.step,
            timesteps: self.timesteps,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    /// Respaced step count.
    pub steps: usize,
    pub t_max: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        ScheduleSection {
            steps: t.t_max,
            t_max: t.t_max,
            beta_start: t.beta_start,
            beta_end: t.beta_end,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridEntry {
    pub name: String,
    pub ckpt: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub grid: Vec<GridEntry>,
    /// Train every block variant with `[model]`/`[train]` and add it to the grid.
    pub variants: bool,
    pub reference_count: usize,
    /// Where reference statistics are cached between runs.
    pub cache_dir: Option<PathBuf>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            grid: Vec::new(),
            variants: false,
            reference_count: dit::eval::REFERENCE_COUNT,
            cache_dir: None,
        }
    }
}

/// Parses `NAME=PATH`.
pub fn parse_grid_entry(s: &str) -> std::result::Result<GridEntry, String> {
    let (name, path) = s
        .split_once('=')
        .ok_or_else(|| format!("expected NAME=PATH, got {s:?}"))?;
    Ok(GridEntry {
        name: name.into(),
        ckpt: path.into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(text: &str) -> Document {
        let t: toml::Table = toml::from_str(text).unwrap();
        match serde_json::to_value(t).unwrap() {
            Value::Object(m) => Document(m),
            _ => unreachable!(),
        }
    }

    #[test]
    fn file_overrides_defaults_field_by_field() {
        let d = doc("[train]\nlr = 0.001\n[model]\nvariant = \"adaln\"\n");
        let t = d.section("train", toy_train_defaults()).unwrap();
        assert_eq!((t.lr, t.batch_size, t.steps), (0.001, 32, 2000));
        let m = model_config(&d, None, None).unwrap();
        assert_eq!((m.variant, m.hidden), (BlockVariant::AdaLN, 32));
    }

    #[test]
    fn flags_beat_file() {
        let d = doc("[model]\nvariant = \"adaln\"\n");
        let m = model_config(&d, Some("S/8"), Some(BlockVariant::InContext)).unwrap();
        assert_eq!(
            (m.variant, m.hidden, m.patch),
            (BlockVariant::InContext, 384, 8)
        );
        let m = model_config(&d, Some("S/8"), None).unwrap();
        assert_eq!(m.variant, BlockVariant::AdaLN);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let d = doc("[train]\nlearning_rate = 0.1\n");
        assert!(d.section("train", toy_train_defaults()).is_err());
    }

    #[test]
    fn manifest_config_is_a_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let manifest = serde_json::json!({
            "subcommand": "sample",
            "config": {"sample": {"count": 3, "class": [1]}},
        });
        fs::write(&path, manifest.to_string()).unwrap();
        let d = Document::load(Some(&path)).unwrap();
        let s = d.section("sample", SampleSection::default()).unwrap();
        assert_eq!((s.count, s.class.as_slice(), s.steps), (3, &[1][..], 250));
    }

    #[test]
    fn grid_entries() {
        let e = parse_grid_entry("a=x/y.ditt").unwrap();
        assert_eq!(
            (e.name.as_str(), e.ckpt.to_str().unwrap()),
            ("a", "x/y.ditt")
        );
        assert!(parse_grid_entry("nope").is_err());
    }
}
