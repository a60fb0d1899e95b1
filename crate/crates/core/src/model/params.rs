use indexmap::IndexMap;

use crate::diffcore::{Scalar, Tape, Tensor, TensorFile, Var};
use crate::error::{Error, Result};
use crate::model::{BlockVariant, DiTConfig};
use crate::rng;

/// Width of the sinusoidal timestep features fed to the timestep MLP.
pub const FREQ_DIM: usize = 256;

const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    Normal,
    Zeros,
    Ones,
}

struct Layout {
    d: usize,
    entries: Vec<(String, Vec<usize>, Init)>,
}

impl Layout {
    fn push(&mut self, name: String, shape: &[usize], init: Init) {
        self.entries.push((name, shape.to_vec(), init));
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize, init: Init) {
        self.push(format!("{name}.weight"), &[fan_in, fan_out], init);
        self.push(format!("{name}.bias"), &[fan_out], Init::Zeros);
    }

    fn norm(&mut self, name: &str) {
        let d = self.d;
        self.push(format!("{name}.weight"), &[d], Init::Ones);
        self.push(format!("{name}.bias"), &[d], Init::Zeros);
    }
}

fn layout(config: &DiTConfig) -> Vec<(String, Vec<usize>, Init)> {
    use Init::*;
    let d = config.hidden;
    let variant = config.variant;
    let mut l = Layout {
        d,
        entries: Vec::new(),
    };

    l.linear("x_embedder.proj", config.patch_dim(), d, Normal);
    l.linear("t_embedder.mlp.0", FREQ_DIM, d, Normal);
    l.linear("t_embedder.mlp.2", d, d, Normal);
    l.push(
        "y_embedder.embedding_table".into(),
        &[config.num_classes + 1, d],
        Normal,
    );

    for i in 0..config.depth {
        let b = format!("blocks.{i}");
        if !variant.is_adaptive() {
            l.norm(&format!("{b}.norm1"));
        }
        l.linear(&format!("{b}.attn.qkv"), d, 3 * d, Normal);
        l.linear(&format!("{b}.attn.proj"), d, d, Normal);
        if variant == BlockVariant::CrossAttention {
            l.norm(&format!("{b}.norm_cross"));
            l.norm(&format!("{b}.cond_norm"));
            l.linear(&format!("{b}.cross_attn.q"), d, d, Normal);
            l.linear(&format!("{b}.cross_attn.kv"), d, 2 * d, Normal);
            l.linear(&format!("{b}.cross_attn.proj"), d, d, Normal);
        }
        if !variant.is_adaptive() {
            l.norm(&format!("{b}.norm2"));
        }
        l.linear(&format!("{b}.mlp.fc1"), d, 4 * d, Normal);
        l.linear(&format!("{b}.mlp.fc2"), 4 * d, d, Normal);
        if variant.is_adaptive() {
            let init = if variant == BlockVariant::AdaLNZero {
                Zeros
            } else {
                Normal
            };
            l.linear(
                &format!("{b}.adaLN_modulation"),
                d,
                variant.modulation_chunks() * d,
                init,
            );
        }
    }

    if variant.is_adaptive() {
        l.linear("final_layer.adaLN_modulation", d, 2 * d, Zeros);
    } else {
        l.norm("final_layer.norm_final");
    }
    l.linear("final_layer.linear", d, config.patch_dim() * 2, Zeros);
    l.entries
}

/// Named learnable tensors of one DiT, in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterStore<S: Scalar = f32> {
    tensors: IndexMap<String, Tensor<S>>,
}

/// Initialises every parameter of `config`, deterministically in `seed`.
///
/// General linears and the label table draw from a normal with std 0.02
/// truncated at two standard deviations; biases are zero, layer-norm gains
/// are one. The final decoder linear, the adaLN-Zero regressors and the
/// final-layer modulation start at zero.
pub fn init_parameters<S: Scalar>(config: &DiTConfig, seed: u64) -> Result<ParameterStore<S>> {
    config.validate()?;
    let mut tensors = IndexMap::new();
    for (index, (name, shape, init)) in layout(config).into_iter().enumerate() {
        let n: usize = shape.iter().product();
        let data: Vec<S> = match init {
            Init::Zeros => vec![S::zero(); n],
            Init::Ones => vec![S::one(); n],
            Init::Normal => {
                let mut rng = rng::keyed(&[seed, 0x1417, index as u64]);
                (0..n)
                    .map(|_| S::from_f64(rng::truncated_normal(&mut rng, INIT_STD)))
                    .collect()
            }
        };
        tensors.insert(name, Tensor::new(shape, data)?);
    }
    Ok(ParameterStore { tensors })
}

impl<S: Scalar> ParameterStore<S> {
    pub fn from_map(tensors: IndexMap<String, Tensor<S>>) -> Self {
        ParameterStore { tensors }
    }

    /// A store with the same names and shapes, every value zero.
    pub fn zeros_like(&self) -> Self {
        self.map(|_, t| Tensor::zeros(t.shape()))
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<S>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<S>> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<S>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    /// Number of named tensors.
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_params(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn map<T: Scalar>(
        &self,
        mut f: impl FnMut(&str, &Tensor<S>) -> Tensor<T>,
    ) -> ParameterStore<T> {
        ParameterStore {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), f(k, v)))
                .collect(),
        }
    }

    pub fn cast<T: Scalar>(&self) -> ParameterStore<T> {
        self.map(|_, t| t.cast())
    }

    /// Registers every tensor on `tape`, as trainable leaves or constants.
    pub fn bind(&self, tape: &Tape<S>, trainable: bool) -> Bound<S> {
        let vars = self
            .tensors
            .iter()
            .map(|(k, v)| {
                let var = if trainable {
                    tape.param(v.clone())
                } else {
                    tape.constant(v.clone())
                };
                (k.clone(), var)
            })
            .collect();
        Bound { vars }
    }

    /// Copy with independent N(0, std²) noise added to every value.
    ///
    /// Zero-initialised layers make many gradients vanish at init; gradient
    /// checks and golden fixtures run at a jittered point instead.
    pub fn jittered(&self, seed: u64, std: f64) -> Self {
        let mut index = 0u64;
        self.map(|_, t| {
            index += 1;
            let noise: Tensor<f64> = rng::normal_tensor(t.shape(), &[seed, 0x7177, index]);
            t.zip_map(&noise.cast(), |a, n| a + n * S::from_f64(std))
        })
    }

    /// All values concatenated in store order.
    pub fn flatten(&self) -> Vec<S> {
        self.tensors
            .values()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    /// Adds the tensors to `file` under `prefix`.
    pub fn write_into(&self, file: &mut TensorFile, prefix: &str)
    where
        Tensor<S>: Into<crate::diffcore::AnyTensor>,
    {
        for (k, v) in &self.tensors {
            file.insert(format!("{prefix}{k}"), v.clone());
        }
    }

    /// Reads the tensors named like `template` from `file` under `prefix`.
    pub fn read_from(
        file: &TensorFile,
        prefix: &str,
        template: &ParameterStore<S>,
    ) -> Result<Self> {
        let mut tensors = IndexMap::new();
        for (k, v) in &template.tensors {
            let t: Tensor<S> = file.get(&format!("{prefix}{k}"))?;
            if t.shape() != v.shape() {
                return Err(Error::shape("stored parameter", t.shape(), v.shape()));
            }
            tensors.insert(k.clone(), t);
        }
        Ok(ParameterStore { tensors })
    }
}

/// A [`ParameterStore`] registered on a tape.
#[derive(Clone, Debug)]
pub struct Bound<S: Scalar = f32> {
    vars: IndexMap<String, Var<S>>,
}

impl<S: Scalar> Bound<S> {
    pub fn from_vars(vars: IndexMap<String, Var<S>>) -> Self {
        Bound { vars }
    }

    pub fn var(&self, name: &str) -> Result<&Var<S>> {
        self.vars
            .get(name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Var<S>)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Gradients accumulated on each variable; zeros where none flowed.
    pub fn grads(&self) -> ParameterStore<S> {
        ParameterStore {
            tensors: self
                .vars
                .iter()
                .map(|(k, v)| {
                    (
                        k.clone(),
                        v.grad().unwrap_or_else(|| Tensor::zeros(v.shape())),
                    )
                })
                .collect(),
        }
    }
}
