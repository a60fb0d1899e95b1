use rand::Rng;

use crate::diffcore::{Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::layers::{patchify_var, pos_embed_2d, timestep_frequencies, unpatchify_var};
use crate::model::params::{init_parameters, Bound, ParameterStore};
use crate::model::{BlockVariant, DiTConfig};

const LN_EPS: f64 = 1e-6;

/// Per-sample timestep and class embeddings, each `[B, d]`.
#[derive(Clone, Debug)]
pub struct Conditioning<S: Scalar = f32> {
    pub t_emb: Var<S>,
    pub y_emb: Var<S>,
}

impl<S: Scalar> Conditioning<S> {
    fn check(&self, batch: usize, d: usize) -> Result<()> {
        for (what, v) in [
            ("timestep embedding", &self.t_emb),
            ("label embedding", &self.y_emb),
        ] {
            if v.shape() != [batch, d] {
                return Err(Error::Contract(format!(
                    "{what} has shape {:?}, expected [{batch}, {d}]",
                    v.shape()
                )));
            }
        }
        Ok(())
    }

    /// `t + c`, the input of the adaptive-norm regressors.
    fn summed(&self) -> Result<Var<S>> {
        self.t_emb.add(&self.y_emb)
    }

    /// `[B, 2, d]` sequence `[t, c]`.
    fn sequence(&self) -> Result<Var<S>> {
        let shape = self.t_emb.shape();
        let (b, d) = (shape[0], shape[1]);
        Var::concat(
            &[
                self.t_emb.reshape(&[b, 1, d])?,
                self.y_emb.reshape(&[b, 1, d])?,
            ],
            1,
        )
    }
}

fn linear<S: Scalar>(p: &Bound<S>, name: &str, x: &Var<S>) -> Result<Var<S>> {
    x.matmul(p.var(&format!("{name}.weight"))?)?
        .add(p.var(&format!("{name}.bias"))?)
}

fn affine_norm<S: Scalar>(p: &Bound<S>, name: &str, x: &Var<S>) -> Result<Var<S>> {
    x.layer_norm(LN_EPS)
        .mul(p.var(&format!("{name}.weight"))?)?
        .add(p.var(&format!("{name}.bias"))?)
}

/// `x·(1 + scale) + shift` with per-sample `[B, 1, d]` modulation.
fn modulate<S: Scalar>(x: &Var<S>, shift: &Var<S>, scale: &Var<S>) -> Result<Var<S>> {
    x.mul(&scale.add_scalar(1.0))?.add(shift)
}

/// `[B, T, d]` → `[B, heads, T, d/heads]`.
fn split_heads<S: Scalar>(x: &Var<S>, heads: usize) -> Result<Var<S>> {
    let s = x.shape();
    x.reshape(&[s[0], s[1], heads, s[2] / heads])?
        .permute(&[0, 2, 1, 3])
}

/// Softmax attention weights `[B, heads, Tq, Tk]` scaled by 1/√(d/heads).
fn attention_weights<S: Scalar>(q: &Var<S>, k: &Var<S>, heads: usize) -> Result<Var<S>> {
    let d = q.shape()[2];
    let scale = 1.0 / ((d / heads) as f64).sqrt();
    let (q, k) = (split_heads(q, heads)?, split_heads(k, heads)?);
    Ok(q.matmul(&k.transpose_last()?)?
        .scale(scale)
        .softmax_lastdim())
}

/// Scaled dot-product attention over already-projected `q`, `k`, `v`.
fn attend<S: Scalar>(q: &Var<S>, k: &Var<S>, v: &Var<S>, heads: usize) -> Result<Var<S>> {
    let s = q.shape();
    let (b, tq, d) = (s[0], s[1], s[2]);
    let weights = attention_weights(q, k, heads)?;
    weights
        .matmul(&split_heads(v, heads)?)?
        .permute(&[0, 2, 1, 3])?
        .reshape(&[b, tq, d])
}

fn self_attention<S: Scalar>(
    p: &Bound<S>,
    prefix: &str,
    x: &Var<S>,
    heads: usize,
) -> Result<Var<S>> {
    let d = x.shape()[2];
    let qkv = linear(p, &format!("{prefix}.qkv"), x)?.split(2, &[d, d, d])?;
    let out = attend(&qkv[0], &qkv[1], &qkv[2], heads)?;
    linear(p, &format!("{prefix}.proj"), &out)
}

fn cross_attention<S: Scalar>(
    p: &Bound<S>,
    prefix: &str,
    x: &Var<S>,
    cond: &Var<S>,
    heads: usize,
) -> Result<Var<S>> {
    let d = x.shape()[2];
    let q = linear(p, &format!("{prefix}.q"), x)?;
    let kv = linear(p, &format!("{prefix}.kv"), cond)?.split(2, &[d, d])?;
    let out = attend(&q, &kv[0], &kv[1], heads)?;
    linear(p, &format!("{prefix}.proj"), &out)
}

fn mlp<S: Scalar>(p: &Bound<S>, prefix: &str, x: &Var<S>) -> Result<Var<S>> {
    let h = linear(p, &format!("{prefix}.fc1"), x)?.gelu_tanh();
    linear(p, &format!("{prefix}.fc2"), &h)
}

/// Splits the `[B, k·d]` regressor output into `k` chunks of shape `[B, 1, d]`.
fn modulation<S: Scalar>(
    p: &Bound<S>,
    name: &str,
    cond: &Var<S>,
    chunks: usize,
) -> Result<Vec<Var<S>>> {
    let out = linear(p, name, &cond.silu())?;
    let s = out.shape();
    let d = s[1] / chunks;
    out.reshape(&[s[0], 1, s[1]])?.split(2, &vec![d; chunks])
}

/// One transformer block of the configured variant, `[B, T, d]` → `[B, T, d]`.
pub fn dit_block<S: Scalar>(
    params: &Bound<S>,
    config: &DiTConfig,
    index: usize,
    x: &Var<S>,
    cond: &Conditioning<S>,
) -> Result<Var<S>> {
    let shape = x.shape();
    if shape.len() != 3 || shape[2] != config.hidden {
        return Err(Error::shape("dit_block", &shape, &[0, 0, config.hidden]));
    }
    cond.check(shape[0], config.hidden)?;
    let b = format!("blocks.{index}");
    let heads = config.heads;
    let attn = format!("{b}.attn");
    let fc = format!("{b}.mlp");
    match config.variant {
        BlockVariant::InContext => {
            let x = x.add(&self_attention(
                params,
                &attn,
                &affine_norm(params, &format!("{b}.norm1"), x)?,
                heads,
            )?)?;
            x.add(&mlp(
                params,
                &fc,
                &affine_norm(params, &format!("{b}.norm2"), &x)?,
            )?)
        }
        BlockVariant::CrossAttention => {
            let x = x.add(&self_attention(
                params,
                &attn,
                &affine_norm(params, &format!("{b}.norm1"), x)?,
                heads,
            )?)?;
            let seq = affine_norm(params, &format!("{b}.cond_norm"), &cond.sequence()?)?;
            let h = affine_norm(params, &format!("{b}.norm_cross"), &x)?;
            let x = x.add(&cross_attention(
                params,
                &format!("{b}.cross_attn"),
                &h,
                &seq,
                heads,
            )?)?;
            x.add(&mlp(
                params,
                &fc,
                &affine_norm(params, &format!("{b}.norm2"), &x)?,
            )?)
        }
        BlockVariant::AdaLN => {
            let m = modulation(params, &format!("{b}.adaLN_modulation"), &cond.summed()?, 4)?;
            let h = modulate(&x.layer_norm(LN_EPS), &m[0], &m[1])?;
            let x = x.add(&self_attention(params, &attn, &h, heads)?)?;
            let h = modulate(&x.layer_norm(LN_EPS), &m[2], &m[3])?;
            x.add(&mlp(params, &fc, &h)?)
        }
        BlockVariant::AdaLNZero => {
            let m = modulation(params, &format!("{b}.adaLN_modulation"), &cond.summed()?, 6)?;
            let h = modulate(&x.layer_norm(LN_EPS), &m[0], &m[1])?;
            let x = x.add(&self_attention(params, &attn, &h, heads)?.mul(&m[2])?)?;
            let h = modulate(&x.layer_norm(LN_EPS), &m[3], &m[4])?;
            x.add(&mlp(params, &fc, &h)?.mul(&m[5])?)
        }
    }
}

/// Final norm and linear decoder: `[B, T, d]` → `[B, I, I, 2C]`.
pub fn final_layer<S: Scalar>(
    params: &Bound<S>,
    config: &DiTConfig,
    x: &Var<S>,
    cond: &Conditioning<S>,
) -> Result<Var<S>> {
    let h = if config.variant.is_adaptive() {
        let m = modulation(params, "final_layer.adaLN_modulation", &cond.summed()?, 2)?;
        modulate(&x.layer_norm(LN_EPS), &m[0], &m[1])?
    } else {
        affine_norm(params, "final_layer.norm_final", x)?
    };
    let out = linear(params, "final_layer.linear", &h)?;
    unpatchify_var(&out, config.patch, config.input, 2 * config.channels)
}

/// Timestep MLP on sinusoidal features: `t` → `[B, d]`.
pub fn timestep_embedding<S: Scalar>(params: &Bound<S>, t: &[usize]) -> Result<Var<S>> {
    let tape = params.var("t_embedder.mlp.0.weight")?.tape().clone();
    let freqs = tape.constant(timestep_frequencies(t)?);
    let h = linear(params, "t_embedder.mlp.0", &freqs)?.silu();
    linear(params, "t_embedder.mlp.2", &h)
}

/// Replaces each label by the null label with probability `prob`.
pub fn drop_labels(labels: &[usize], prob: f64, null: usize, rng: &mut impl Rng) -> Vec<usize> {
    labels
        .iter()
        .map(|&c| {
            if prob > 0.0 && rng.random_bool(prob) {
                null
            } else {
                c
            }
        })
        .collect()
}

/// Rows of the label table, `[B, d]`. Label `num_classes` is the null
/// embedding. Passing an `rng` enables training-time label dropout.
pub fn label_embedding<S: Scalar, R: Rng>(
    params: &Bound<S>,
    config: &DiTConfig,
    labels: &[usize],
    dropout: Option<&mut R>,
) -> Result<Var<S>> {
    let labels = match dropout {
        Some(rng) => drop_labels(labels, config.class_dropout_prob, config.null_label(), rng),
        None => labels.to_vec(),
    };
    params.var("y_embedder.embedding_table")?.embedding(&labels)
}

/// Network outputs, each `[B, I, I, C]`: predicted noise and the raw
/// variance-interpolation channel.
#[derive(Clone, Debug)]
pub struct ModelOutput<S: Scalar = f32> {
    pub eps: Var<S>,
    pub v: Var<S>,
}

/// Full network on a batch `z: [B, I, I, C]` with per-sample timesteps and
/// labels (label `num_classes` selects the null embedding).
pub fn forward<S: Scalar>(
    params: &Bound<S>,
    config: &DiTConfig,
    z: &Var<S>,
    t: &[usize],
    labels: &[usize],
) -> Result<ModelOutput<S>> {
    let tape = z.tape();
    let y_emb = params
        .var("y_embedder.embedding_table")?
        .embedding(labels)?;
    forward_with_label_embedding(params, config, z, t, y_emb, tape)
}

/// [`forward`] with label dropout drawn from `rng`.
pub fn forward_train<S: Scalar>(
    params: &Bound<S>,
    config: &DiTConfig,
    z: &Var<S>,
    t: &[usize],
    labels: &[usize],
    rng: &mut impl Rng,
) -> Result<ModelOutput<S>> {
    let y_emb = label_embedding(params, config, labels, Some(rng))?;
    forward_with_label_embedding(params, config, z, t, y_emb, z.tape())
}

fn forward_with_label_embedding<S: Scalar>(
    params: &Bound<S>,
    config: &DiTConfig,
    z: &Var<S>,
    t: &[usize],
    y_emb: Var<S>,
    tape: &Tape<S>,
) -> Result<ModelOutput<S>> {
    let shape = z.shape();
    let expected = [
        shape.first().copied().unwrap_or(0),
        config.input,
        config.input,
        config.channels,
    ];
    if shape != expected {
        return Err(Error::shape("forward input", &shape, &expected));
    }
    let b = shape[0];
    if t.len() != b || y_emb.shape()[0] != b {
        return Err(Error::Contract(format!(
            "batch of {b} latents needs {b} timesteps and labels, got {} and {}",
            t.len(),
            y_emb.shape()[0]
        )));
    }
    let (d, n_tok) = (config.hidden, config.tokens());
    let pos = tape.constant(pos_embed_2d(config.grid(), d)?);
    let mut x = linear(params, "x_embedder.proj", &patchify_var(z, config.patch)?)?.add(&pos)?;
    let cond = Conditioning {
        t_emb: timestep_embedding(params, t)?,
        y_emb,
    };
    if config.variant == BlockVariant::InContext {
        x = Var::concat(
            &[
                x,
                cond.t_emb.reshape(&[b, 1, d])?,
                cond.y_emb.reshape(&[b, 1, d])?,
            ],
            1,
        )?;
    }
    for i in 0..config.depth {
        x = dit_block(params, config, i, &x, &cond)?;
    }
    if config.variant == BlockVariant::InContext {
        x = x.narrow(1, 0, n_tok)?;
    }
    let out = final_layer(params, config, &x, &cond)?;
    let c = config.channels;
    let parts = out.split(3, &[c, c])?;
    Ok(ModelOutput {
        eps: parts[0].clone(),
        v: parts[1].clone(),
    })
}

/// A configuration together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct DiT<S: Scalar = f32> {
    pub config: DiTConfig,
    pub params: ParameterStore<S>,
}

impl<S: Scalar> DiT<S> {
    pub fn new(config: DiTConfig, seed: u64) -> Result<Self> {
        let params = init_parameters(&config, seed)?;
        Ok(DiT { config, params })
    }

    /// Inference-mode forward on plain tensors: `(ε̂, v)`.
    pub fn predict(
        &self,
        z: &Tensor<S>,
        t: &[usize],
        labels: &[usize],
    ) -> Result<(Tensor<S>, Tensor<S>)> {
        let tape = Tape::new();
        let bound = self.params.bind(&tape, false);
        let out = forward(&bound, &self.config, &tape.constant(z.clone()), t, labels)?;
        Ok((out.eps.to_tensor(), out.v.to_tensor()))
    }
}
