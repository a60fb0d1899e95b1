//! The DiT network: patch embedding, timestep and label embeddings, the four
//! conditioning-block variants and the linear decoder.
//!
//! Activations are laid out channel-last. A batch of latents is
//! `[B, I, I, C]`, tokens are `[B, T, d]` and weights are stored `[in, out]`
//! so a linear layer is `x·W + b`.

mod config;
mod layers;
mod network;
mod params;

pub use config::{standard_configs, BlockVariant, DiTConfig, MODEL_SIZES, PATCH_SIZES};
pub use layers::{
    patchify, patchify_var, pos_embed_2d, timestep_frequencies, unpatchify, unpatchify_var,
    MAX_PERIOD,
};
pub use network::{
    dit_block, drop_labels, final_layer, forward, forward_train, label_embedding,
    timestep_embedding, Conditioning, DiT, ModelOutput,
};
pub use params::{init_parameters, Bound, ParameterStore, FREQ_DIM};
