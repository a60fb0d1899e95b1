//! Diffusion transformers at desk scale.
//!
//! The crate covers the diffusion math ([`schedule`]), the DiT network and its
//! four conditioning variants ([`model`]), guided ancestral sampling
//! ([`sampler`]), toy-scale training ([`trainer`]), the analytical flop and
//! parameter model ([`analysis`]) and a Fréchet-distance evaluation harness
//! ([`eval`]). Everything runs on the small reverse-mode engine in
//! [`diffcore`].

pub mod analysis;
pub mod diffcore;
mod error;
pub mod eval;
pub mod model;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod trainer;

pub use diffcore::{grad_check, Tape, Tensor, Var};
pub use error::{Error, Result};
