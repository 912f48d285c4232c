//! Latent-truth linear-chain CRF for learning sequence labelers from several
//! noisy annotation sources.
//!
//! The model scores a latent truth sequence `t` jointly with every source's
//! observed labels: per-token emission scores from a pluggable backbone, a
//! `(K+1)×K` transition matrix whose last row is the BEGIN state, and one
//! `K×K` matrix per weak source. Training maximises the marginal likelihood of
//! the observed weak labels, computed exactly with two forward recursions
//! (one with the weak labels clamped, one summing over every completion of the
//! observed cells). Decoding ignores the source matrices and runs Viterbi over
//! emissions and transitions.
//!
//! This crate is `no_std` (with `alloc`). File formats, threading and the CLI
//! live in the `hidden-crf` companion crate.

#![no_std]

extern crate alloc;

pub mod baselines;
pub mod chain;
pub mod dataset;
pub mod emission;
mod error;
pub mod eval;
pub mod labels;
pub mod math;
pub mod optim;
pub mod sources;
pub mod synth;
pub mod trainer;

pub use chain::{ChainGrad, ChainScores, CrfTransition, WeakSourceMatrices};
pub use dataset::{Sentence, WeakDataset};
pub use emission::{Backbone, BackboneConfig, BackboneGrads, FeatureConfig, MlpConfig};
pub use error::{Error, Result};
pub use labels::{LabelSpace, Scheme, Span};
pub use math::Matrix;
pub use trainer::{ModelParams, SentenceMap, Sequential, TrainConfig};
