//! Sleep-stage classification from raw EEG epochs.
//!
//! The crate is `no_std` + `alloc` so the numerical pieces can run anywhere a
//! heap exists. Parsing files, writing reports and the command line live in
//! the `neurosleep` companion crate.
//!
//! Layout:
//! - [`tensor`] and [`ops`]: a small dense tensor with hand-written forward
//!   and backward passes for every layer the model needs, plus a
//!   finite-difference checker in [`gradcheck`].
//! - [`model`]: the spatial filter, multi-scale temporal convolutions,
//!   post-concatenation convolution, transformer encoder and classifier head.
//! - [`loss`], [`metrics`]: class-weighted cross-entropy and evaluation scores.
//! - [`signal`]: band-pass, resampling, scaling, epoching and sequence packing.
//! - [`synth`]: deterministic synthetic EEG with class-specific spectra.
//! - [`train`]: Adam with decoupled weight decay, subject-wise folds and the
//!   training loop.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod math;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod rng;
pub mod signal;
pub mod stage;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use stage::Stage;
pub use tensor::Tensor;
