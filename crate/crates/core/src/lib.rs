//! Core of the dual-head reasoning distillation stack.
//!
//! A small decoder-only transformer is trained with two heads over one shared
//! trunk: a classification MLP applied to the hidden state of the last input
//! token, and a language-modeling head (tied to the token embeddings) that is
//! supervised on input + rationale + label sequences during training only.
//!
//! This crate is `no_std` (with `alloc`). Everything that touches files,
//! clocks or the command line lives in the `dhrd` companion crate.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod datagen;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod real;
pub mod rng;
pub mod sampling;
pub mod sequences;
pub mod tensor;
pub mod tokenizer;
pub mod train;

pub use error::{Error, Result};
pub use real::Real;
pub use tensor::{Tape, Tensor, Var};
