//! Immediate-reward reinforcement learning for code completion.
//!
//! The crate is `no_std` (with `alloc`): a small reverse-mode autodiff tape,
//! a decoder-only transformer used as both completion policy and quality
//! critic, sequence similarity metrics, and the supervised, critic and
//! policy-gradient training loops. File formats and the command line live in
//! the `ircoco` companion crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod corpus;
pub mod critic;
pub mod drl;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod kernels;
pub mod lm;
pub mod metrics;
pub mod optim;
pub mod rng;
pub mod sft;
pub mod synthetic;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
