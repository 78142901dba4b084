//! Explanation-supervised attention for small transformer NLI classifiers.
//!
//! Human explanations (free-text sentences and highlighted words) are turned
//! into target distributions over sequence positions, and the `[CLS]`
//! attention of selected heads is pulled toward them with an auxiliary loss
//! while the model trains on the usual cross-entropy objective. Around that
//! core sit the experiment tools: head selection, λ sweeps, shuffled-target
//! controls, token-level rationale scoring, attention analyses and paired
//! significance tests.
//!
//! The numeric core ([`autodiff`], [`encoder`], the losses in [`supervise`])
//! is generic over [`Scalar`]; the aliases below fix it to `f64`, which is
//! what training and the CLI use.

pub mod analyze;
pub mod autodiff;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod encoder;
mod error;
pub mod evalstats;
pub mod explain;
pub mod io;
pub mod rationale;
mod scalar;
pub mod supervise;
pub mod synth;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix = autodiff::Matrix<f64>;
pub type Tape = autodiff::Tape<f64>;
pub type Params = encoder::EncoderParams<f64>;
pub type Params32 = encoder::EncoderParams<f32>;
