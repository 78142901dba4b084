//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation of one forward pass; [`Tape::backward`]
//! walks it in reverse and accumulates gradients additively, so a node used
//! twice receives the sum of both contributions.

mod gradcheck;
mod matrix;
mod tape;

pub use gradcheck::{grad_check, GradCheckReport, REL_FLOOR};
pub use matrix::Matrix;
pub use tape::{Gradients, Tape, Var};
