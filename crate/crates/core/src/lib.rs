//! Three-phase sequential recommendation with kernel-based text/ID alignment.
//!
//! Layers, bottom up:
//! - [`tensor`], [`tape`], [`param`], [`optim`], [`gradcheck`]: a small
//!   reverse-mode autodiff engine with AdamW.
//! - [`kernels`]: kernels, Gram matrices, MMD² estimators, InfoNCE and a
//!   permutation two-sample test.
//! - [`data`]: interaction-log parsing, the leave-last-out split, the text
//!   embedding file format and a synthetic world generator.
//! - [`model`]: embedding tables, attention/GRU encoders, three experts and
//!   the frequency-aware gate.
//! - [`pipeline`]: pre-train, align and fine-tune phases plus checkpoints.
//! - [`eval`]: whole-catalog ranking metrics, Kendall's tau diagnostics and
//!   pair-distance analysis.
//! - [`config`]: the flat key-value run configuration used by the CLI.

// Negated float comparisons are deliberate: they treat NaN as failing the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod kernels;
pub mod model;
pub mod optim;
pub mod param;
pub mod pipeline;
pub mod seed;
pub mod tape;
pub mod tensor;

pub use error::{PadError, Result};
pub use param::{ParamId, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
