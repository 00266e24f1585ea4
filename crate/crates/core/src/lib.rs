//! Hierarchical prototype learning for zero-shot recognition.
//!
//! Seen-class features are encoded by per-class visual prototypes; seen and
//! unseen prototypes, visual and semantic, are tied together through a shared
//! set of super-prototypes and consistency codes. In the transductive setting
//! the unlabelled test features take part in training through an inner
//! assignment problem whose minimizer is the prediction.
//!
//! The crate is organized as
//!
//! - [`kernels`]: Sylvester, Gram and projection kernels plus projected descent,
//! - [`model`]: datasets, hyperparameters, state and cost terms,
//! - [`solver`]: the block updates and the outer alternation,
//! - [`eval`]: per-class accuracy and the GZSL harmonic mean,
//! - [`io`]: matrix files and dataset manifests,
//! - [`synth`]: seeded synthetic instances with known ground truth.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod eval;
pub mod io;
pub mod kernels;
pub mod model;
pub mod solver;
pub mod synth;

pub use error::{HplError, Result};
pub use kernels::Matrix;
pub use model::{
    Assignment, FitHistory, HyperParams, InitKind, LabeledFeatureSet, Mode, ModelState, TruthSpace,
    UnlabeledFeatureSet,
};
pub use solver::{fit, Block, SolveReport};
