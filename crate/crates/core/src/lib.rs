//! Locally robust semiparametric estimation with Neyman-orthogonal scores
//! and two-fold cross-fitting.
//!
//! The crate is organized bottom-up:
//!
//! - [`data`], [`folds`], [`inference`], [`score`]: sample container, fitted
//!   functions, seeded splitting, intervals and estimating-equation solvers.
//! - [`learners`]: least squares, Newton logistic regression and a ReLU MLP.
//! - [`ortho`]: orthogonal-score builders for coupled, decoupled and
//!   sequential nuisance structures, plus a finite-difference checker.
//! - [`late`]: the binary-instrument estimator built on kappa weights.
//! - [`plr`], [`qte`]: partially linear regression and the robust
//!   quantile-treatment-effect estimator.
//! - [`sim`]: the synthetic instrument design and the replication engine.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod folds;
pub mod inference;
pub mod late;
pub mod learners;
pub mod ortho;
pub mod plr;
pub mod qte;
pub mod score;
pub mod sim;

pub use data::{Dataset, FunctionEstimate, Observation, SharedFn};
pub use error::{Error, Result};
pub use folds::{cross_fit, split_folds, FoldFit, FoldSplit};
pub use inference::{make_ci, EstimationResult};
pub use score::{ScoreFamily, SolveKind};
