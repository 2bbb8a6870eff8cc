//! Entire regularization path of the linear twin multi-class SVM
//! (one-versus-one-versus-rest).
//!
//! Each ordered class pair `(i, j)` gives a triple of sample blocks: class
//! `i` (own class of the first hyperplane), class `j` and the rest. Each of
//! the two sub-problems is a QP in `λ = 1/c`. Its multipliers are piecewise
//! linear in `λ`, so [`path::trace_path`] follows them breakpoint by
//! breakpoint instead of solving a QP per grid value. [`qp`] holds the
//! fixed-`λ` solver used for initialization, the grid baseline, and as a
//! correctness oracle.

pub mod bench;
pub mod config;
pub mod dataset;
pub mod error;
pub mod multiclass;
pub mod path;
pub mod qp;
pub mod synthetic;

pub use config::Config;
pub use dataset::{Dataset, TripleView};
pub use error::{Error, Result};
pub use multiclass::{DecisionRule, MulticlassModel, PairClassifier};
pub use path::{PairCache, PartitionState, SolutionPath};
pub use qp::{QpSolution, Side};
