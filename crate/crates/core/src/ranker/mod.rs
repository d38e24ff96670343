//! Learning a kernel ranker from quantized rank scores.
//!
//! Rank scores are binned into `m` levels, every pair of points on different
//! levels becomes a preference, and a pairwise hinge-loss rank-SVM in an RBF
//! reproducing-kernel space is fit to those preferences.

mod kernel;
mod model;
mod prefs;
mod solver;

pub(crate) use solver::train_with_gram;

pub use kernel::{gram_matrix, KernelConfig};
pub use model::RankModel;
pub use prefs::{make_pairs, quantize, PreferenceSet};
pub use solver::{
    objective, train_ranksvm, train_ranksvm_traced, Init, SolverOptions, SolverTrace,
};
