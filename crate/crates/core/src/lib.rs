//! Anomaly detection by ranking.
//!
//! Nominal training points are scored by their average distance to the `k`
//! nearest neighbours, turned into resampled rank scores, quantized into
//! levels, and a kernel rank-SVM is trained to reproduce the level order.
//! A query is scored by where its ranker value falls among the training
//! values and flagged anomalous when that score is at most `alpha`.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the scalar.

pub mod dataset;
pub mod detector;
pub mod error;
pub mod eval;
pub mod knn;
pub mod pipeline;
pub mod ranker;
pub mod scalar;
pub mod select;

pub use dataset::{DataMatrix, Label, MixtureDensity};
pub use detector::{Decision, DetectorState};
pub use error::{Error, ErrorClass, Result};
pub use knn::KnnScoreTable;
pub use pipeline::{fit, Fitted, TrainConfig};
pub use ranker::{KernelConfig, PreferenceSet, RankModel};
pub use scalar::Scalar;

pub type Data = DataMatrix<f64>;
pub type Data32 = DataMatrix<f32>;
pub type Model = RankModel<f64>;
pub type Model32 = RankModel<f32>;
pub type Detector = DetectorState<f64>;
pub type Detector32 = DetectorState<f32>;
pub type ScoreTable = KnnScoreTable<f64>;
pub type ScoreTable32 = KnnScoreTable<f32>;
