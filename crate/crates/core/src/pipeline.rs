//! End-to-end training: rank scores, levels, pairs, optional CV, rank-SVM, detector.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::DataMatrix;
use crate::detector::{DetectorState, DEFAULT_ALPHA};
use crate::error::Result;
use crate::knn::{resampled_ranks, KnnScoreTable, DEFAULT_K, DEFAULT_ROUNDS};
use crate::ranker::{make_pairs, quantize, train_ranksvm_traced, KernelConfig, SolverOptions, SolverTrace};
use crate::scalar::Scalar;
use crate::select::{cross_validate, mean_knn_distance, CvGrid, CvResult};

pub const DEFAULT_M: usize = 3;
pub const DEFAULT_C: f64 = 1.0;
/// Default bandwidth in units of the mean K-NN distance.
pub const DEFAULT_SIGMA_SCALE: f64 = 8.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TrainConfig<T> {
    pub k: usize,
    pub m: usize,
    pub rounds: usize,
    pub max_pairs: Option<usize>,
    pub c: T,
    /// Kernel bandwidth; `None` means `DEFAULT_SIGMA_SCALE` times the mean K-NN distance.
    pub sigma: Option<T>,
    /// Select `(C, sigma)` on the standard grid instead of using `c` and `sigma`.
    pub cv: bool,
    pub alpha: T,
    pub seed: u64,
    pub solver: SolverOptions<T>,
}

impl<T: Scalar> TrainConfig<T> {
    pub fn new(seed: u64) -> Self {
        TrainConfig {
            k: DEFAULT_K,
            m: DEFAULT_M,
            rounds: DEFAULT_ROUNDS,
            max_pairs: None,
            c: T::of(DEFAULT_C),
            sigma: None,
            cv: false,
            alpha: T::of(DEFAULT_ALPHA),
            seed,
            solver: SolverOptions::default(),
        }
    }
}

/// A trained detector with the intermediate artifacts that produced it.
#[derive(Debug, Clone)]
pub struct Fitted<T> {
    pub detector: DetectorState<T>,
    pub table: KnnScoreTable<T>,
    pub levels: Vec<usize>,
    pub pairs: usize,
    /// Mean K-NN distance of the training sample.
    pub dk: T,
    pub c: T,
    pub sigma: T,
    pub cv: Option<CvResult<T>>,
    pub trace: SolverTrace<T>,
    pub train_secs: f64,
}

pub fn fit<T: Scalar>(data: &DataMatrix<T>, cfg: &TrainConfig<T>) -> Result<Fitted<T>> {
    let start = Instant::now();
    let table = resampled_ranks(data, cfg.k, cfg.rounds, cfg.seed)?;
    let dk = mean_knn_distance(data, cfg.k)?;
    let levels = quantize(table.r(), cfg.m)?;
    let prefs = make_pairs(&levels, cfg.max_pairs, cfg.seed.wrapping_add(1));

    let (c, sigma, cv) = if cfg.cv {
        let grid = CvGrid::standard(dk, cfg.seed.wrapping_add(2))?
            .with_solver(cfg.solver.clone())
            .with_max_pairs(cfg.max_pairs);
        let res = cross_validate(data, &table, cfg.m, &grid)?;
        let (c, sigma) = res.selected();
        (c, sigma, Some(res))
    } else {
        (cfg.c, cfg.sigma.unwrap_or(dk * T::of(DEFAULT_SIGMA_SCALE)), None)
    };

    let kernel = KernelConfig::rbf(sigma)?;
    let (model, trace) = train_ranksvm_traced(data, &prefs, &kernel, c, &cfg.solver)?;
    let config = serde_json::json!({
        "train": cfg,
        "resolved": { "C": c.as_f64(), "sigma": sigma.as_f64(), "dk": dk.as_f64(), "pairs": prefs.len() },
    });
    let detector = DetectorState::from_training(model, data, cfg.alpha)?.with_config(config);
    Ok(Fitted {
        detector,
        table,
        levels,
        pairs: prefs.len(),
        dk,
        c,
        sigma,
        cv,
        trace,
        train_secs: start.elapsed().as_secs_f64(),
    })
}
