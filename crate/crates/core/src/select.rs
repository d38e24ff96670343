//! Choosing `(C, sigma)` by k-fold cross-validation on held-out preference pairs.

use std::io::Write;

use rayon::prelude::*;

use crate::dataset::{split_indices, DataMatrix};
use crate::detector::evaluate_all;
use crate::error::{Error, Result};
use crate::knn::{knn_g_values, KnnScoreTable};
use crate::ranker::{gram_matrix, make_pairs, quantize, train_with_gram, KernelConfig, PreferenceSet, RankModel, SolverOptions};
use crate::scalar::{cmp, Scalar};

/// `0.001, 0.003, 0.01, ..., 300, 1000`.
pub const STANDARD_C_VALUES: [f64; 13] = [
    0.001, 0.003, 0.01, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0, 30.0, 100.0, 300.0, 1000.0,
];
/// Bandwidths are `2^i` times the mean K-NN distance for these `i`.
pub const STANDARD_SIGMA_EXPONENTS: std::ops::RangeInclusive<i32> = -10..=10;
pub const DEFAULT_FOLDS: usize = 4;

/// Mean over all points of the average distance to their `k` nearest other points.
pub fn mean_knn_distance<T: Scalar>(data: &DataMatrix<T>, k: usize) -> Result<T> {
    if data.n() <= k {
        return Err(Error::InsufficientData(format!(
            "mean {k}-NN distance needs more than {k} points, got {}",
            data.n()
        )));
    }
    let g = knn_g_values(data, k)?;
    Ok(g.iter().copied().sum::<T>() / T::of_usize(g.len()))
}

/// Number of pairs `(i, j)` with `scores[i] < scores[j]`, i.e. ranked backwards.
pub fn wpdl_scores<T: Scalar>(scores: &[T], prefs: &PreferenceSet) -> usize {
    prefs
        .pairs()
        .iter()
        .filter(|&&(i, j)| scores[i] < scores[j])
        .count()
}

/// Pairwise disagreement of `model` on `prefs` over the rows of `data`.
pub fn wpdl<T: Scalar>(model: &RankModel<T>, data: &DataMatrix<T>, prefs: &PreferenceSet) -> Result<usize> {
    if prefs.levels().len() != data.n() {
        return Err(Error::InvalidParameter(format!(
            "preferences cover {} items but data has {} rows",
            prefs.levels().len(),
            data.n()
        )));
    }
    Ok(wpdl_scores(&evaluate_all(model, data)?, prefs))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvGrid<T> {
    pub c_values: Vec<T>,
    pub sigma_values: Vec<T>,
    pub folds: usize,
    pub seed: u64,
    pub solver: SolverOptions<T>,
    /// Optional cap on training pairs per fold.
    pub max_pairs: Option<usize>,
}

impl<T: Scalar> CvGrid<T> {
    pub fn new(c_values: Vec<T>, sigma_values: Vec<T>, folds: usize, seed: u64) -> Result<Self> {
        if c_values.is_empty() || sigma_values.is_empty() {
            return Err(Error::InvalidParameter("grid needs at least one C and one sigma".into()));
        }
        if c_values.iter().chain(&sigma_values).any(|v| !(*v > T::zero() && v.is_finite())) {
            return Err(Error::InvalidParameter("grid values must be positive and finite".into()));
        }
        if folds < 2 {
            return Err(Error::InvalidParameter(format!("need at least 2 folds, got {folds}")));
        }
        Ok(CvGrid {
            c_values,
            sigma_values,
            folds,
            seed,
            solver: SolverOptions::default(),
            max_pairs: None,
        })
    }

    /// The 13 x 21 grid of [`STANDARD_C_VALUES`] and `2^i * dk` bandwidths, 4 folds.
    pub fn standard(dk: T, seed: u64) -> Result<Self> {
        if !(dk > T::zero() && dk.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "mean K-NN distance must be positive, got {dk}"
            )));
        }
        let c = STANDARD_C_VALUES.iter().map(|&v| T::of(v)).collect();
        let sigma = STANDARD_SIGMA_EXPONENTS
            .map(|i| dk * T::of(2f64.powi(i)))
            .collect();
        Self::new(c, sigma, DEFAULT_FOLDS, seed)
    }

    pub fn with_solver(mut self, solver: SolverOptions<T>) -> Self {
        self.solver = solver;
        self
    }

    pub fn with_max_pairs(mut self, cap: Option<usize>) -> Self {
        self.max_pairs = cap;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvCell<T> {
    pub c: T,
    pub sigma: T,
    /// Held-out disagreement per fold; `None` when training failed or gave an empty model.
    pub fold_losses: Vec<Option<usize>>,
    /// Held-out pair count per fold.
    pub fold_pairs: Vec<usize>,
    /// Mean fold loss; `None` unless every fold produced a model.
    pub mean_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult<T> {
    /// Cells in grid order: C-major, then sigma.
    pub cells: Vec<CvCell<T>>,
    pub best: usize,
    /// Messages from cells that failed to train.
    pub diagnostics: Vec<String>,
}

impl<T: Scalar> CvResult<T> {
    pub fn best_cell(&self) -> &CvCell<T> {
        &self.cells[self.best]
    }

    /// Selected `(C, sigma)`.
    pub fn selected(&self) -> (T, T) {
        let cell = self.best_cell();
        (cell.c, cell.sigma)
    }

    /// CSV `C,sigma,fold,loss` with the selection as a leading comment; failed folds read `NA`.
    pub fn write_csv<W: Write>(&self, out: W, comments: &[String]) -> Result<()> {
        let mut out = std::io::BufWriter::new(out);
        let io = |e| Error::io("<cv report>", e);
        for c in comments {
            writeln!(out, "# {c}").map_err(io)?;
        }
        let best = self.best_cell();
        writeln!(
            out,
            "# selected C={} sigma={} mean_loss={}",
            best.c,
            best.sigma,
            best.mean_loss.unwrap_or(f64::NAN)
        )
        .map_err(io)?;
        writeln!(out, "C,sigma,fold,loss").map_err(io)?;
        for cell in &self.cells {
            for (fold, loss) in cell.fold_losses.iter().enumerate() {
                match loss {
                    Some(l) => writeln!(out, "{},{},{fold},{l}", cell.c, cell.sigma),
                    None => writeln!(out, "{},{},{fold},NA", cell.c, cell.sigma),
                }
                .map_err(io)?;
            }
        }
        out.flush().map_err(io)
    }
}

/// Cross-validates the rank-SVM step over `grid`.
///
/// Points (not pairs) are split into folds. Levels come from the precomputed
/// rank scores; training pairs join two training points, held-out pairs two
/// held-out points, and pairs across the split are dropped.
pub fn cross_validate<T: Scalar>(
    data: &DataMatrix<T>,
    table: &KnnScoreTable<T>,
    m: usize,
    grid: &CvGrid<T>,
) -> Result<CvResult<T>> {
    if table.len() != data.n() {
        return Err(Error::InvalidParameter(format!(
            "score table has {} rows but data has {}",
            table.len(),
            data.n()
        )));
    }
    if data.n() < grid.folds {
        return Err(Error::InsufficientData(format!(
            "{} points cannot fill {} folds",
            data.n(),
            grid.folds
        )));
    }
    let levels = quantize(table.r(), m)?;
    let fractions = vec![1.0 / grid.folds as f64; grid.folds];
    let folds = split_indices(data.n(), &fractions, grid.seed)?;

    struct FoldData<T> {
        train: DataMatrix<T>,
        train_prefs: PreferenceSet,
        held: DataMatrix<T>,
        held_prefs: PreferenceSet,
    }
    let fold_data: Vec<FoldData<T>> = folds
        .iter()
        .enumerate()
        .map(|(f, held_idx)| {
            let mut train_idx: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|&(g, _)| g != f)
                .flat_map(|(_, p)| p.iter().copied())
                .collect();
            train_idx.sort_unstable();
            let mut held_idx = held_idx.clone();
            held_idx.sort_unstable();
            let pick = |idx: &[usize]| idx.iter().map(|&i| levels[i]).collect::<Vec<_>>();
            Ok(FoldData {
                train: data.select(&train_idx)?,
                train_prefs: make_pairs(&pick(&train_idx), grid.max_pairs, grid.seed ^ (f as u64 + 1)),
                held: data.select(&held_idx)?,
                held_prefs: make_pairs(&pick(&held_idx), None, 0),
            })
        })
        .collect::<Result<_>>()?;

    let nc = grid.c_values.len();
    let ns = grid.sigma_values.len();
    let jobs: Vec<(usize, usize)> = (0..grid.folds)
        .flat_map(|f| (0..ns).map(move |s| (f, s)))
        .collect();
    // Each job shares one Gram matrix across every C.
    let outcomes: Vec<Vec<std::result::Result<usize, String>>> = jobs
        .par_iter()
        .map(|&(f, s)| {
            let fd = &fold_data[f];
            let sigma = grid.sigma_values[s];
            let kernel = match KernelConfig::rbf(sigma) {
                Ok(k) => k,
                Err(e) => return vec![Err(e.to_string()); nc],
            };
            let gram = gram_matrix(&fd.train, &kernel);
            grid.c_values
                .iter()
                .map(|&c| {
                    let (model, _) = train_with_gram(&fd.train, &gram, &fd.train_prefs, &kernel, c, &grid.solver)
                        .map_err(|e| format!("fold {f}, C={c}, sigma={sigma}: {e}"))?;
                    if model.support_count() == 0 {
                        return Err(format!("fold {f}, C={c}, sigma={sigma}: empty model"));
                    }
                    wpdl(&model, &fd.held, &fd.held_prefs).map_err(|e| e.to_string())
                })
                .collect()
        })
        .collect();

    let mut cells = Vec::with_capacity(nc * ns);
    let mut diagnostics = Vec::new();
    for ci in 0..nc {
        for si in 0..ns {
            let mut fold_losses = Vec::with_capacity(grid.folds);
            for f in 0..grid.folds {
                match &outcomes[f * ns + si][ci] {
                    Ok(l) => fold_losses.push(Some(*l)),
                    Err(msg) => {
                        diagnostics.push(msg.clone());
                        fold_losses.push(None);
                    }
                }
            }
            let mean_loss = fold_losses
                .iter()
                .map(|l| l.map(|v| v as f64))
                .sum::<Option<f64>>()
                .map(|total| total / grid.folds as f64);
            cells.push(CvCell {
                c: grid.c_values[ci],
                sigma: grid.sigma_values[si],
                fold_losses,
                fold_pairs: fold_data.iter().map(|fd| fd.held_prefs.len()).collect(),
                mean_loss,
            });
        }
    }

    let best = select_best(&cells);
    let Some(best) = best else {
        let shown: Vec<&str> = diagnostics.iter().take(5).map(String::as_str).collect();
        return Err(Error::Numerical(format!(
            "every grid cell failed to train ({} failures), e.g. {}",
            diagnostics.len(),
            shown.join("; ")
        )));
    };
    Ok(CvResult {
        cells,
        best,
        diagnostics,
    })
}

/// Lowest mean loss; ties go to the smaller C, then the smaller sigma, then grid order.
fn select_best<T: Scalar>(cells: &[CvCell<T>]) -> Option<usize> {
    let mut order: Vec<usize> = (0..cells.len()).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (&cells[a], &cells[b]);
        cmp(&x.c, &y.c).then(cmp(&x.sigma, &y.sigma))
    });
    let mut best: Option<(usize, f64)> = None;
    for i in order {
        if let Some(loss) = cells[i].mean_loss {
            if best.is_none_or(|(_, b)| loss < b) {
                best = Some((i, loss));
            }
        }
    }
    best.map(|(i, _)| i)
}
