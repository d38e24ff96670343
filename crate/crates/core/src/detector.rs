//! Test-stage scoring against the sorted training ranker values.
//!
//! The trained ranker puts deep (high-density) points high and outliers
//! low, so the score of a query is the share of training values strictly
//! below its own value: `0` is the most anomalous, `1` the deepest.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::DataMatrix;
use crate::error::{Error, Result};
use crate::ranker::{KernelConfig, RankModel};
use crate::scalar::{cmp, Scalar};

pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_GRID_RESOLUTION: usize = 200;

const FORMAT: &str = "rankad-detector";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Nominal,
    Anomaly,
}

/// Trained ranker plus the ascending ranker values of its training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorState<T> {
    model: RankModel<T>,
    sorted: Vec<T>,
    alpha: T,
    config: serde_json::Value,
}

fn check_alpha<T: Scalar>(alpha: T, open: bool) -> Result<()> {
    let ok = if open {
        alpha > T::zero() && alpha < T::one()
    } else {
        alpha >= T::zero() && alpha <= T::one()
    };
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "alpha must lie in {} 1{}, got {alpha}",
            if open { "(0," } else { "[0," },
            if open { ")" } else { "]" }
        )))
    }
}

impl<T: Scalar> DetectorState<T> {
    /// `train_scores` are the ranker values of the training points, in any order.
    pub fn new(model: RankModel<T>, mut train_scores: Vec<T>, alpha: T) -> Result<Self> {
        if train_scores.is_empty() {
            return Err(Error::InsufficientData("no training scores".into()));
        }
        if train_scores.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite training score".into()));
        }
        check_alpha(alpha, true)?;
        train_scores.sort_unstable_by(cmp);
        Ok(DetectorState {
            model,
            sorted: train_scores,
            alpha,
            config: serde_json::Value::Null,
        })
    }

    /// Evaluates the ranker on every training row.
    pub fn from_training(model: RankModel<T>, train: &DataMatrix<T>, alpha: T) -> Result<Self> {
        let scores = evaluate_all(&model, train)?;
        Self::new(model, scores, alpha)
    }

    /// Attaches the run configuration that produced this state; it is saved alongside.
    pub fn with_config(mut self, config: serde_json::Value) -> Self {
        self.config = config;
        self
    }

    pub fn model(&self) -> &RankModel<T> {
        &self.model
    }

    pub fn train_scores(&self) -> &[T] {
        &self.sorted
    }

    pub fn n(&self) -> usize {
        self.sorted.len()
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    pub fn config(&self) -> &serde_json::Value {
        &self.config
    }

    /// Score of a ranker value: share of training values strictly below it.
    pub fn score_value(&self, g: T) -> T {
        let below = self.sorted.partition_point(|&s| s < g);
        T::of_usize(below) / T::of_usize(self.n())
    }

    pub fn score(&self, query: &[T]) -> Result<T> {
        Ok(self.score_value(self.model.evaluate(query)?))
    }

    /// Same count as [`score`](Self::score) by a full scan over the training values.
    pub fn score_linear(&self, query: &[T]) -> Result<T> {
        let g = self.model.evaluate(query)?;
        let below = self.sorted.iter().filter(|&&s| s < g).count();
        Ok(T::of_usize(below) / T::of_usize(self.n()))
    }

    /// Scores every row; rows are processed in parallel.
    pub fn score_all(&self, data: &DataMatrix<T>) -> Result<Vec<T>> {
        check_dim(self.model.dim(), data.d())?;
        Ok((0..data.n())
            .into_par_iter()
            .map(|i| self.score_value(self.model.evaluate_unchecked(data.row(i))))
            .collect())
    }

    /// Anomaly iff `score <= alpha`; the score is returned for thresholding at other levels.
    pub fn decide(&self, query: &[T], alpha: T) -> Result<(Decision, T)> {
        check_alpha(alpha, false)?;
        let s = self.score(query)?;
        Ok((decide_score(s, alpha), s))
    }

    /// Scores a regular grid over a 2-D box for contour export.
    pub fn decision_grid(&self, bounds: GridBounds<T>, resolution: usize, alphas: &[T]) -> Result<DecisionGrid<T>> {
        if self.model.dim() != 2 {
            return Err(Error::InvalidParameter(format!(
                "decision grids are exported for 2-D models only; this model has d = {}",
                self.model.dim()
            )));
        }
        if resolution < 2 {
            return Err(Error::InvalidParameter(format!(
                "grid resolution must be >= 2, got {resolution}"
            )));
        }
        bounds.validate()?;
        for &a in alphas {
            check_alpha(a, false)?;
        }
        let axis = |lo: T, hi: T| -> Vec<T> {
            let step = (hi - lo) / T::of_usize(resolution - 1);
            (0..resolution)
                .map(|i| if i + 1 == resolution { hi } else { lo + step * T::of_usize(i) })
                .collect()
        };
        let xs = axis(bounds.x.0, bounds.x.1);
        let ys = axis(bounds.y.0, bounds.y.1);
        let values: Vec<T> = (0..resolution * resolution)
            .into_par_iter()
            .map(|cell| {
                let (iy, ix) = (cell / resolution, cell % resolution);
                self.score_value(self.model.evaluate_unchecked(&[xs[ix], ys[iy]]))
            })
            .collect();
        let scores = Array2::from_shape_vec((resolution, resolution), values)
            .map_err(|e| Error::Numerical(e.to_string()))?;
        Ok(DecisionGrid {
            xs,
            ys,
            scores,
            alphas: alphas.to_vec(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let stored = Stored {
            format: FORMAT.into(),
            version: VERSION,
            kernel: *self.model.kernel(),
            dim: self.model.dim(),
            support_count: self.model.support_count(),
            support: self.model.support().rows().into_iter().map(|r| r.to_vec()).collect(),
            coefficients: self.model.coefficients().to_vec(),
            objective: self.model.objective(),
            train_scores: self.sorted.clone(),
            alpha: self.alpha,
            config: self.config.clone(),
        };
        serde_json::to_string_pretty(&stored).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let stored: Stored<T> =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("detector file: {e}")))?;
        if stored.format != FORMAT || stored.version != VERSION {
            return Err(Error::Format(format!(
                "expected {FORMAT} version {VERSION}, found {} version {}",
                stored.format, stored.version
            )));
        }
        if stored.support.len() != stored.support_count
            || stored.support.iter().any(|r| r.len() != stored.dim)
        {
            return Err(Error::Format(format!(
                "support block is not {} x {}",
                stored.support_count, stored.dim
            )));
        }
        let kernel = KernelConfig::rbf(stored.kernel.sigma())
            .map_err(|e| Error::Format(format!("detector file: {e}")))?;
        let flat = stored.support.into_iter().flatten().collect();
        let support = Array2::from_shape_vec((stored.support_count, stored.dim), flat)
            .map_err(|e| Error::Format(e.to_string()))?;
        let model = RankModel::new(support, stored.coefficients, kernel, stored.objective)?;
        let mut state = Self::new(model, stored.train_scores, stored.alpha)?;
        state.config = stored.config;
        Ok(state)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct Stored<T> {
    format: String,
    version: u32,
    kernel: KernelConfig<T>,
    dim: usize,
    support_count: usize,
    support: Vec<Vec<T>>,
    coefficients: Vec<T>,
    objective: T,
    train_scores: Vec<T>,
    alpha: T,
    #[serde(default)]
    config: serde_json::Value,
}

pub fn decide_score<T: Scalar>(score: T, alpha: T) -> Decision {
    if score <= alpha {
        Decision::Anomaly
    } else {
        Decision::Nominal
    }
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

/// Ranker values of every row of `data`.
pub fn evaluate_all<T: Scalar>(model: &RankModel<T>, data: &DataMatrix<T>) -> Result<Vec<T>> {
    check_dim(model.dim(), data.d())?;
    Ok((0..data.n())
        .into_par_iter()
        .map(|i| model.evaluate_unchecked(data.row(i)))
        .collect())
}

/// Axis-aligned 2-D box `[x.0, x.1] x [y.0, y.1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridBounds<T> {
    pub x: (T, T),
    pub y: (T, T),
}

impl<T: Scalar> GridBounds<T> {
    fn validate(&self) -> Result<()> {
        for (lo, hi) in [self.x, self.y] {
            if !(lo < hi && lo.is_finite() && hi.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "grid bounds need lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    /// Bounding box of the data padded by `pad` times its extent on each side.
    pub fn around(data: &DataMatrix<T>, pad: T) -> Result<Self> {
        check_dim(2, data.d())?;
        let mut lo = [T::infinity(); 2];
        let mut hi = [T::neg_infinity(); 2];
        for row in data.rows() {
            for a in 0..2 {
                lo[a] = lo[a].min(row[a]);
                hi[a] = hi[a].max(row[a]);
            }
        }
        let widen = |a: usize| {
            let ext = (hi[a] - lo[a]).max(T::one());
            (lo[a] - pad * ext, hi[a] + pad * ext)
        };
        Ok(GridBounds {
            x: widen(0),
            y: widen(1),
        })
    }
}

/// Score field on a regular grid; `scores[[iy, ix]]` sits at `(xs[ix], ys[iy])`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionGrid<T> {
    pub xs: Vec<T>,
    pub ys: Vec<T>,
    pub scores: Array2<T>,
    pub alphas: Vec<T>,
}

impl<T: Scalar> DecisionGrid<T> {
    /// Cells with `score <= alpha`.
    pub fn mask(&self, alpha: T) -> Array2<bool> {
        self.scores.mapv(|s| s <= alpha)
    }

    /// CSV with columns `x,y,score` and one `mask_<alpha>` column (0/1) per level.
    pub fn write_csv<W: Write>(&self, out: W, comments: &[String]) -> Result<()> {
        let mut out = std::io::BufWriter::new(out);
        let io = |e| Error::io("<grid output>", e);
        for c in comments {
            writeln!(out, "# {c}").map_err(io)?;
        }
        let mut header = String::from("x,y,score");
        for a in &self.alphas {
            header.push_str(&format!(",mask_{a}"));
        }
        writeln!(out, "{header}").map_err(io)?;
        for (iy, &y) in self.ys.iter().enumerate() {
            for (ix, &x) in self.xs.iter().enumerate() {
                let s = self.scores[[iy, ix]];
                let mut line = format!("{x},{y},{s}");
                for &a in &self.alphas {
                    line.push_str(if s <= a { ",1" } else { ",0" });
                }
                writeln!(out, "{line}").map_err(io)?;
            }
        }
        out.flush().map_err(io)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn point_model(sigma: f64) -> RankModel<f64> {
        let support = Array2::from_shape_vec((1, 2), vec![0.0, 0.0]).unwrap();
        RankModel::new(support, vec![1.0], KernelConfig::rbf(sigma).unwrap(), 0.0).unwrap()
    }

    fn state_with_scores(scores: Vec<f64>) -> DetectorState<f64> {
        DetectorState::new(point_model(1.0), scores, 0.05).unwrap()
    }

    #[test]
    fn score_extremes_and_middle() {
        let st = state_with_scores(vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(st.score_value(0.5), 0.0);
        assert_eq!(st.score_value(5.0), 1.0);
        assert_eq!(st.score_value(2.5), 0.5);
        assert_eq!(st.score_value(2.0), 0.25);
    }

    #[test]
    fn decisions_are_inclusive() {
        assert_eq!(decide_score(0.02, 0.05), Decision::Anomaly);
        assert_eq!(decide_score(0.05, 0.05), Decision::Anomaly);
        assert_eq!(decide_score(0.5, 0.05), Decision::Nominal);
        let st = state_with_scores(vec![0.1, 0.2]);
        assert!(st.decide(&[0.0, 0.0], 1.5).is_err());
        assert_eq!(st.decide(&[0.0, 0.0], 0.5).unwrap(), (Decision::Nominal, 1.0));
        assert!(st.decide(&[0.0], 0.5).is_err());
    }

    #[test]
    fn construction_checks() {
        assert!(DetectorState::new(point_model(1.0), vec![], 0.05).is_err());
        assert!(DetectorState::new(point_model(1.0), vec![1.0], 0.0).is_err());
        assert!(DetectorState::new(point_model(1.0), vec![f64::NAN], 0.05).is_err());
    }

    #[test]
    fn grid_masks() {
        // Train scores straddle the peak so the acceptance region is a disc.
        let scores: Vec<f64> = (0..100).map(|i| (-(i as f64) / 20.0).exp()).collect();
        let st = state_with_scores(scores);
        let b = GridBounds { x: (-4.0, 4.0), y: (-4.0, 4.0) };
        let alphas = [0.0, 0.01, 0.05, 0.1];
        let grid = st.decision_grid(b, 41, &alphas).unwrap();
        let masks: Vec<_> = alphas.iter().map(|&a| grid.mask(a)).collect();
        for w in masks.windows(2) {
            assert!(w[0].iter().zip(w[1].iter()).all(|(&a, &b)| !a || b));
        }
        let exact_zero = grid.scores.mapv(|s| s == 0.0);
        assert_eq!(masks[0], exact_zero);
        let centre = (20, 20);
        for (a, m) in alphas.iter().zip(&masks).skip(1) {
            let accept = m.mapv(|v| !v);
            assert!(accept[centre], "alpha {a}");
            assert!(connected(&accept), "alpha {a}");
            assert!(connected(m), "alpha {a}");
        }
        let st3 = DetectorState::new(
            RankModel::new(
                Array2::from_shape_vec((1, 3), vec![0.0; 3]).unwrap(),
                vec![1.0],
                KernelConfig::rbf(1.0).unwrap(),
                0.0,
            )
            .unwrap(),
            vec![0.5],
            0.05,
        )
        .unwrap();
        assert!(st3.decision_grid(b, 10, &alphas).is_err());
        assert!(st.decision_grid(b, 1, &alphas).is_err());
    }

    fn connected(mask: &Array2<bool>) -> bool {
        let (h, w) = mask.dim();
        let cells: Vec<(usize, usize)> = mask.indexed_iter().filter(|(_, &v)| v).map(|(i, _)| i).collect();
        let Some(&start) = cells.first() else { return true };
        let mut seen = Array2::from_elem((h, w), false);
        let mut stack = vec![start];
        seen[start] = true;
        let mut count = 0;
        while let Some((y, x)) = stack.pop() {
            count += 1;
            let nb = [(y.wrapping_sub(1), x), (y + 1, x), (y, x.wrapping_sub(1)), (y, x + 1)];
            for (ny, nx) in nb {
                if ny < h && nx < w && mask[[ny, nx]] && !seen[[ny, nx]] {
                    seen[[ny, nx]] = true;
                    stack.push((ny, nx));
                }
            }
        }
        count == cells.len()
    }

    #[test]
    fn grid_csv_layout() {
        let st = state_with_scores(vec![0.5, 0.9]);
        let grid = st
            .decision_grid(GridBounds { x: (0.0, 1.0), y: (0.0, 1.0) }, 2, &[0.05])
            .unwrap();
        let mut buf = Vec::new();
        grid.write_csv(&mut buf, &["seed=1".into()]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# seed=1");
        assert_eq!(lines[1], "x,y,score,mask_0.05");
        assert_eq!(lines.len(), 6);
        assert!(lines[2].starts_with("0,0,"));
    }

    #[test]
    fn json_round_trip_is_exact() {
        let support = Array2::from_shape_vec((3, 2), vec![0.1, -2.0, 1.0 / 3.0, 4.5, 7e-12, 1e5]).unwrap();
        let model = RankModel::new(support, vec![0.7, -1.0 / 7.0, 2.5e-8], KernelConfig::rbf(1.3).unwrap(), 12.25).unwrap();
        let st = DetectorState::new(model, vec![0.3, 0.1, 0.2], 0.07)
            .unwrap()
            .with_config(serde_json::json!({"seed": 3}));
        let back = DetectorState::<f64>::from_json(&st.to_json().unwrap()).unwrap();
        assert_eq!(back, st);
        let q = [0.25, 1.75];
        assert_eq!(back.model().evaluate(&q).unwrap(), st.model().evaluate(&q).unwrap());

        let st32 = DetectorState::new(
            RankModel::new(
                Array2::from_shape_vec((1, 2), vec![0.1f32, 0.2]).unwrap(),
                vec![1.0 / 3.0],
                KernelConfig::rbf(0.7f32).unwrap(),
                1.0,
            )
            .unwrap(),
            vec![0.1f32, 0.3],
            0.05,
        )
        .unwrap();
        assert_eq!(DetectorState::<f32>::from_json(&st32.to_json().unwrap()).unwrap(), st32);
        assert!(DetectorState::<f64>::from_json("{\"format\":\"other\"}").is_err());
    }

    proptest! {
        #[test]
        fn binary_search_matches_scan(
            scores in prop::collection::vec(-2.0f64..2.0, 1..60),
            coef in -2.0f64..2.0,
            queries in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..20),
        ) {
            let support = Array2::from_shape_vec((1, 2), vec![0.0, 0.0]).unwrap();
            let model = RankModel::new(support, vec![coef], KernelConfig::rbf(1.0).unwrap(), 0.0).unwrap();
            // Include the model's own values so ties are exercised.
            let mut train = scores.clone();
            train.push(model.evaluate(&[queries[0].0, queries[0].1]).unwrap());
            let st = DetectorState::new(model, train, 0.1).unwrap();
            for (x, y) in queries {
                prop_assert_eq!(st.score(&[x, y]).unwrap(), st.score_linear(&[x, y]).unwrap());
            }
        }

        #[test]
        fn score_monotone_in_value(scores in prop::collection::vec(-5.0f64..5.0, 1..50), a in -6.0f64..6.0, b in -6.0f64..6.0) {
            let st = state_with_scores(scores);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(st.score_value(lo) <= st.score_value(hi));
        }
    }
}
