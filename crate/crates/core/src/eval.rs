//! AUC, false-alarm curves, density-based references and test-time timing.

use std::io::Write;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::{sample_anomaly_box, sample_mixture, AnomalyBox, DataMatrix, Label, MixtureDensity};
use crate::detector::DetectorState;
use crate::error::{Error, Result};
use crate::scalar::{cmp, Scalar};

/// Midranks (1-based) of `values`; tied values share the mean of their ranks.
pub fn midranks<T: Scalar>(values: &[T]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| cmp(&values[a], &values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let mid = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = mid;
        }
        start = end;
    }
    ranks
}

/// `P(nominal score > anomaly score)` with ties counted as one half.
///
/// Low scores are taken to mean anomalous.
pub fn auc<T: Scalar>(scores: &[T], labels: &[Label]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidParameter(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidParameter("scores contain NaN".into()));
    }
    let n0 = labels.iter().filter(|&&l| l == Label::Nominal).count();
    let n1 = labels.len() - n0;
    if n0 == 0 || n1 == 0 {
        return Err(Error::InsufficientData(
            "AUC needs both nominal and anomalous examples".into(),
        ));
    }
    let ranks = midranks(scores);
    let rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == Label::Nominal)
        .map(|(r, _)| r)
        .sum();
    let u = rank_sum - (n0 * (n0 + 1)) as f64 / 2.0;
    Ok(u / (n0 as f64 * n1 as f64))
}

/// Spearman rank correlation with midranks for ties.
pub fn spearman<T: Scalar>(a: &[T], b: &[T]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InvalidParameter(
            "rank correlation needs two equally long samples of size >= 2".into(),
        ));
    }
    let (ra, rb) = (midranks(a), midranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Numerical("rank correlation of a constant sample".into()));
    }
    Ok(sab / (saa * sbb).sqrt())
}

/// Share of `fresh` flagged anomalous at each level.
pub fn false_alarm_curve<T: Scalar>(
    state: &DetectorState<T>,
    fresh: &DataMatrix<T>,
    alphas: &[T],
) -> Result<Vec<(T, f64)>> {
    if alphas.is_empty() {
        return Err(Error::InvalidParameter("no alpha levels given".into()));
    }
    let scores = state.score_all(fresh)?;
    Ok(false_alarm_rates(&scores, alphas))
}

/// Share of `scores` at or below each level.
pub fn false_alarm_rates<T: Scalar>(scores: &[T], alphas: &[T]) -> Vec<(T, f64)> {
    let mut sorted = scores.to_vec();
    sorted.sort_unstable_by(cmp);
    alphas
        .iter()
        .map(|&a| {
            let flagged = sorted.partition_point(|&s| s <= a);
            (a, flagged as f64 / sorted.len().max(1) as f64)
        })
        .collect()
}

/// Monte Carlo reference for `p(x) = P(f0(X) <= f0(x))` under the density.
#[derive(Debug, Clone)]
pub struct PValueOracle {
    density: MixtureDensity,
    sorted: Vec<f64>,
}

pub const MIN_MC_SAMPLES: usize = 10_000;

impl PValueOracle {
    pub fn new(density: &MixtureDensity, mc_samples: usize, seed: u64) -> Result<Self> {
        if mc_samples < MIN_MC_SAMPLES {
            return Err(Error::InvalidParameter(format!(
                "p-value oracle needs at least {MIN_MC_SAMPLES} draws, got {mc_samples}"
            )));
        }
        let draws: DataMatrix<f64> = sample_mixture(density, mc_samples, seed)?;
        let mut sorted: Vec<f64> = (0..draws.n())
            .into_par_iter()
            .map(|i| density.pdf(draws.row(i)))
            .collect();
        sorted.sort_unstable_by(f64::total_cmp);
        Ok(PValueOracle {
            density: density.clone(),
            sorted,
        })
    }

    /// Estimate and its standard error.
    pub fn pvalue(&self, query: &[f64]) -> (f64, f64) {
        let level = self.density.pdf(query);
        let m = self.sorted.len() as f64;
        let p = self.sorted.partition_point(|&v| v <= level) as f64 / m;
        (p, (p * (1.0 - p) / m).sqrt())
    }
}

pub fn oracle_pvalue(density: &MixtureDensity, query: &[f64], mc_samples: usize, seed: u64) -> Result<(f64, f64)> {
    Ok(PValueOracle::new(density, mc_samples, seed)?.pvalue(query))
}

/// Density the anomalies are drawn from.
#[derive(Debug, Clone, PartialEq)]
pub enum AnomalySource {
    Mixture(MixtureDensity),
    Box(AnomalyBox),
}

impl AnomalySource {
    pub fn pdf(&self, x: &[f64]) -> f64 {
        match self {
            AnomalySource::Mixture(m) => m.pdf(x),
            AnomalySource::Box(b) => b.pdf(x),
        }
    }

    pub fn sample(&self, n: usize, seed: u64) -> Result<DataMatrix<f64>> {
        match self {
            AnomalySource::Mixture(m) => {
                let data = sample_mixture(m, n, seed)?;
                data.with_labels(vec![Label::Anomaly; n])
            }
            AnomalySource::Box(b) => sample_anomaly_box(b, n, seed),
        }
    }
}

/// AUC of the likelihood-ratio detector `f0 / f1` on freshly drawn test sets.
pub fn bayes_auc(
    nominal: &MixtureDensity,
    anomaly: &AnomalySource,
    n_nominal: usize,
    n_anomaly: usize,
    seed: u64,
) -> Result<f64> {
    let nom: DataMatrix<f64> = sample_mixture(nominal, n_nominal, seed)?;
    let ano = anomaly.sample(n_anomaly, seed.wrapping_add(0x9e37_79b9_7f4a_7c15))?;
    let mut scores = Vec::with_capacity(n_nominal + n_anomaly);
    let mut labels = Vec::with_capacity(n_nominal + n_anomaly);
    for (data, label) in [(&nom, Label::Nominal), (&ano, Label::Anomaly)] {
        for row in data.rows() {
            let (f0, f1) = (nominal.pdf(row), anomaly.pdf(row));
            scores.push(if f1 > 0.0 { f0 / f1 } else { f64::INFINITY });
            labels.push(label);
        }
    }
    auc(&scores, &labels)
}

/// Wall-clock cost of scoring a test set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Timing {
    pub train_secs: Option<f64>,
    /// Median over repetitions of the whole scoring loop.
    pub test_secs: f64,
    pub per_point_us: f64,
    pub support: usize,
    pub n_train: usize,
    pub d: usize,
}

pub const TIMING_REPS: usize = 5;

/// Median of `reps` single-threaded scoring passes, after one warm-up pass.
pub fn timing_run<T: Scalar>(state: &DetectorState<T>, test: &DataMatrix<T>, reps: usize) -> Result<Timing> {
    if test.d() != state.model().dim() {
        return Err(Error::DimensionMismatch {
            expected: state.model().dim(),
            got: test.d(),
        });
    }
    if test.n() == 0 || reps == 0 {
        return Err(Error::InvalidParameter("timing needs test points and repetitions".into()));
    }
    let pass = || {
        let mut acc = T::zero();
        for row in test.rows() {
            acc += state.score(row).unwrap_or(T::zero());
        }
        std::hint::black_box(acc);
    };
    pass();
    let mut times: Vec<Duration> = (0..reps)
        .map(|_| {
            let t = Instant::now();
            pass();
            t.elapsed()
        })
        .collect();
    times.sort_unstable();
    let test_secs = times[reps / 2].as_secs_f64();
    Ok(Timing {
        train_secs: None,
        test_secs,
        per_point_us: test_secs * 1e6 / test.n() as f64,
        support: state.model().support_count(),
        n_train: state.n(),
        d: test.d(),
    })
}

/// Everything the evaluation step reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub auc: f64,
    pub fa_curve: Vec<(f64, f64)>,
    pub timing: Option<Timing>,
    pub config: serde_json::Value,
}

impl EvalReport {
    /// Scores labelled `test` and builds the report; the false-alarm curve uses its nominal rows.
    pub fn evaluate<T: Scalar>(state: &DetectorState<T>, test: &DataMatrix<T>, alphas: &[T]) -> Result<Self> {
        let labels = test
            .labels()
            .ok_or_else(|| Error::InsufficientData("evaluation needs labelled test data".into()))?;
        let scores = state.score_all(test)?;
        let auc = auc(&scores, labels)?;
        let nominal: Vec<T> = scores
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == Label::Nominal)
            .map(|(&s, _)| s)
            .collect();
        let fa_curve = false_alarm_rates(&nominal, alphas)
            .into_iter()
            .map(|(a, r)| (a.as_f64(), r))
            .collect();
        Ok(EvalReport {
            auc,
            fa_curve,
            timing: None,
            config: serde_json::Value::Null,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("auc {:.6}\n", self.auc);
        for (a, r) in &self.fa_curve {
            out.push_str(&format!("false_alarm alpha={a} rate={r:.6}\n"));
        }
        if let Some(t) = &self.timing {
            if let Some(train) = t.train_secs {
                out.push_str(&format!("train_secs {train:.6}\n"));
            }
            out.push_str(&format!(
                "test_secs {:.6}\nper_point_us {:.3}\nsupport {}\nn_train {}\nd {}\n",
                t.test_secs, t.per_point_us, t.support, t.n_train, t.d
            ));
        }
        out
    }

    /// Two-column `metric,value` CSV.
    pub fn write_csv<W: Write>(&self, out: W, comments: &[String]) -> Result<()> {
        let mut out = std::io::BufWriter::new(out);
        let io = |e| Error::io("<eval report>", e);
        for c in comments {
            writeln!(out, "# {c}").map_err(io)?;
        }
        writeln!(out, "metric,value").map_err(io)?;
        writeln!(out, "auc,{}", self.auc).map_err(io)?;
        for (a, r) in &self.fa_curve {
            writeln!(out, "false_alarm@{a},{r}").map_err(io)?;
        }
        if let Some(t) = &self.timing {
            if let Some(train) = t.train_secs {
                writeln!(out, "train_secs,{train}").map_err(io)?;
            }
            writeln!(out, "test_secs,{}", t.test_secs).map_err(io)?;
            writeln!(out, "per_point_us,{}", t.per_point_us).map_err(io)?;
            writeln!(out, "support,{}", t.support).map_err(io)?;
            writeln!(out, "n_train,{}", t.n_train).map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::seeded_rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn labels(n0: usize, n1: usize) -> Vec<Label> {
        let mut l = vec![Label::Nominal; n0];
        l.extend(vec![Label::Anomaly; n1]);
        l
    }

    fn auc_pairs(scores: &[f64], labels: &[Label]) -> f64 {
        let mut wins = 0.0;
        let mut total = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li == Label::Nominal && lj == Label::Anomaly {
                    total += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / total
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.8, 0.1, 0.2], &labels(2, 2)).unwrap(), 1.0);
        assert_eq!(auc(&[0.3; 5], &labels(2, 3)).unwrap(), 0.5);
        assert!(auc(&[0.1, 0.2], &labels(2, 0)).is_err());
        let mut rng = seeded_rng(10);
        let s: Vec<f64> = (0..10).map(|_| rng.random()).collect();
        let l: Vec<Label> = (0..10).map(|i| if i % 3 == 0 { Label::Anomaly } else { Label::Nominal }).collect();
        assert_eq!(auc(&s, &l).unwrap(), auc_pairs(&s, &l));
    }

    proptest! {
        #[test]
        fn auc_matches_pair_count(
            raw in prop::collection::vec((0u8..6, any::<bool>()), 2..200),
        ) {
            let s: Vec<f64> = raw.iter().map(|(v, _)| *v as f64 / 4.0).collect();
            let l: Vec<Label> = raw.iter().map(|(_, a)| if *a { Label::Anomaly } else { Label::Nominal }).collect();
            let both = l.contains(&Label::Anomaly) && l.contains(&Label::Nominal);
            prop_assume!(both);
            prop_assert_eq!(auc(&s, &l).unwrap(), auc_pairs(&s, &l));
        }

        #[test]
        fn fa_rates_monotone(scores in prop::collection::vec(0.0f64..1.0, 1..80), mut alphas in prop::collection::vec(0.0f64..1.0, 1..10)) {
            alphas.sort_by(f64::total_cmp);
            let rates = false_alarm_rates(&scores, &alphas);
            prop_assert!(rates.windows(2).all(|w| w[0].1 <= w[1].1));
            prop_assert!(rates.iter().all(|(_, r)| (0.0..=1.0).contains(r)));
        }
    }

    #[test]
    fn spearman_examples() {
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[10.0, 20.0, 30.0, 40.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!(spearman(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn pvalue_oracle_examples() {
        let g = MixtureDensity::gaussian(vec![0.0], vec![1.0]).unwrap();
        let oracle = PValueOracle::new(&g, 200_000, 5).unwrap();
        let (p, se) = oracle.pvalue(&[0.0]);
        assert!(p > 1.0 - 1e-3, "{p}");
        assert_eq!(oracle.pvalue(&[40.0]).0, 0.0);
        let (p, se1) = oracle.pvalue(&[1.0]);
        // P(|X| >= 1) for a standard normal.
        let exact = statrs::function::erf::erfc(1.0 / std::f64::consts::SQRT_2);
        assert!((p - exact).abs() <= 3.0 * se1, "{p} vs {exact}");
        assert!(se <= se1);
        assert!(PValueOracle::new(&g, 100, 1).is_err());
    }

    #[test]
    fn bayes_auc_limits() {
        let g = MixtureDensity::gaussian(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let same = bayes_auc(&g, &AnomalySource::Mixture(g.clone()), 2000, 2000, 3).unwrap();
        assert!((same - 0.5).abs() < 0.05, "{same}");
        let far = AnomalySource::Box(AnomalyBox::new(vec![100.0, 100.0], vec![101.0, 101.0]).unwrap());
        assert_eq!(bayes_auc(&g, &far, 500, 500, 3).unwrap(), 1.0);
    }

    #[test]
    fn report_text_and_csv() {
        let r = EvalReport {
            auc: 0.75,
            fa_curve: vec![(0.05, 0.04)],
            timing: None,
            config: serde_json::Value::Null,
        };
        assert!(r.to_text().starts_with("auc 0.750000"));
        let mut buf = Vec::new();
        r.write_csv(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "metric,value\nauc,0.75\nfalse_alarm@0.05,0.04\n");
    }
}
