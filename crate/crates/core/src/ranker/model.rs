use ndarray::Array2;

use crate::error::{Error, Result};
use crate::ranker::kernel::KernelConfig;
use crate::scalar::{sq_dist, Scalar};

/// Kernel expansion `g(x) = sum_a coef[a] * k(support[a], x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankModel<T> {
    support: Array2<T>,
    coef: Vec<T>,
    kernel: KernelConfig<T>,
    objective: T,
}

impl<T: Scalar> RankModel<T> {
    /// `support` is `s x d` in standard layout; `coef` has length `s`.
    pub fn new(support: Array2<T>, coef: Vec<T>, kernel: KernelConfig<T>, objective: T) -> Result<Self> {
        if support.nrows() != coef.len() {
            return Err(Error::Format(format!(
                "{} support points but {} coefficients",
                support.nrows(),
                coef.len()
            )));
        }
        if support.ncols() == 0 {
            return Err(Error::Format("support points need d >= 1".into()));
        }
        if coef.iter().chain(support.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("model contains non-finite values".into()));
        }
        let support = support.as_standard_layout().into_owned();
        Ok(RankModel {
            support,
            coef,
            kernel,
            objective,
        })
    }

    pub fn dim(&self) -> usize {
        self.support.ncols()
    }

    /// Number of support points `s`.
    pub fn support_count(&self) -> usize {
        self.coef.len()
    }

    pub fn support(&self) -> &Array2<T> {
        &self.support
    }

    pub fn coefficients(&self) -> &[T] {
        &self.coef
    }

    pub fn kernel(&self) -> &KernelConfig<T> {
        &self.kernel
    }

    /// Final value of the training objective.
    pub fn objective(&self) -> T {
        self.objective
    }

    /// Ranker value at `query`; cost is `O(s d)`.
    pub fn evaluate(&self, query: &[T]) -> Result<T> {
        if query.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: query.len(),
            });
        }
        Ok(self.evaluate_unchecked(query))
    }

    #[inline]
    pub(crate) fn evaluate_unchecked(&self, query: &[T]) -> T {
        let gamma = self.kernel.inv_sigma_sq();
        let flat = self.support.as_slice().expect("standard layout");
        let d = self.dim();
        let mut acc = T::zero();
        for (row, &c) in flat.chunks_exact(d).zip(&self.coef) {
            acc += c * (-sq_dist(row, query) * gamma).exp();
        }
        acc
    }

    /// `coef^T K_ss coef`, the squared RKHS norm of the expansion.
    pub fn rkhs_norm_sq(&self) -> T {
        let s = self.support_count();
        let flat = self.support.as_slice().expect("standard layout");
        let d = self.dim();
        let mut acc = T::zero();
        for a in 0..s {
            for b in 0..s {
                acc += self.coef[a]
                    * self.coef[b]
                    * self.kernel.eval(&flat[a * d..(a + 1) * d], &flat[b * d..(b + 1) * d]);
            }
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::seeded_rng;
    use rand::Rng;

    #[test]
    fn single_support_at_itself() {
        let k = KernelConfig::rbf(0.7).unwrap();
        let m = RankModel::new(Array2::from_shape_vec((1, 2), vec![1.0, -1.0]).unwrap(), vec![1.0], k, 0.0)
            .unwrap();
        assert_eq!(m.evaluate(&[1.0, -1.0]).unwrap(), 1.0);
        let far = m.evaluate(&[1.0 + 100.0 * 0.7, -1.0]).unwrap();
        assert!(far < 1e-300);
        assert!(m.evaluate(&[1.0]).is_err());
    }

    #[test]
    fn matches_direct_summation() {
        let mut rng = seeded_rng(9);
        let s = 5;
        let pts: Vec<f64> = (0..s * 3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let coef: Vec<f64> = (0..s).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sigma = 1.3;
        let m = RankModel::new(
            Array2::from_shape_vec((s, 3), pts.clone()).unwrap(),
            coef.clone(),
            KernelConfig::rbf(sigma).unwrap(),
            0.0,
        )
        .unwrap();
        for _ in 0..20 {
            let q: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let mut direct = 0.0;
            for a in 0..s {
                let p = &pts[a * 3..a * 3 + 3];
                let r2: f64 = p.iter().zip(&q).map(|(x, y)| (x - y).powi(2)).sum();
                direct += coef[a] * (-r2 / (sigma * sigma)).exp();
            }
            assert!((m.evaluate(&q).unwrap() - direct).abs() < 1e-12);
        }
        assert!(m.rkhs_norm_sq() >= 0.0);
    }

    #[test]
    fn rejects_bad_shapes() {
        let k = KernelConfig::rbf(1.0).unwrap();
        assert!(RankModel::new(Array2::<f64>::zeros((2, 1)), vec![1.0], k, 0.0).is_err());
        assert!(RankModel::new(Array2::<f64>::zeros((1, 1)), vec![f64::NAN], k, 0.0).is_err());
    }
}
