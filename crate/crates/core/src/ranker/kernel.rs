use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::DataMatrix;
use crate::error::{Error, Result};
use crate::scalar::{sq_dist, Scalar};

/// Radial-basis kernel `exp(-|x - x'|^2 / sigma^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename = "rbf")]
pub struct KernelConfig<T> {
    sigma: T,
}

impl<T: Scalar> KernelConfig<T> {
    pub fn rbf(sigma: T) -> Result<Self> {
        if !(sigma > T::zero() && sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "kernel bandwidth must be positive and finite, got {sigma}"
            )));
        }
        Ok(KernelConfig { sigma })
    }

    pub fn sigma(&self) -> T {
        self.sigma
    }

    #[inline]
    pub(crate) fn inv_sigma_sq(&self) -> T {
        T::one() / (self.sigma * self.sigma)
    }

    #[inline]
    pub fn eval(&self, a: &[T], b: &[T]) -> T {
        (-sq_dist(a, b) * self.inv_sigma_sq()).exp()
    }
}

/// Symmetric `n x n` Gram matrix over the rows of `data`.
pub fn gram_matrix<T: Scalar>(data: &DataMatrix<T>, kernel: &KernelConfig<T>) -> Array2<T> {
    let n = data.n();
    let upper: Vec<Vec<T>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = data.row(i);
            (i..n).map(|j| kernel.eval(xi, data.row(j))).collect()
        })
        .collect();
    let mut k = Array2::zeros((n, n));
    for (i, row) in upper.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            k[[i, i + off]] = v;
            k[[i + off, i]] = v;
        }
    }
    k
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_range() {
        let k = KernelConfig::rbf(1.5).unwrap();
        assert_eq!(k.eval(&[1.0, 2.0], &[1.0, 2.0]), 1.0);
        let v = k.eval(&[0.0, 0.0], &[1.0, 1.0]);
        assert!(v > 0.0 && v < 1.0);
        assert_eq!(v, (-2.0f64 / 2.25).exp());
        assert!(KernelConfig::rbf(0.0f64).is_err());
        assert!(KernelConfig::rbf(f64::NAN).is_err());
    }

    #[test]
    fn gram_is_symmetric_unit_diagonal() {
        let data = DataMatrix::from_rows(&[vec![0.0], vec![1.0], vec![3.0]]).unwrap();
        let g = gram_matrix(&data, &KernelConfig::rbf(2.0).unwrap());
        for i in 0..3 {
            assert_eq!(g[[i, i]], 1.0);
            for j in 0..3 {
                assert_eq!(g[[i, j]], g[[j, i]]);
            }
        }
        assert_eq!(g[[0, 2]], (-9.0f64 / 4.0).exp());
    }
}
