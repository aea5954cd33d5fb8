use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Lower bound applied to fitted standard deviations.
pub const STD_GUARD: f64 = 1e-8;

/// Per-feature mean and sample standard deviation of a training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Fits on the rows of `data` (denominator `n − 1`).
    pub fn fit(data: &Matrix) -> Result<Self> {
        let (n, d) = data.shape();
        if n < 2 {
            return Err(Error::InsufficientSamples { got: n, required: 2 });
        }
        let mut mean = vec![0.0; d];
        for r in 0..n {
            for (m, x) in mean.iter_mut().zip(data.row(r)) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for r in 0..n {
            for ((v, x), m) in var.iter_mut().zip(data.row(r)).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var
            .into_iter()
            .map(|v| (v / (n - 1) as f64).sqrt().max(STD_GUARD))
            .collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, data: &Matrix) -> Result<Matrix> {
        if data.cols() != self.dim() {
            return Err(Error::Shape(format!(
                "data has {} features, standardizer expects {}",
                data.cols(),
                self.dim()
            )));
        }
        let mut out = data.clone();
        for r in 0..out.rows() {
            for ((x, m), s) in out.row_mut(r).iter_mut().zip(&self.mean).zip(&self.std) {
                *x = (*x - m) / s;
            }
        }
        Ok(out)
    }
}

/// Convenience wrapper mirroring the other pipeline entry points.
pub fn fit_standardizer(data: &Matrix) -> Result<Standardizer> {
    Standardizer::fit(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_column() {
        let x = Matrix::from_rows(&[[1.0], [3.0]]).unwrap();
        let s = fit_standardizer(&x).unwrap();
        assert_eq!(s.mean, vec![2.0]);
        assert!((s.std[0] - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn constant_column_clamped() {
        let x = Matrix::from_rows(&[[5.0], [5.0], [5.0]]).unwrap();
        let s = fit_standardizer(&x).unwrap();
        assert_eq!(s.mean, vec![5.0]);
        assert_eq!(s.std, vec![STD_GUARD]);
        let t = s.transform(&x).unwrap();
        assert!(t.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn standardized_data_is_fixed_point() {
        let x = Matrix::from_rows(&[[1.0, 10.0], [2.0, -4.0], [6.0, 0.5], [-3.0, 2.0]]).unwrap();
        let s = fit_standardizer(&x).unwrap();
        let z = s.transform(&x).unwrap();
        let again = fit_standardizer(&z).unwrap();
        for j in 0..2 {
            assert!(again.mean[j].abs() < 1e-12);
            assert!((again.std[j] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn needs_two_samples_and_matching_width() {
        let x = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        assert!(matches!(fit_standardizer(&x), Err(Error::InsufficientSamples { .. })));
        let s = fit_standardizer(&Matrix::from_rows(&[[1.0], [2.0]]).unwrap()).unwrap();
        assert!(matches!(s.transform(&x), Err(Error::Shape(_))));
    }
}
