//! Cyclic Jacobi eigensolver for real symmetric matrices.

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Relative off-diagonal Frobenius norm at which the sweeps stop.
pub const JACOBI_TOLERANCE: f64 = 1e-10;
pub const JACOBI_MAX_SWEEPS: usize = 100;
/// Allowed asymmetry, scaled by `max(1, max|a_ij|)`.
pub const SYMMETRY_TOLERANCE: f64 = 1e-8;

/// Eigenpairs sorted by descending eigenvalue. Column `i` of `vectors` pairs
/// with `values[i]`; each column's largest-magnitude entry is positive.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
    pub sweeps: usize,
    pub converged: bool,
}

impl SymmetricEigen {
    pub fn vector(&self, i: usize) -> Vec<f64> {
        self.vectors.column(i)
    }
}

fn off_diagonal_norm(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

pub fn check_symmetric(a: &Matrix) -> Result<()> {
    if a.rows() != a.cols() {
        return Err(Error::Contract(format!("matrix is {}×{}, not square", a.rows(), a.cols())));
    }
    let tol = SYMMETRY_TOLERANCE * a.max_abs().max(1.0);
    for i in 0..a.rows() {
        for j in 0..i {
            if (a[(i, j)] - a[(j, i)]).abs() > tol {
                return Err(Error::Contract(format!(
                    "matrix is not symmetric at ({i}, {j}): {} vs {}",
                    a[(i, j)],
                    a[(j, i)]
                )));
            }
        }
    }
    if a.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::Contract("matrix has non-finite entries".into()));
    }
    Ok(())
}

/// Diagonalizes `sigma` with cyclic Jacobi rotations.
pub fn symmetric_eigendecomposition(sigma: &Matrix) -> Result<SymmetricEigen> {
    check_symmetric(sigma)?;
    let n = sigma.rows();
    let mut a = sigma.clone();
    // Symmetrize exactly so the rotations see a truly symmetric operand.
    for i in 0..n {
        for j in 0..i {
            let m = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = m;
            a[(j, i)] = m;
        }
    }
    let mut v = Matrix::identity(n);
    let threshold = JACOBI_TOLERANCE * a.frobenius_norm();

    let mut sweeps = 0;
    let mut converged = off_diagonal_norm(&a) <= threshold;
    while !converged && sweeps < JACOBI_MAX_SWEEPS {
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut a, &mut v, p, q, c, s);
            }
        }
        converged = off_diagonal_norm(&a) <= threshold;
    }
    if !converged {
        log::warn!("Jacobi eigensolver stopped after {sweeps} sweeps without converging");
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let col = v.column(src);
        let pivot = col
            .iter()
            .copied()
            .fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for (i, x) in col.into_iter().enumerate() {
            vectors[(i, dst)] = sign * x;
        }
    }
    Ok(SymmetricEigen {
        values,
        vectors,
        sweeps,
        converged,
    })
}

/// Applies `A ← Jᵀ A J`, `V ← V J` for the rotation in the (p, q) plane.
fn rotate(a: &mut Matrix, v: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let n = a.rows();
    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = c * akp - s * akq;
        a[(k, q)] = s * akp + c * akq;
    }
    {
        let data = a.as_mut_slice();
        for k in 0..n {
            let apk = data[p * n + k];
            let aqk = data[q * n + k];
            data[p * n + k] = c * apk - s * aqk;
            data[q * n + k] = s * apk + c * aqk;
        }
    }
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn residual(m: &Matrix, e: &SymmetricEigen) -> f64 {
        let n = m.rows();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let w = e.vector(i);
            for r in 0..n {
                let mw: f64 = (0..n).map(|c| m[(r, c)] * w[c]).sum();
                worst = worst.max((mw - e.values[i] * w[r]).abs() / e.values[i].abs().max(1.0));
            }
        }
        worst
    }

    #[test]
    fn identity_has_unit_spectrum() {
        let e = symmetric_eigendecomposition(&Matrix::identity(3)).unwrap();
        assert_eq!(e.values, vec![1.0, 1.0, 1.0]);
        let vtv = e.vectors.transpose().matmul(&e.vectors).unwrap();
        assert_eq!(vtv, Matrix::identity(3));
    }

    #[test]
    fn diagonal_matrix() {
        let m = Matrix::from_rows(&[[1.0, 0.0], [0.0, 4.0]]).unwrap();
        let e = symmetric_eigendecomposition(&m).unwrap();
        assert_eq!(e.values, vec![4.0, 1.0]);
        assert_eq!(e.vector(0), vec![0.0, 1.0]);
        assert_eq!(e.vector(1), vec![1.0, 0.0]);
    }

    #[test]
    fn two_by_two_hand_case() {
        let m = Matrix::from_rows(&[[2.0, 1.0], [1.0, 2.0]]).unwrap();
        let e = symmetric_eigendecomposition(&m).unwrap();
        assert!((e.values[0] - 3.0).abs() < 1e-12);
        assert!((e.values[1] - 1.0).abs() < 1e-12);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let w0 = e.vector(0);
        let w1 = e.vector(1);
        assert!((w0[0].abs() - h).abs() < 1e-12 && (w0[0] - w0[1]).abs() < 1e-12);
        assert!((w1[0].abs() - h).abs() < 1e-12 && (w1[0] + w1[1]).abs() < 1e-12);
        assert!(residual(&m, &e) < 1e-12);
    }

    #[test]
    fn sign_convention_largest_entry_positive() {
        let m = Matrix::from_rows(&[[4.0, -2.0, 0.5], [-2.0, 3.0, 1.0], [0.5, 1.0, 1.0]]).unwrap();
        let e = symmetric_eigendecomposition(&m).unwrap();
        for i in 0..3 {
            let w = e.vector(i);
            let big = w.iter().copied().fold(0.0f64, |b, x| if x.abs() > b.abs() { x } else { b });
            assert!(big > 0.0);
        }
        assert!(residual(&m, &e) < 1e-10);
    }

    #[test]
    fn asymmetric_input_is_contract_violation() {
        let m = Matrix::from_rows(&[[1.0, 2.0], [0.0, 1.0]]).unwrap();
        assert!(matches!(symmetric_eigendecomposition(&m), Err(Error::Contract(_))));
        let rect = Matrix::zeros(2, 3);
        assert!(matches!(symmetric_eigendecomposition(&rect), Err(Error::Contract(_))));
    }

    #[test]
    fn zero_matrix() {
        let e = symmetric_eigendecomposition(&Matrix::zeros(4, 4)).unwrap();
        assert!(e.values.iter().all(|&v| v == 0.0));
        assert!(e.converged);
    }
}
