//! Thin helpers over the dense solvers.

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};

use crate::error::{Error, Result};

/// Reciprocal condition number below which a square system is refused.
pub const SINGULAR_RCOND: f64 = 1e-13;

/// Solves `A X = B` for a small general square `A`, refusing numerically
/// singular systems.
pub fn solve_general(a: &Mat<f64>, mut b: Mat<f64>) -> Result<Mat<f64>> {
    let sv = a
        .singular_values()
        .map_err(|e| Error::SolverFailure(format!("{e:?}")))?;
    let (hi, lo) = (sv[0], sv[sv.len() - 1]);
    if !(lo > SINGULAR_RCOND * hi) {
        return Err(Error::SingularVertexSystem);
    }
    a.partial_piv_lu().solve_in_place(b.as_mut());
    Ok(b)
}

/// Solves `A X = B` for symmetric positive definite `A`.
pub fn solve_spd(a: &Mat<f64>, mut b: Mat<f64>) -> Result<Mat<f64>> {
    let llt = a
        .llt(Side::Lower)
        .map_err(|e| Error::SolverFailure(format!("cholesky: {e:?}")))?;
    llt.solve_in_place(b.as_mut());
    Ok(b)
}

pub fn max_abs(m: &Mat<f64>) -> f64 {
    let mut best: f64 = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            best = best.max(m[(i, j)].abs());
        }
    }
    best
}

pub fn column(m: &Mat<f64>, j: usize) -> Vec<f64> {
    (0..m.nrows()).map(|i| m[(i, j)]).collect()
}

/// Solves a tridiagonal system (`lower[i]` couples rows `i+1` and `i`).
/// No pivoting; intended for diagonally dominant matrices.
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    if n == 0 {
        return Vec::new();
    }
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = if n > 1 { upper[0] / diag[0] } else { 0.0 };
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - lower[i - 1] * c[i - 1];
        c[i] = if i + 1 < n { upper[i] / m } else { 0.0 };
        d[i] = (rhs[i] - lower[i - 1] * d[i - 1]) / m;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn general_and_singular() {
        let a = Mat::from_fn(2, 2, |i, j| [[2.0, 1.0], [1.0, 3.0]][i][j]);
        let b = Mat::from_fn(2, 1, |i, _| [3.0, 4.0][i]);
        let x = solve_general(&a, b.clone()).unwrap();
        assert!((x[(0, 0)] - 1.0).abs() < 1e-14 && (x[(1, 0)] - 1.0).abs() < 1e-14);
        let x = solve_spd(&a, b).unwrap();
        assert!((x[(0, 0)] - 1.0).abs() < 1e-14);
        let s = Mat::from_fn(2, 2, |i, _| i as f64 + 1.0);
        assert_eq!(
            solve_general(&s, Mat::zeros(2, 1)),
            Err(Error::SingularVertexSystem)
        );
    }

    #[test]
    fn tridiagonal() {
        let lower = [-1.0, -1.0];
        let diag = [4.0, 4.0, 4.0];
        let upper = [-1.0, -1.0];
        let x = [1.0, -2.0, 0.5];
        let rhs: Vec<f64> = (0..3)
            .map(|i| {
                let mut r = diag[i] * x[i];
                if i > 0 {
                    r += lower[i - 1] * x[i - 1];
                }
                if i < 2 {
                    r += upper[i] * x[i + 1];
                }
                r
            })
            .collect();
        let y = solve_tridiagonal(&lower, &diag, &upper, &rhs);
        for i in 0..3 {
            assert!((y[i] - x[i]).abs() < 1e-14);
        }
    }
}
