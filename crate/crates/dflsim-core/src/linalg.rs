//! Minimal dense matrix support for the small systems this crate works with
//! (client counts and model dimensions in the tens to low hundreds).
//!
//! Row-major `f64` storage, Cholesky solves for SPD systems, and a cyclic
//! Jacobi eigensolver used for spectral norms. Deterministic: no pivoting
//! heuristics that depend on platform-specific rounding.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Build from row-major data. Panics if `data.len() != rows * cols`.
    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major data length mismatch");
        Mat { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `self * x` for a vector `x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        let mut out = vec![0.0; self.rows];
        for r in 0..self.rows {
            let mut acc = 0.0;
            for c in 0..self.cols {
                acc += self[(r, c)] * x[c];
            }
            out[r] = acc;
        }
        out
    }

    /// Gram matrix `self^T * self` (cols x cols).
    pub fn gram(&self) -> Mat {
        let mut g = Mat::zeros(self.cols, self.cols);
        for i in 0..self.cols {
            for j in i..self.cols {
                let mut acc = 0.0;
                for r in 0..self.rows {
                    acc += self[(r, i)] * self[(r, j)];
                }
                g[(i, j)] = acc;
                g[(j, i)] = acc;
            }
        }
        g
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl core::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl core::ops::IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Solve `A x = b` for symmetric positive definite `A` via Cholesky.
///
/// Returns `None` when a pivot drops below `1e-300` (not SPD).
pub fn cholesky_solve(a: &Mat, b: &[f64]) -> Option<Vec<f64>> {
    let n = a.rows();
    assert_eq!(a.cols(), n);
    assert_eq!(b.len(), n);
    // Lower-triangular factor, in place on a copy.
    let mut l = a.clone();
    for j in 0..n {
        let mut d = l[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 1e-300) {
            return None;
        }
        let dj = math::sqrt(d);
        l[(j, j)] = dj;
        for i in (j + 1)..n {
            let mut s = l[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / dj;
        }
    }
    // Forward substitution L y = b.
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    // Back substitution L^T x = y.
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    Some(x)
}

/// Eigenvalues of a symmetric matrix via the cyclic Jacobi method.
///
/// Returns eigenvalues sorted ascending. Input must be symmetric; only the
/// upper triangle is trusted.
pub fn sym_eigenvalues(a: &Mat) -> Vec<f64> {
    let n = a.rows();
    assert_eq!(a.cols(), n);
    let mut m = a.clone();
    // Off-diagonal Frobenius norm for the stopping criterion.
    let off = |m: &Mat| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += m[(i, j)] * m[(i, j)];
            }
        }
        s
    };
    let scale: f64 = {
        let mut s = 0.0;
        for v in m.data() {
            s += v * v;
        }
        s.max(1e-300)
    };
    for _sweep in 0..64 {
        if off(&m) <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if math::fabs(apq) <= 1e-300 {
                    continue;
                }
                let (app, aqq) = (m[(p, p)], m[(q, q)]);
                let theta = (aqq - app) / (2.0 * apq);
                // Stable rotation: t = sign(theta) / (|theta| + sqrt(theta^2 + 1)).
                let t = if theta >= 0.0 {
                    1.0 / (theta + math::sqrt(theta * theta + 1.0))
                } else {
                    -1.0 / (-theta + math::sqrt(theta * theta + 1.0))
                };
                let c = 1.0 / math::sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[(k, p)], m[(k, q)]);
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[(p, k)], m[(q, k)]);
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
    eig.sort_by(f64::total_cmp);
    eig
}

/// Largest and smallest eigenvalue of a symmetric matrix.
pub fn sym_eig_extrema(a: &Mat) -> (f64, f64) {
    let eig = sym_eigenvalues(a);
    (eig[eig.len() - 1], eig[0])
}

/// Squared spectral norm (2-norm) of a general matrix: `lambda_max(A^T A)`.
pub fn spectral_norm_sq(a: &Mat) -> f64 {
    if a.rows() == 0 || a.cols() == 0 {
        return 0.0;
    }
    let (max, _) = sym_eig_extrema(&a.gram());
    max.max(0.0)
}

/// Euclidean norm of a vector.
pub fn norm2(x: &[f64]) -> f64 {
    math::sqrt(x.iter().map(|v| v * v).sum())
}

/// Euclidean distance between two vectors of equal length.
pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    math::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn cholesky_solves_known_system() {
        // A = [[4,1],[1,3]], b = [1,2] -> x = (1/11, 7/11).
        let a = Mat::from_rows(2, 2, vec![4.0, 1.0, 1.0, 3.0]);
        let x = cholesky_solve(&a, &[1.0, 2.0]).unwrap();
        assert!((x[0] - 1.0 / 11.0).abs() < 1e-14);
        assert!((x[1] - 7.0 / 11.0).abs() < 1e-14);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = Mat::from_rows(2, 2, vec![1.0, 2.0, 2.0, 1.0]);
        assert!(cholesky_solve(&a, &[1.0, 1.0]).is_none());
    }

    #[test]
    fn jacobi_matches_power_iteration_on_random_matrices() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for n in 2..=8 {
            for _ in 0..20 {
                let mut a = Mat::zeros(n, n);
                for r in 0..n {
                    for c in 0..n {
                        a[(r, c)] = rng.gen::<f64>() * 2.0 - 1.0;
                    }
                }
                let jac = spectral_norm_sq(&a);
                // Power iteration on the Gram matrix as an independent check.
                let g = a.gram();
                let mut v = vec![1.0; n];
                let mut lambda = 0.0;
                for _ in 0..20_000 {
                    let w = g.mul_vec(&v);
                    let nw = norm2(&w);
                    if nw == 0.0 {
                        break;
                    }
                    v = w.iter().map(|x| x / nw).collect();
                    lambda = nw;
                }
                assert!(
                    (jac - lambda).abs() <= 1e-9 * lambda.max(1.0),
                    "n={n}: jacobi {jac} vs power {lambda}"
                );
            }
        }
    }

    #[test]
    fn spectral_norm_of_diagonal() {
        let mut a = Mat::zeros(3, 3);
        a[(0, 0)] = -3.0;
        a[(1, 1)] = 2.0;
        a[(2, 2)] = 0.5;
        assert!((spectral_norm_sq(&a) - 9.0).abs() < 1e-12);
    }
}
