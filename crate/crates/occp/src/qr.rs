//! Householder QR factorization and linear solves.
//!
//! The ADMM subproblems reduce to small dense linear systems solved every
//! iteration; the factorization is computed once per planning cycle and the
//! triangular solve reused across iterations.

use nalgebra::DMatrix;

use crate::{Error, Result};

/// Unpivoted Householder QR factors of an m x n matrix with m >= n.
#[derive(Debug, Clone)]
pub struct QrFactors {
    // Householder vectors stored below the diagonal, R on and above it.
    qr: DMatrix<f64>,
    // Scalar tau per reflector.
    tau: Vec<f64>,
    tol: f64,
}

impl QrFactors {
    /// Factors `a`. Fails on rank deficiency (|R_ii| below tol * ||A||_inf).
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        let (m, n) = a.shape();
        if m < n {
            return Err(Error::Dimension(format!("qr: {m}x{n} has fewer rows than columns")));
        }
        let norm_inf = a.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let tol = 1e-12 * norm_inf.max(1.0);
        let mut qr = a.clone();
        let mut tau = vec![0.0; n];
        for k in 0..n {
            // Householder reflector annihilating column k below the diagonal.
            let mut norm = 0.0;
            for i in k..m {
                norm += qr[(i, k)] * qr[(i, k)];
            }
            let norm = norm.sqrt();
            if norm < tol {
                return Err(Error::Singular(format!(
                    "rank deficiency at column {k}: |R_kk| = {norm:.3e} < tol {tol:.3e}"
                )));
            }
            let alpha = if qr[(k, k)] >= 0.0 { -norm } else { norm };
            let v0 = qr[(k, k)] - alpha;
            // v = (x - alpha e1), normalized so v[0] = 1.
            for i in (k + 1)..m {
                qr[(i, k)] /= v0;
            }
            tau[k] = -v0 / alpha;
            qr[(k, k)] = alpha;
            // Apply reflector to trailing columns.
            for j in (k + 1)..n {
                let mut dot = qr[(k, j)];
                for i in (k + 1)..m {
                    dot += qr[(i, k)] * qr[(i, j)];
                }
                let s = tau[k] * dot;
                qr[(k, j)] -= s;
                for i in (k + 1)..m {
                    let h = qr[(i, k)];
                    qr[(i, j)] -= s * h;
                }
            }
        }
        Ok(Self { qr, tau, tol })
    }

    /// Solves A x = b in the least-squares sense (exact for square A); `b`
    /// may carry multiple right-hand-side columns.
    pub fn solve(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let (m, n) = self.qr.shape();
        if b.nrows() != m {
            return Err(Error::Dimension(format!(
                "qr solve: rhs has {} rows, expected {m}",
                b.nrows()
            )));
        }
        let mut y = b.clone();
        // y <- Q^T b
        for k in 0..n {
            for c in 0..y.ncols() {
                let mut dot = y[(k, c)];
                for i in (k + 1)..m {
                    dot += self.qr[(i, k)] * y[(i, c)];
                }
                let s = self.tau[k] * dot;
                y[(k, c)] -= s;
                for i in (k + 1)..m {
                    y[(i, c)] -= s * self.qr[(i, k)];
                }
            }
        }
        // Back substitution on R.
        let mut x = DMatrix::zeros(n, y.ncols());
        for c in 0..y.ncols() {
            for k in (0..n).rev() {
                let mut acc = y[(k, c)];
                for j in (k + 1)..n {
                    acc -= self.qr[(k, j)] * x[(j, c)];
                }
                let diag = self.qr[(k, k)];
                if diag.abs() < self.tol {
                    return Err(Error::Singular(format!("zero pivot at row {k}")));
                }
                x[(k, c)] = acc / diag;
            }
        }
        Ok(x)
    }
}

/// One-shot Householder QR solve.
pub fn qr_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    QrFactors::new(a)?.solve(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    // Independent oracle: Gaussian elimination with partial pivoting.
    pub fn gauss_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
        let n = a.nrows();
        let mut m = a.clone();
        let mut rhs = b.clone();
        for k in 0..n {
            let piv = (k..n).max_by(|&i, &j| m[(i, k)].abs().total_cmp(&m[(j, k)].abs())).unwrap();
            if piv != k {
                m.swap_rows(k, piv);
                rhs.swap_rows(k, piv);
            }
            for i in (k + 1)..n {
                let f = m[(i, k)] / m[(k, k)];
                for j in k..n {
                    m[(i, j)] -= f * m[(k, j)];
                }
                rhs[i] -= f * rhs[k];
            }
        }
        let mut x = DVector::zeros(n);
        for k in (0..n).rev() {
            let mut acc = rhs[k];
            for j in (k + 1)..n {
                acc -= m[(k, j)] * x[j];
            }
            x[k] = acc / m[(k, k)];
        }
        x
    }

    #[test]
    fn identity() {
        let a = DMatrix::identity(4, 4);
        let b = DMatrix::from_column_slice(4, 1, &[1.0, 2.0, 3.0, 4.0]);
        let x = qr_solve(&a, &b).unwrap();
        assert_eq!(x, b);
    }

    #[test]
    fn diagonal() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 4.0]);
        let b = DMatrix::from_column_slice(2, 1, &[2.0, 8.0]);
        let x = qr_solve(&a, &b).unwrap();
        assert!((x[(0, 0)] - 1.0).abs() < 1e-14);
        assert!((x[(1, 0)] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn singular_is_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let b = DMatrix::zeros(2, 1);
        assert!(matches!(qr_solve(&a, &b), Err(Error::Singular(_))));
    }

    #[test]
    fn random_systems_match_elimination_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut worst = 0.0f64;
        for _ in 0..50 {
            let n = 64;
            let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0))
                + DMatrix::identity(n, n) * 2.0;
            let b = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
            let x = qr_solve(&a, &DMatrix::from_column_slice(n, 1, b.as_slice())).unwrap();
            let x = DVector::from_column_slice(x.as_slice());
            let oracle = gauss_solve(&a, &b);
            let rel = (&x - &oracle).norm() / oracle.norm().max(1.0);
            worst = worst.max(rel);
        }
        assert!(worst <= 1e-10, "max relative error {worst}");
    }

    #[test]
    fn least_squares_tall_system() {
        // Overdetermined consistent system.
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let b = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let x = qr_solve(&a, &b).unwrap();
        assert!((x[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((x[(1, 0)] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn cached_factorization_reuse() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 16;
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0)) + DMatrix::identity(n, n);
        let f = QrFactors::new(&a).unwrap();
        for _ in 0..5 {
            let b = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
            let x = f.solve(&DMatrix::from_column_slice(n, 1, b.as_slice())).unwrap();
            let x = DVector::from_column_slice(x.as_slice());
            let oracle = gauss_solve(&a, &b);
            assert!((&x - &oracle).norm() / oracle.norm() < 1e-10);
        }
    }
}
