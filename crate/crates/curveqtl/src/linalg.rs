//! Small dense linear algebra: Cholesky factorization of covariance
//! matrices for multivariate-normal sampling, and a rank-tolerant
//! Cholesky for normal-equation solves that drops linearly dependent
//! design columns instead of failing.

use crate::error::{Error, Result};

/// Columns whose gram diagonal is at or below this are treated as empty
/// (e.g. a probability column that is identically zero after centering).
const PIVOT_ABS_TOL: f64 = 1e-12;
/// A residual pivot at or below this fraction of the original diagonal
/// marks the column as linearly dependent on earlier ones.
const PIVOT_REL_TOL: f64 = 1e-9;

/// Lower-triangular Cholesky factor of a positive definite matrix,
/// stored row-major with the strict upper triangle zero.
#[derive(Debug, Clone)]
pub(crate) struct CholeskyLower {
    pub n: usize,
    pub l: Vec<f64>,
}

/// Factor a symmetric positive definite `n x n` matrix (row-major).
pub(crate) fn cholesky(a: &[f64], n: usize) -> Result<CholeskyLower> {
    assert_eq!(a.len(), n * n, "matrix size mismatch");
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = a[j * n + j];
        for m in 0..j {
            d -= l[j * n + m] * l[j * n + m];
        }
        if !(d > 0.0) {
            return Err(Error::NotPositiveDefinite);
        }
        let dj = d.sqrt();
        l[j * n + j] = dj;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for m in 0..j {
                s -= l[i * n + m] * l[j * n + m];
            }
            l[i * n + j] = s / dj;
        }
    }
    Ok(CholeskyLower { n, l })
}

impl CholeskyLower {
    /// Compute `L z`, mapping i.i.d. standard normals to draws with the
    /// factored covariance.
    pub fn mul_vec(&self, z: &[f64], out: &mut [f64]) {
        debug_assert_eq!(z.len(), self.n);
        debug_assert_eq!(out.len(), self.n);
        for i in 0..self.n {
            let mut s = 0.0;
            for j in 0..=i {
                s += self.l[i * self.n + j] * z[j];
            }
            out[i] = s;
        }
    }
}

/// Rank-tolerant Cholesky factorization of a gram matrix `X'X`.
///
/// Columns with (numerically) zero variance or linearly dependent on
/// earlier columns are dropped: their coefficient is fixed at zero and
/// they contribute nothing to the fit. The remaining factor solves the
/// normal equations of the reduced design.
pub(crate) struct DroppingCholesky {
    k: usize,
    l: Vec<f64>,
    active: Vec<bool>,
}

impl DroppingCholesky {
    /// Factor a `k x k` gram matrix (row-major, symmetric).
    pub fn factor(gram: &[f64], k: usize) -> DroppingCholesky {
        assert_eq!(gram.len(), k * k, "gram size mismatch");
        let mut l = vec![0.0; k * k];
        let mut active = vec![false; k];
        for j in 0..k {
            let orig = gram[j * k + j];
            let mut d = orig;
            for m in 0..j {
                d -= l[j * k + m] * l[j * k + m];
            }
            if orig <= PIVOT_ABS_TOL || d <= PIVOT_REL_TOL * orig {
                // Dependent or empty column: leave row j of L zero.
                for m in 0..=j {
                    l[j * k + m] = 0.0;
                }
                continue;
            }
            active[j] = true;
            let dj = d.sqrt();
            l[j * k + j] = dj;
            for i in (j + 1)..k {
                let mut s = gram[i * k + j];
                for m in 0..j {
                    s -= l[i * k + m] * l[j * k + m];
                }
                l[i * k + j] = s / dj;
            }
        }
        DroppingCholesky { k, l, active }
    }

    /// Number of retained columns.
    #[cfg(test)]
    pub fn n_active(&self) -> usize {
        self.active.iter().filter(|a| **a).count()
    }

    /// Whether column `j` was retained.
    #[cfg(test)]
    pub fn is_active(&self, j: usize) -> bool {
        self.active[j]
    }

    /// Forward-solve `L w = rhs` over the active columns, writing `w`
    /// into `work`, and return `sum w^2 = rhs' (X'X)^{-1} rhs`: the
    /// reduction in residual sum of squares achieved by the design.
    pub fn reduction(&self, rhs: &[f64], work: &mut [f64]) -> f64 {
        debug_assert_eq!(rhs.len(), self.k);
        debug_assert_eq!(work.len(), self.k);
        let mut total = 0.0;
        for j in 0..self.k {
            if !self.active[j] {
                work[j] = 0.0;
                continue;
            }
            let mut s = rhs[j];
            for m in 0..j {
                s -= self.l[j * self.k + m] * work[m];
            }
            let w = s / self.l[j * self.k + j];
            work[j] = w;
            total += w * w;
        }
        total
    }

    /// Solve the normal equations `(X'X) b = rhs`; dropped columns get
    /// coefficient zero. Returns the residual reduction as in
    /// [`Self::reduction`].
    pub fn solve(&self, rhs: &[f64], work: &mut [f64], out: &mut [f64]) -> f64 {
        let total = self.reduction(rhs, work);
        debug_assert_eq!(out.len(), self.k);
        for j in (0..self.k).rev() {
            if !self.active[j] {
                out[j] = 0.0;
                continue;
            }
            let mut s = work[j];
            for i in (j + 1)..self.k {
                s -= self.l[i * self.k + j] * out[i];
            }
            out[j] = s / self.l[j * self.k + j];
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_factors_a_known_matrix() {
        // A = [[4, 2], [2, 3]] has L = [[2, 0], [1, sqrt(2)]].
        let a = [4.0, 2.0, 2.0, 3.0];
        let f = cholesky(&a, 2).unwrap();
        assert!((f.l[0] - 2.0).abs() < 1e-12);
        assert!((f.l[2] - 1.0).abs() < 1e-12);
        assert!((f.l[3] - 2.0_f64.sqrt()).abs() < 1e-12);

        let mut out = [0.0, 0.0];
        f.mul_vec(&[1.0, 1.0], &mut out);
        assert!((out[0] - 2.0).abs() < 1e-12);
        assert!((out[1] - (1.0 + 2.0_f64.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn cholesky_rejects_indefinite_matrices() {
        let a = [1.0, 2.0, 2.0, 1.0]; // eigenvalues 3 and -1
        assert!(matches!(
            cholesky(&a, 2),
            Err(Error::NotPositiveDefinite)
        ));
    }

    #[test]
    fn dropping_cholesky_matches_direct_solve_when_full_rank() {
        // Gram of X = [[1,0],[1,1],[1,2]] columns after centering is
        // irrelevant here; use an arbitrary SPD gram and rhs.
        let gram = [5.0, 1.0, 1.0, 3.0];
        let f = DroppingCholesky::factor(&gram, 2);
        assert_eq!(f.n_active(), 2);
        let rhs = [2.0, -1.0];
        let mut work = [0.0; 2];
        let mut b = [0.0; 2];
        let red = f.solve(&rhs, &mut work, &mut b);
        // Direct inverse of [[5,1],[1,3]] is 1/14 [[3,-1],[-1,5]].
        assert!((b[0] - (3.0 * 2.0 - 1.0 * -1.0) / 14.0).abs() < 1e-12);
        assert!((b[1] - (-1.0 * 2.0 + 5.0 * -1.0) / 14.0).abs() < 1e-12);
        // Reduction equals rhs' G^{-1} rhs.
        let expect = 2.0 * b[0] + -1.0 * b[1];
        assert!((red - expect).abs() < 1e-12);
    }

    #[test]
    fn dropping_cholesky_drops_duplicate_column() {
        // Two identical columns (gram rank 1): the second is dropped and
        // the fit equals the single-column fit.
        let gram = [2.0, 2.0, 2.0, 2.0];
        let f = DroppingCholesky::factor(&gram, 2);
        assert!(f.is_active(0));
        assert!(!f.is_active(1));
        let rhs = [3.0, 3.0];
        let mut work = [0.0; 2];
        let mut b = [0.0; 2];
        let red = f.solve(&rhs, &mut work, &mut b);
        assert!((b[0] - 1.5).abs() < 1e-12);
        assert_eq!(b[1], 0.0);
        assert!((red - 4.5).abs() < 1e-12);
    }

    #[test]
    fn dropping_cholesky_drops_zero_column() {
        let gram = [0.0, 0.0, 0.0, 7.0];
        let f = DroppingCholesky::factor(&gram, 2);
        assert!(!f.is_active(0));
        assert!(f.is_active(1));
        let mut work = [0.0; 2];
        let mut b = [0.0; 2];
        f.solve(&[0.0, 14.0], &mut work, &mut b);
        assert_eq!(b[0], 0.0);
        assert!((b[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn all_columns_dropped_gives_zero_reduction() {
        let gram = [0.0; 4];
        let f = DroppingCholesky::factor(&gram, 2);
        assert_eq!(f.n_active(), 0);
        let mut work = [0.0; 2];
        assert_eq!(f.reduction(&[1.0, 1.0], &mut work), 0.0);
    }
}
