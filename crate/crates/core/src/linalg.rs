//! Small dense least-squares kernels.
//!
//! Every regression in the crate reduces to a symmetric normal system
//! `A b = c` with a `p x p` Gram matrix `A`, where `p` is small (a handful of
//! regressors or instruments). The system is solved through the eigen
//! decomposition of `A`: directions whose eigenvalue falls below
//! `lambda_max / CONDITION_LIMIT` are dropped, which yields the minimum-norm
//! least-squares solution for rank-deficient designs.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Largest Gram-matrix condition number treated as full rank.
pub const CONDITION_LIMIT: f64 = 1e10;

#[derive(Debug, Clone)]
pub struct NormalSolve {
    pub coef: DMatrix<f64>,
    pub rank: usize,
    pub condition: f64,
}

impl NormalSolve {
    pub fn deficient(&self) -> bool {
        self.rank < self.coef.nrows()
    }
}

/// Solve `gram * coef = cross` for a symmetric positive semi-definite `gram`.
///
/// With `strict`, a condition number above [`CONDITION_LIMIT`] is an error
/// carrying the message produced by `what`. Otherwise the minimum-norm
/// solution is returned and `rank` reports the retained directions.
pub fn solve_normal<F>(
    gram: &DMatrix<f64>,
    cross: &DMatrix<f64>,
    strict: bool,
    what: F,
) -> Result<NormalSolve>
where
    F: FnOnce() -> String,
{
    let p = gram.nrows();
    assert_eq!(gram.ncols(), p, "gram matrix must be square");
    assert_eq!(cross.nrows(), p, "cross-product rows must match gram");
    let q = cross.ncols();
    if p == 0 {
        return Ok(NormalSolve {
            coef: DMatrix::zeros(0, q),
            rank: 0,
            condition: 1.0,
        });
    }
    if !gram.iter().chain(cross.iter()).all(|v| v.is_finite()) {
        return Err(Error::NonFiniteValue(what()));
    }

    if p == 1 {
        let a = gram[(0, 0)];
        if a > 0.0 {
            return Ok(NormalSolve {
                coef: cross / a,
                rank: 1,
                condition: 1.0,
            });
        }
        if strict {
            return Err(Error::SingularDesign(what()));
        }
        return Ok(NormalSolve {
            coef: DMatrix::zeros(1, q),
            rank: 0,
            condition: f64::INFINITY,
        });
    }

    let eig = SymmetricEigen::new(gram.clone());
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let lmin = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let condition = if lmin > 0.0 { lmax / lmin } else { f64::INFINITY };
    if strict && !(condition <= CONDITION_LIMIT) {
        return Err(Error::SingularDesign(what()));
    }
    let cutoff = lmax / CONDITION_LIMIT;
    let mut coef = DMatrix::zeros(p, q);
    let mut rank = 0;
    if lmax > 0.0 {
        for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
            if lambda <= cutoff {
                continue;
            }
            rank += 1;
            let v = eig.eigenvectors.column(k);
            let proj = v.transpose() * cross;
            coef += (v * proj) / lambda;
        }
    }
    Ok(NormalSolve {
        coef,
        rank,
        condition,
    })
}

/// Moore-Penrose inverse of a symmetric positive semi-definite matrix, using
/// the same rank cutoff as [`solve_normal`].
pub fn pinv_psd(gram: &DMatrix<f64>) -> DMatrix<f64> {
    let p = gram.nrows();
    solve_normal(gram, &DMatrix::identity(p, p), false, String::new)
        .map(|s| s.coef)
        .unwrap_or_else(|_| DMatrix::from_element(p, p, f64::NAN))
}

/// Least squares of `y` on the columns of `x` (rows are observations).
pub fn lstsq<F>(x: &DMatrix<f64>, y: &DMatrix<f64>, strict: bool, what: F) -> Result<NormalSolve>
where
    F: FnOnce() -> String,
{
    let gram = x.transpose() * x;
    let cross = x.transpose() * y;
    solve_normal(&gram, &cross, strict, what)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_rank_matches_direct_inverse() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let c = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 2.0, 1.0, -1.0, 3.0]);
        let s = solve_normal(&a, &c, true, || "t".into()).unwrap();
        let direct = a.clone().try_inverse().unwrap() * &c;
        assert_eq!(s.rank, 3);
        assert!((s.coef - direct).abs().max() < 1e-12);
    }

    #[test]
    fn rank_deficient_gives_minimum_norm() {
        // x has two identical columns: any split of the coefficient fits,
        // the minimum-norm one splits evenly.
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let y = DMatrix::from_column_slice(3, 1, &[2.0, 4.0, 6.0]);
        let s = lstsq(&x, &y, false, || "t".into()).unwrap();
        assert!(s.deficient());
        assert!((s.coef[(0, 0)] - 1.0).abs() < 1e-10);
        assert!((s.coef[(1, 0)] - 1.0).abs() < 1e-10);
        assert!(matches!(
            lstsq(&x, &y, true, || "dup".into()),
            Err(Error::SingularDesign(m)) if m == "dup"
        ));
    }

    #[test]
    fn zero_gram() {
        let a = DMatrix::zeros(1, 1);
        let c = DMatrix::zeros(1, 1);
        assert!(solve_normal(&a, &c, true, String::new).is_err());
        let s = solve_normal(&a, &c, false, String::new).unwrap();
        assert_eq!(s.rank, 0);
        assert_eq!(s.coef[(0, 0)], 0.0);
    }

    #[test]
    fn pinv_of_invertible_is_inverse() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let p = pinv_psd(&a);
        assert!((&a * &p - DMatrix::<f64>::identity(2, 2)).abs().max() < 1e-12);
    }
}
