//! Dense symmetric-positive-definite solves with a diagonal-jitter
//! escalation policy.
//!
//! Squared-exponential kernel matrices over near-duplicate samples are
//! routinely indefinite at machine precision. All factorizations in this
//! crate go through [`SpdFactor`], which first attempts a plain Cholesky
//! and then retries with `1e-10 * unit` added to the diagonal, escalating
//! tenfold up to `1e-4 * unit` before reporting a conditioning error.
//! `unit` is supplied by the caller (the kernel signal variance for kernel
//! matrices).

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// First jitter attempt, relative to the caller-supplied unit.
pub const JITTER_BASE_REL: f64 = 1e-10;
/// Largest jitter tried before giving up, relative to the unit.
pub const JITTER_MAX_REL: f64 = 1e-4;

/// Cholesky factorization of `A + jitter * I` for a symmetric
/// positive-definite `A`.
#[derive(Debug)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
    n: usize,
}

impl SpdFactor {
    /// Factor `a`, escalating diagonal jitter as needed.
    ///
    /// `jitter_unit` sets the scale of the jitter ladder; pass the kernel
    /// signal variance (or the largest diagonal entry for generic
    /// matrices).
    pub fn new(a: &DMatrix<f64>, jitter_unit: f64) -> Result<Self> {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "SpdFactor requires a square matrix");
        if let Some(chol) = Cholesky::new(a.clone()) {
            return Ok(SpdFactor {
                chol,
                jitter: 0.0,
                n,
            });
        }
        let mut jitter = JITTER_BASE_REL * jitter_unit;
        let max_jitter = JITTER_MAX_REL * jitter_unit;
        while jitter <= max_jitter * (1.0 + 1e-12) {
            let mut aj = a.clone();
            for i in 0..n {
                aj[(i, i)] += jitter;
            }
            if let Some(chol) = Cholesky::new(aj) {
                return Ok(SpdFactor { chol, jitter, n });
            }
            jitter *= 10.0;
        }
        Err(Error::Conditioning(format!(
            "matrix of size {n} is not positive definite even with jitter {max_jitter:.3e}"
        )))
    }

    /// Plain Cholesky with no jitter; `None` when `a` is numerically
    /// indefinite.
    pub fn without_jitter(a: &DMatrix<f64>) -> Option<Self> {
        let n = a.nrows();
        Cholesky::new(a.clone()).map(|chol| SpdFactor {
            chol,
            jitter: 0.0,
            n,
        })
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// log |A + jitter I| from the factor diagonal.
    pub fn log_det(&self) -> f64 {
        let l = self.chol.l_dirty();
        (0..self.n).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0
    }

    /// Jitter that was actually added to the diagonal.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.n
    }
}

/// Solve `A X = B` for SPD `A`, returning the solution and `log |A|`.
///
/// The jitter unit is taken as the largest diagonal entry of `A`.
pub fn solve_spd(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let unit = (0..a.nrows())
        .map(|i| a[(i, i)])
        .fold(0.0_f64, |acc, v| acc.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    let factor = SpdFactor::new(a, unit)?;
    Ok((factor.solve_mat(b), factor.log_det()))
}
