//! Dual active-set solver for strictly convex quadratic programs with
//! homogeneous inequality constraints:
//!
//! ```text
//!     minimize    1/2 x' Q x + c' x
//!     subject to  a_i' x >= 0        (rows a_i of A)
//! ```
//!
//! The iteration starts from the unconstrained minimizer and alternates
//! between adding the most violated constraint and dropping constraints
//! with negative multipliers, re-solving the equality-constrained
//! subproblem through a Schur complement each time. With zero right-hand
//! sides the origin is always feasible and a violated constraint is never
//! linearly dependent on the active set, so the add step cannot make the
//! subproblem inconsistent. A short projection polish runs at the end to
//! push numerical dust below the feasibility tolerance.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::SpdFactor;

pub struct QpSolution {
    pub x: DVector<f64>,
    /// Indices of constraints active at the solution.
    pub active: Vec<usize>,
    /// KKT multipliers aligned with `active` (all nonnegative).
    pub multipliers: Vec<f64>,
    pub iterations: usize,
}

const MULTIPLIER_TOL: f64 = 1e-10;
const POLISH_TARGET: f64 = 1e-12;

/// Solve the cone-constrained QP. `a` holds one constraint per row.
pub fn solve_nonneg_cone(
    q: &DMatrix<f64>,
    c: &DVector<f64>,
    a: &DMatrix<f64>,
) -> Result<QpSolution> {
    let n = q.nrows();
    assert_eq!(q.ncols(), n);
    assert_eq!(c.len(), n);
    assert!(a.ncols() == n || a.nrows() == 0);

    let q_factor = SpdFactor::without_jitter(q).ok_or_else(|| {
        Error::Conditioning(
            "QP Hessian is not positive definite (rank-deficient design with zero ridge?)"
                .to_string(),
        )
    })?;

    // unit-normalize constraint rows; zero rows are trivially satisfied
    let mut rows: Vec<DVector<f64>> = Vec::with_capacity(a.nrows());
    let mut row_index: Vec<usize> = Vec::with_capacity(a.nrows());
    for i in 0..a.nrows() {
        let r: DVector<f64> = a.row(i).transpose();
        let norm = r.norm();
        if norm > 0.0 {
            rows.push(r / norm);
            row_index.push(i);
        }
    }

    let qinv_c = q_factor.solve_vec(c);
    let mut x = -&qinv_c;
    let mut active: Vec<usize> = Vec::new();
    let mut multipliers: Vec<f64> = Vec::new();
    // constraints found numerically dependent at the current iterate; an
    // exactly dependent row cannot be violated while the active rows
    // hold, so its apparent violation is roundoff dust
    let mut skipped: Vec<bool> = vec![false; rows.len()];
    let mut iterations = 0usize;
    let max_iterations = 30 * (rows.len() + 2);

    loop {
        iterations += 1;
        if iterations > max_iterations {
            return Err(Error::Convergence(format!(
                "QP active-set iteration limit {max_iterations} exceeded"
            )));
        }

        let feas_tol = 1e-12 * x.norm().max(1.0);
        let mut worst: Option<(usize, f64)> = None;
        for (j, r) in rows.iter().enumerate() {
            if skipped[j] || active.contains(&j) {
                continue;
            }
            let v = r.dot(&x);
            if v < -feas_tol && worst.is_none_or(|(_, wv)| v < wv) {
                worst = Some((j, v));
            }
        }

        let Some((entering, _)) = worst else {
            break;
        };
        active.push(entering);

        // drop negative multipliers until the subproblem solution is dual
        // feasible
        loop {
            let (xw, u) = match solve_equality_subproblem(&q_factor, &qinv_c, &rows, &active) {
                Ok(pair) => pair,
                Err(_) if active.last() == Some(&entering) => {
                    active.pop();
                    skipped[entering] = true;
                    break;
                }
                Err(e) => return Err(e),
            };
            let neg = u
                .iter()
                .enumerate()
                .filter(|(_, &ui)| ui < -MULTIPLIER_TOL)
                .min_by(|l, r| l.1.partial_cmp(r.1).unwrap());
            match neg {
                Some((drop_pos, _)) => {
                    active.remove(drop_pos);
                    iterations += 1;
                    if iterations > max_iterations {
                        return Err(Error::Convergence(format!(
                            "QP active-set iteration limit {max_iterations} exceeded"
                        )));
                    }
                }
                None => {
                    x = xw;
                    multipliers = u;
                    // the iterate moved: dependence verdicts no longer apply
                    skipped.iter_mut().for_each(|s| *s = false);
                    break;
                }
            }
        }
    }

    // projection polish: push tiny violations below the target
    for _ in 0..8 {
        let mut worst_violation = 0.0_f64;
        for r in &rows {
            let v = r.dot(&x);
            if v < 0.0 {
                worst_violation = worst_violation.max(-v);
                x += r * (-v);
            }
        }
        if worst_violation <= POLISH_TARGET {
            break;
        }
    }

    Ok(QpSolution {
        x,
        active: active.iter().map(|&j| row_index[j]).collect(),
        multipliers,
        iterations,
    })
}

/// Solve `min 1/2 x'Qx + c'x  s.t. N'x = 0` for the active rows, returning
/// the minimizer and its multipliers.
fn solve_equality_subproblem(
    q_factor: &SpdFactor,
    qinv_c: &DVector<f64>,
    rows: &[DVector<f64>],
    active: &[usize],
) -> Result<(DVector<f64>, Vec<f64>)> {
    let n = qinv_c.len();
    let k = active.len();
    if k == 0 {
        return Ok((-qinv_c.clone(), Vec::new()));
    }
    let mut normals = DMatrix::<f64>::zeros(n, k);
    for (col, &j) in active.iter().enumerate() {
        normals.set_column(col, &rows[j]);
    }
    let y = q_factor.solve_mat(&normals); // Q^{-1} N
    let schur = normals.transpose() * &y;
    let rhs = normals.transpose() * qinv_c;
    let schur_factor = SpdFactor::without_jitter(&schur).ok_or_else(|| {
        Error::Conditioning("QP active-set Schur complement is singular".to_string())
    })?;
    let u = schur_factor.solve_vec(&rhs);
    let x = &y * &u - qinv_c;
    Ok((x, u.iter().copied().collect()))
}
