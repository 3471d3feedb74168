//! Physics-guided polynomial mean `mu(x) = h(x)' beta`, fitted by
//! constrained ridge least squares.
//!
//! Two derivative constraints are imposed at virtual points:
//! hardening in pressure (`d mu / d p >= 0`) and deviatoric monotonicity
//! (`d mu / d eps_s >= 0` up to the peak deviatoric strain, `<= 0` past
//! it). Both are linear in the coefficients, so the fit is a strictly
//! convex QP over a cone and is solved by the dual active-set method in
//! [`crate::qp`].
//!
//! All fitting runs in normalized feature space; `eps_s_max` passed to
//! the fit must already be normalized.

use nalgebra::{DMatrix, DVector};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::qp;

/// Input coordinate of the surrogate, in feature order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coord {
    EpsV,
    EpsS,
    P,
}

impl Coord {
    fn index(self) -> usize {
        match self {
            Coord::EpsV => 0,
            Coord::EpsS => 1,
            Coord::P => 2,
        }
    }
}

/// Which derivative constraints a fit enforces.
#[derive(Debug, Clone, Copy)]
pub struct MeanConstraints {
    /// Hardening in pressure at every virtual point.
    pub c1: bool,
    /// Deviatoric monotonicity split at `eps_s_max`.
    pub c2: bool,
}

impl Default for MeanConstraints {
    fn default() -> Self {
        MeanConstraints { c1: true, c2: true }
    }
}

/// Fitted polynomial mean. `beta` is ordered like [`poly_basis`].
#[derive(Debug, Clone, PartialEq)]
pub struct PolyMean {
    pub degree: usize,
    pub beta: DVector<f64>,
    pub lambda_reg: f64,
    /// Peak deviatoric strain of the C2 split, normalized units.
    pub eps_s_max: f64,
}

impl PolyMean {
    pub fn value(&self, x: &[f64; 3]) -> f64 {
        poly_basis(x, self.degree).dot(&self.beta)
    }

    pub fn dp(&self, x: &[f64; 3]) -> f64 {
        poly_basis_grad(x, self.degree, Coord::P).dot(&self.beta)
    }

    pub fn ds(&self, x: &[f64; 3]) -> f64 {
        poly_basis_grad(x, self.degree, Coord::EpsS).dot(&self.beta)
    }
}

/// Number of monomials of total degree <= d in three variables.
pub fn basis_len(d: usize) -> usize {
    (d + 1) * (d + 2) * (d + 3) / 6
}

/// Exponent triples in graded-lexicographic order: ascending total
/// degree, and within a degree block x1 before x2 before x3.
fn exponents(d: usize) -> Vec<[u32; 3]> {
    let mut out = Vec::with_capacity(basis_len(d));
    for deg in 0..=d as u32 {
        for a in (0..=deg).rev() {
            for b in (0..=deg - a).rev() {
                out.push([a, b, deg - a - b]);
            }
        }
    }
    out
}

/// Monomial basis vector `h(x)`, constant term first.
pub fn poly_basis(x: &[f64; 3], d: usize) -> DVector<f64> {
    let exps = exponents(d);
    DVector::from_iterator(
        exps.len(),
        exps.iter()
            .map(|e| x[0].powi(e[0] as i32) * x[1].powi(e[1] as i32) * x[2].powi(e[2] as i32)),
    )
}

/// Analytic gradient `d h / d x_j` with the same ordering as
/// [`poly_basis`].
pub fn poly_basis_grad(x: &[f64; 3], d: usize, j: Coord) -> DVector<f64> {
    let jj = j.index();
    let exps = exponents(d);
    DVector::from_iterator(
        exps.len(),
        exps.iter().map(|e| {
            if e[jj] == 0 {
                return 0.0;
            }
            let mut v = e[jj] as f64;
            for k in 0..3 {
                let pow = if k == jj { e[k] - 1 } else { e[k] };
                v *= x[k].powi(pow as i32);
            }
            v
        }),
    )
}

/// Result of [`estimate_eps_s_max`]; `smoothed` is false when every
/// confinement group was too short for the moving-average window.
#[derive(Debug, Clone, Copy)]
pub struct EpsSMaxEstimate {
    /// Peak deviatoric strain in raw (unnormalized) units.
    pub eps_s: f64,
    pub smoothed: bool,
}

const SMOOTHING_WINDOW: usize = 5;

/// Estimate the deviatoric strain at which gamma peaks.
///
/// Per confinement group, gamma is smoothed with a centered 5-point
/// moving average (edge windows truncated) and the `eps_s` of the
/// smoothed maximum is taken, breaking ties toward the smallest `eps_s`.
/// Groups shorter than the window fall back to the raw argmax. The
/// returned value is the median across groups, in raw units.
pub fn estimate_eps_s_max(ds: &Dataset) -> Result<EpsSMaxEstimate> {
    if ds.is_empty() {
        return Err(Error::EmptyInput("estimate_eps_s_max".to_string()));
    }
    let mut peaks = Vec::new();
    let mut any_smoothed = false;
    for (_, idx) in ds.groups() {
        let gamma: Vec<f64> = idx.iter().map(|&i| ds.samples[i].gamma).collect();
        let eps_s: Vec<f64> = idx.iter().map(|&i| ds.samples[i].eps_s).collect();
        let use_smoothing = gamma.len() >= SMOOTHING_WINDOW;
        let series = if use_smoothing {
            any_smoothed = true;
            moving_average(&gamma, SMOOTHING_WINDOW)
        } else {
            gamma
        };
        let mut best = (f64::NEG_INFINITY, f64::INFINITY);
        for (v, &e) in series.iter().zip(&eps_s) {
            if *v > best.0 || (*v == best.0 && e < best.1) {
                best = (*v, e);
            }
        }
        peaks.push(best.1);
    }
    peaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = peaks.len();
    let median = if n % 2 == 1 {
        peaks[n / 2]
    } else {
        0.5 * (peaks[n / 2 - 1] + peaks[n / 2])
    };
    Ok(EpsSMaxEstimate {
        eps_s: median,
        smoothed: any_smoothed,
    })
}

fn moving_average(v: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    (0..v.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(v.len() - 1);
            v[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

/// Tolerance to which constraints must hold at the returned fit.
pub const CONSTRAINT_TOL: f64 = 1e-8;

/// Fit the constrained polynomial mean by ridge least squares.
///
/// `virtual_points` and `eps_s_max` are in normalized feature space.
pub fn fit_constrained_mean(
    train: &Dataset,
    degree: usize,
    lambda_reg: f64,
    virtual_points: &[[f64; 3]],
    eps_s_max: f64,
    constraints: MeanConstraints,
) -> Result<PolyMean> {
    if train.is_empty() {
        return Err(Error::EmptyInput("fit_constrained_mean".to_string()));
    }
    if (constraints.c1 || constraints.c2) && virtual_points.is_empty() {
        return Err(Error::EmptyInput(
            "fit_constrained_mean: virtual point set".to_string(),
        ));
    }
    if lambda_reg < 0.0 || !lambda_reg.is_finite() {
        return Err(Error::Domain(format!(
            "ridge coefficient must be nonnegative, got {lambda_reg}"
        )));
    }

    let xs = train.features_normalized();
    let y = DVector::from_vec(train.gammas_normalized());
    let k = basis_len(degree);
    let n = xs.len();

    let mut design = DMatrix::<f64>::zeros(n, k);
    for (i, x) in xs.iter().enumerate() {
        design.set_row(i, &poly_basis(x, degree).transpose());
    }

    // QP data: minimize ||H b - y||^2 + lambda ||b||^2
    let mut quad = design.transpose() * &design * 2.0;
    for i in 0..k {
        quad[(i, i)] += 2.0 * lambda_reg;
    }
    let lin = design.transpose() * &y * -2.0;

    // one row per enabled constraint per virtual point
    let mut rows: Vec<(DVector<f64>, usize)> = Vec::new();
    for (vi, v) in virtual_points.iter().enumerate() {
        if constraints.c1 {
            rows.push((poly_basis_grad(v, degree, Coord::P), vi));
        }
        if constraints.c2 {
            let g = poly_basis_grad(v, degree, Coord::EpsS);
            if v[1] <= eps_s_max {
                rows.push((g, vi));
            } else {
                rows.push((-g, vi));
            }
        }
    }
    let mut a = DMatrix::<f64>::zeros(rows.len(), k);
    for (ri, (row, _)) in rows.iter().enumerate() {
        a.set_row(ri, &row.transpose());
    }

    let sol = qp::solve_nonneg_cone(&quad, &lin, &a)?;

    // verify to the documented tolerance and name the worst virtual point
    let mut worst = (0.0_f64, 0usize);
    for (row, vi) in &rows {
        let v = row.dot(&sol.x);
        if v < -worst.0 {
            worst = (-v, *vi);
        }
    }
    if worst.0 > CONSTRAINT_TOL {
        let vp = virtual_points[worst.1];
        return Err(Error::Infeasible(format!(
            "constrained mean fit violates a derivative constraint by {:.3e} at virtual point \
             ({:.4}, {:.4}, {:.4})",
            worst.0, vp[0], vp[1], vp[2]
        )));
    }
    debug_assert!(worst.0 <= CONSTRAINT_TOL);

    Ok(PolyMean {
        degree,
        beta: sol.x,
        lambda_reg,
        eps_s_max,
    })
}
