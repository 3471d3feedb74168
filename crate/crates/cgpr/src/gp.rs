//! GP posterior prediction, negative log marginal likelihood, and
//! chance-constrained hyperparameter training.
//!
//! The surrogate is a residual GP: a polynomial (or zero) mean is frozen
//! first, the GP is fit to `gamma - mu(X)` in normalized space, and
//! predictions add the mean back and de-normalize at the API boundary.
//!
//! The derivative statistics follow the two-piece construction used for
//! the hardening constraint: the derivative mean comes from the
//! polynomial alone, while the derivative variance is conditioned on the
//! pressure-pressure derivative kernel over the training sites,
//! `var = k'(x, x) - k'(x, X) [K'(X, X) + jitter]^{-1} k'(X, x)`.
//! No value-to-derivative cross covariance is used anywhere. The
//! conditioning set of that variance is the training input locations even
//! though no derivative observations exist there; this follows the
//! formula as stated and is flagged here for users.
//!
//! Chance constraints require, at every virtual point,
//! `mu' - z_{1-eta} * sigma' >= 0` with `z` the standard normal quantile,
//! which bounds the probability of a negative pressure derivative by
//! `eta` under the Gaussian marginal.

use std::cell::RefCell;
use std::rc::Rc;

use cobyla::{minimize, RhoBeg, StopTols};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Dataset, Normalization};
use crate::error::{Error, Result};
use crate::kernel::{
    cross_kernel, dkernel_pp, factor_kernel_matrix, kernel_matrix, Hyperparameters, KernelKind,
};
use crate::linalg::SpdFactor;
use crate::polymean::PolyMean;

pub use crate::normal::inv_norm_cdf;

const LN_2PI: f64 = 1.8378770664093453;

/// Log-space box bounds for every hyperparameter (normalized units).
pub const HYPER_LO: f64 = 1e-3;
pub const HYPER_HI: f64 = 1e3;

/// Post-training margin tolerance for chance-constraint feasibility.
pub const FEASIBILITY_TOL: f64 = 1e-6;

/// Objective value reported to the optimizer when a candidate theta makes
/// the kernel matrices unfactorizable.
const EVAL_FAILURE_NLML: f64 = 1e12;

/// Mean function of the GP prior.
#[derive(Debug, Clone, PartialEq)]
pub enum MeanModel {
    Zero,
    Poly(PolyMean),
}

impl MeanModel {
    pub fn value(&self, x: &[f64; 3]) -> f64 {
        match self {
            MeanModel::Zero => 0.0,
            MeanModel::Poly(pm) => pm.value(x),
        }
    }

    pub fn dp(&self, x: &[f64; 3]) -> f64 {
        match self {
            MeanModel::Zero => 0.0,
            MeanModel::Poly(pm) => pm.dp(x),
        }
    }

    pub fn ds(&self, x: &[f64; 3]) -> f64 {
        match self {
            MeanModel::Zero => 0.0,
            MeanModel::Poly(pm) => pm.ds(x),
        }
    }
}

/// De-normalized posterior prediction at one input.
#[derive(Debug, Clone, Copy)]
pub struct Prediction {
    /// Posterior mean in MPa.
    pub mean: f64,
    /// Posterior variance in MPa^2, floored at zero.
    pub variance: f64,
    pub ci95_low: f64,
    pub ci95_high: f64,
}

/// Trained surrogate model.
#[derive(Debug)]
pub struct GpModel {
    train_x: Vec<[f64; 3]>,
    /// Raw (feature, gamma) pairs retained for serialization.
    train_raw: Vec<([f64; 3], f64)>,
    resid: DVector<f64>,
    th: Hyperparameters,
    mean: MeanModel,
    normalization: Normalization,
    constrained: bool,
    eta: f64,
    z_eta: f64,
    virtual_points: Vec<[f64; 3]>,
    chol: SpdFactor,
    alpha: DVector<f64>,
    chol_deriv: SpdFactor,
}

impl GpModel {
    /// Build a model with fixed hyperparameters, recomputing all caches.
    #[allow(clippy::too_many_arguments)]
    pub fn assemble(
        train_raw: Vec<([f64; 3], f64)>,
        th: Hyperparameters,
        mean: MeanModel,
        normalization: Normalization,
        constrained: bool,
        eta: f64,
        virtual_points: Vec<[f64; 3]>,
    ) -> Result<Self> {
        th.validate()?;
        if train_raw.is_empty() {
            return Err(Error::EmptyInput("GP training set".to_string()));
        }
        if !(eta > 0.0 && eta < 1.0) {
            return Err(Error::Domain(format!(
                "violation probability eta must lie in (0, 1), got {eta}"
            )));
        }
        if constrained && !(eta < 0.5) {
            return Err(Error::Domain(format!(
                "constrained training requires eta < 0.5, got {eta}"
            )));
        }
        let z_eta = inv_norm_cdf(1.0 - eta)?;
        let train_x: Vec<[f64; 3]> = train_raw
            .iter()
            .map(|(x, _)| normalization.normalize_x(*x))
            .collect();
        let resid = DVector::from_iterator(
            train_raw.len(),
            train_raw
                .iter()
                .zip(&train_x)
                .map(|((_, g), xn)| normalization.normalize_gamma(*g) - mean.value(xn)),
        );
        let k = kernel_matrix(&train_x, &th, KernelKind::Value);
        let chol = factor_kernel_matrix(&k, th.sigma_n * th.sigma_n, th.sigma_f * th.sigma_f)?;
        let alpha = chol.solve_vec(&resid);
        let kd = kernel_matrix(&train_x, &th, KernelKind::DerivPp);
        let deriv_unit = th.sigma_f * th.sigma_f / (th.ell[2] * th.ell[2]);
        let chol_deriv = SpdFactor::new(&kd, deriv_unit)?;
        Ok(GpModel {
            train_x,
            train_raw,
            resid,
            th,
            mean,
            normalization,
            constrained,
            eta,
            z_eta,
            virtual_points,
            chol,
            alpha,
            chol_deriv,
        })
    }

    pub fn train_x(&self) -> &[[f64; 3]] {
        &self.train_x
    }

    pub fn train_raw(&self) -> &[([f64; 3], f64)] {
        &self.train_raw
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.th
    }

    pub fn mean(&self) -> &MeanModel {
        &self.mean
    }

    pub fn normalization(&self) -> &Normalization {
        &self.normalization
    }

    pub fn constrained(&self) -> bool {
        self.constrained
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn virtual_points(&self) -> &[[f64; 3]] {
        &self.virtual_points
    }

    /// Posterior mean and clamped variance in normalized space.
    pub fn predict_normalized(&self, xn: [f64; 3]) -> (f64, f64) {
        let kv = cross_kernel(&xn, &self.train_x, &self.th, KernelKind::Value);
        let mean = self.mean.value(&xn) + kv.dot(&self.alpha);
        let prior = self.th.sigma_f * self.th.sigma_f;
        let var = prior - kv.dot(&self.chol.solve_vec(&kv));
        debug_assert!(var > -1e-6 * prior, "posterior variance {var} too negative");
        (mean, var.max(0.0))
    }

    /// Posterior prediction at a raw-unit input, de-normalized to MPa.
    pub fn predict(&self, x_raw: [f64; 3]) -> Prediction {
        let xn = self.normalization.normalize_x(x_raw);
        let (mean_n, var_n) = self.predict_normalized(xn);
        let gs = self.normalization.gamma_scale();
        let mean = self.normalization.denormalize_gamma(mean_n);
        let variance = var_n * gs * gs;
        let half = 1.96 * variance.sqrt();
        Prediction {
            mean,
            variance,
            ci95_low: mean - half,
            ci95_high: mean + half,
        }
    }

    /// Mean and standard deviation of `d gamma / d p` at a normalized
    /// input. The mean is the polynomial derivative; the deviation comes
    /// from the derivative kernel conditioned on the training sites.
    pub fn deriv_dp_stats(&self, xn: [f64; 3]) -> (f64, f64) {
        let mu = self.mean.dp(&xn);
        let kv = cross_kernel(&xn, &self.train_x, &self.th, KernelKind::DerivPp);
        let prior = dkernel_pp(&xn, &xn, &self.th);
        let var = prior - kv.dot(&self.chol_deriv.solve_vec(&kv));
        (mu, var.max(0.0).sqrt())
    }

    /// [`GpModel::deriv_dp_stats`] converted back to raw units
    /// (MPa of gamma per MPa of pressure).
    pub fn deriv_dp_stats_raw(&self, x_raw: [f64; 3]) -> (f64, f64) {
        let xn = self.normalization.normalize_x(x_raw);
        let (mu, sigma) = self.deriv_dp_stats(xn);
        let scale = self.normalization.gamma_scale() / self.normalization.x_scale(2);
        (mu * scale, sigma * scale)
    }

    /// Chance-constraint margin at the model's own `eta`.
    pub fn chance_constraint_margin(&self, v: [f64; 3]) -> f64 {
        self.margin_with_z(v, self.z_eta)
    }

    /// Margin `mu' - z * sigma'` for an externally supplied quantile.
    pub fn margin_with_z(&self, v: [f64; 3], z: f64) -> f64 {
        let (mu, sigma) = self.deriv_dp_stats(v);
        mu - z * sigma
    }

    /// Worst chance-constraint margin over the model's virtual points.
    pub fn worst_virtual_margin(&self) -> f64 {
        self.virtual_points
            .iter()
            .map(|&v| self.chance_constraint_margin(v))
            .fold(f64::INFINITY, f64::min)
    }

    /// NLML of the training data at the model's hyperparameters, from the
    /// cached factorization.
    pub fn nlml_value(&self) -> f64 {
        0.5 * self.resid.dot(&self.alpha)
            + 0.5 * self.chol.log_det()
            + 0.5 * self.resid.len() as f64 * LN_2PI
    }
}

/// Negative log marginal likelihood of normalized targets `y` under the
/// given mean and hyperparameters.
pub fn nlml(
    xs: &[[f64; 3]],
    y: &DVector<f64>,
    mean: &MeanModel,
    th: &Hyperparameters,
) -> Result<f64> {
    th.validate()?;
    if xs.is_empty() {
        return Err(Error::EmptyInput("nlml".to_string()));
    }
    let resid = DVector::from_iterator(
        xs.len(),
        xs.iter().zip(y.iter()).map(|(x, yi)| yi - mean.value(x)),
    );
    nlml_residual(xs, &resid, th)
}

fn nlml_residual(xs: &[[f64; 3]], resid: &DVector<f64>, th: &Hyperparameters) -> Result<f64> {
    let k = kernel_matrix(xs, th, KernelKind::Value);
    let chol = factor_kernel_matrix(&k, th.sigma_n * th.sigma_n, th.sigma_f * th.sigma_f)?;
    let alpha = chol.solve_vec(resid);
    Ok(0.5 * resid.dot(&alpha) + 0.5 * chol.log_det() + 0.5 * xs.len() as f64 * LN_2PI)
}

/// Chance-constraint margins at the virtual points for a candidate theta.
///
/// Returns one margin per virtual point and their minimum.
fn virtual_margins(
    xs: &[[f64; 3]],
    th: &Hyperparameters,
    virtual_points: &[[f64; 3]],
    mu_dp: &[f64],
    z: f64,
) -> Result<(Vec<f64>, f64)> {
    let kd = kernel_matrix(xs, th, KernelKind::DerivPp);
    let deriv_unit = th.sigma_f * th.sigma_f / (th.ell[2] * th.ell[2]);
    let factor = SpdFactor::new(&kd, deriv_unit)?;
    let n = xs.len();
    let m = virtual_points.len();
    let mut cross = DMatrix::<f64>::zeros(n, m);
    for (j, v) in virtual_points.iter().enumerate() {
        cross.set_column(j, &cross_kernel(v, xs, th, KernelKind::DerivPp));
    }
    let solved = factor.solve_mat(&cross);
    let mut margins = Vec::with_capacity(m);
    let mut worst = f64::INFINITY;
    for (j, v) in virtual_points.iter().enumerate() {
        let prior = dkernel_pp(v, v, th);
        let var = prior - cross.column(j).dot(&solved.column(j));
        let sigma = var.max(0.0).sqrt();
        let margin = mu_dp[j] - z * sigma;
        worst = worst.min(margin);
        margins.push(margin);
    }
    Ok((margins, worst))
}

/// Optimizer budget and start policy for [`train`].
#[derive(Debug, Clone)]
pub struct TrainControl {
    /// Objective evaluations per start.
    pub maxeval: usize,
    /// Number of starts; the first is the supplied initial theta, the
    /// rest are drawn deterministically from `seed`.
    pub starts: usize,
    /// Initial trust-region radius in log-space.
    pub rhobeg: f64,
    pub seed: u64,
}

impl Default for TrainControl {
    fn default() -> Self {
        TrainControl {
            maxeval: 150,
            starts: 5,
            rhobeg: 0.5,
            seed: 0,
        }
    }
}

struct EvalContext {
    xs: Vec<[f64; 3]>,
    resid: DVector<f64>,
    virtual_points: Vec<[f64; 3]>,
    mu_dp: Vec<f64>,
    z: f64,
    constrained: bool,
}

struct EvalOut {
    nlml: f64,
    margins: Vec<f64>,
    worst_margin: f64,
}

impl EvalContext {
    fn evaluate(&self, u: &[f64]) -> EvalOut {
        let th = Hyperparameters::from_log(u);
        let nlml = match nlml_residual(&self.xs, &self.resid, &th) {
            Ok(v) if v.is_finite() => v,
            _ => {
                return EvalOut {
                    nlml: EVAL_FAILURE_NLML,
                    margins: vec![-EVAL_FAILURE_NLML; self.virtual_points.len()],
                    worst_margin: -EVAL_FAILURE_NLML,
                }
            }
        };
        if !self.constrained {
            return EvalOut {
                nlml,
                margins: Vec::new(),
                worst_margin: f64::INFINITY,
            };
        }
        match virtual_margins(&self.xs, &th, &self.virtual_points, &self.mu_dp, self.z) {
            Ok((margins, worst)) => EvalOut {
                nlml,
                margins,
                worst_margin: worst,
            },
            Err(_) => EvalOut {
                nlml: EVAL_FAILURE_NLML,
                margins: vec![-EVAL_FAILURE_NLML; self.virtual_points.len()],
                worst_margin: -EVAL_FAILURE_NLML,
            },
        }
    }
}

#[derive(Clone)]
struct Candidate {
    u: Vec<f64>,
    nlml: f64,
    worst_margin: f64,
}

struct Memo {
    key: Vec<f64>,
    out: Option<EvalOut>,
    best_feasible: Option<Candidate>,
    closest_to_feasible: Option<Candidate>,
}

impl Memo {
    fn new() -> Self {
        Memo {
            key: Vec::new(),
            out: None,
            best_feasible: None,
            closest_to_feasible: None,
        }
    }
}

fn ensure_evaluated(ctx: &EvalContext, memo: &Rc<RefCell<Memo>>, u: &[f64]) {
    let mut memo = memo.borrow_mut();
    if memo.out.is_some() && memo.key == u {
        return;
    }
    let out = ctx.evaluate(u);
    let feasible = !ctx.constrained || out.worst_margin >= -FEASIBILITY_TOL;
    if out.nlml < EVAL_FAILURE_NLML {
        if feasible
            && memo
                .best_feasible
                .as_ref()
                .is_none_or(|b| out.nlml < b.nlml)
        {
            memo.best_feasible = Some(Candidate {
                u: u.to_vec(),
                nlml: out.nlml,
                worst_margin: out.worst_margin,
            });
        }
        if !feasible
            && memo
                .closest_to_feasible
                .as_ref()
                .is_none_or(|b| out.worst_margin > b.worst_margin)
        {
            memo.closest_to_feasible = Some(Candidate {
                u: u.to_vec(),
                nlml: out.nlml,
                worst_margin: out.worst_margin,
            });
        }
    }
    memo.key = u.to_vec();
    memo.out = Some(out);
}

/// Train hyperparameters by COBYLA in log-space with multi-start, and
/// return the assembled model at the best (feasible) NLML.
///
/// The initial theta is always evaluated as a candidate, so the returned
/// NLML never exceeds `nlml(th0)` when `th0` is itself admissible.
pub fn train(
    train: &Dataset,
    mean: MeanModel,
    th0: &Hyperparameters,
    constrained: bool,
    eta: f64,
    virtual_points: &[[f64; 3]],
    ctrl: &TrainControl,
) -> Result<GpModel> {
    th0.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput("GP training set".to_string()));
    }
    if constrained {
        if virtual_points.is_empty() {
            return Err(Error::EmptyInput("virtual point set".to_string()));
        }
        if !(eta > 0.0 && eta < 0.5) {
            return Err(Error::Domain(format!(
                "constrained training requires 0 < eta < 0.5, got {eta}"
            )));
        }
    }
    let z = inv_norm_cdf(1.0 - eta)?;
    let xs = train.features_normalized();
    let y = train.gammas_normalized();
    let resid = DVector::from_iterator(
        xs.len(),
        xs.iter().zip(y.iter()).map(|(x, yi)| yi - mean.value(x)),
    );
    let mu_dp: Vec<f64> = virtual_points.iter().map(|v| mean.dp(v)).collect();

    let ctx = Rc::new(EvalContext {
        xs,
        resid,
        virtual_points: virtual_points.to_vec(),
        mu_dp,
        z,
        constrained,
    });
    let memo = Rc::new(RefCell::new(Memo::new()));

    let lo = HYPER_LO.ln();
    let hi = HYPER_HI.ln();
    let clamp = |mut u: Vec<f64>| -> Vec<f64> {
        for v in &mut u {
            *v = v.clamp(lo, hi);
        }
        u
    };

    let mut starts: Vec<Vec<f64>> = vec![clamp(th0.to_log().to_vec())];
    let mut rng = ChaCha8Rng::seed_from_u64(ctrl.seed);
    while starts.len() < ctrl.starts.max(1) {
        let u = vec![
            rng.gen_range(0.1_f64.ln()..10.0_f64.ln()),
            rng.gen_range(0.1_f64.ln()..10.0_f64.ln()),
            rng.gen_range(0.1_f64.ln()..10.0_f64.ln()),
            rng.gen_range(0.2_f64.ln()..5.0_f64.ln()),
            rng.gen_range(1e-3_f64.ln()..0.5_f64.ln()),
        ];
        starts.push(clamp(u));
    }

    // th0 is candidate zero regardless of where the optimizer wanders
    ensure_evaluated(&ctx, &memo, &starts[0]);

    let bounds = [(lo, hi); 5];
    let stop = StopTols {
        ftol_rel: 1e-10,
        ftol_abs: 1e-12,
        xtol_rel: 0.0,
        xtol_abs: vec![1e-5; 5],
    };

    let m = if constrained {
        ctx.virtual_points.len()
    } else {
        0
    };
    for u0 in &starts {
        let obj = {
            let ctx = ctx.clone();
            move |u: &[f64], memo: &mut Rc<RefCell<Memo>>| -> f64 {
                ensure_evaluated(&ctx, memo, u);
                memo.borrow().out.as_ref().unwrap().nlml
            }
        };
        let cons: Vec<_> = (0..m)
            .map(|j| {
                let ctx = ctx.clone();
                move |u: &[f64], memo: &mut Rc<RefCell<Memo>>| -> f64 {
                    ensure_evaluated(&ctx, memo, u);
                    memo.borrow().out.as_ref().unwrap().margins[j]
                }
            })
            .collect();
        let _ = minimize(
            obj,
            u0,
            &bounds,
            &cons,
            memo.clone(),
            ctrl.maxeval,
            RhoBeg::All(ctrl.rhobeg),
            Some(stop.clone()),
        );
    }

    let best = {
        let memo = memo.borrow();
        match &memo.best_feasible {
            Some(b) => b.clone(),
            None => {
                let report = memo
                    .closest_to_feasible
                    .as_ref()
                    .map(|c| {
                        format!(
                            "worst chance-constraint margin {:.3e} at theta {:?}",
                            c.worst_margin,
                            Hyperparameters::from_log(&c.u)
                        )
                    })
                    .unwrap_or_else(|| "no evaluable candidate found".to_string());
                return Err(Error::Infeasible(format!(
                    "constrained training exhausted its budget without a feasible point: {report}"
                )));
            }
        }
    };

    let th = Hyperparameters::from_log(&best.u);
    let train_raw: Vec<([f64; 3], f64)> = train
        .samples
        .iter()
        .map(|s| (s.features(), s.gamma))
        .collect();
    GpModel::assemble(
        train_raw,
        th,
        mean,
        train.normalization.clone(),
        constrained,
        eta,
        virtual_points.to_vec(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{FeatureSample, SourceKind};
    use crate::polymean::{basis_len, fit_constrained_mean, MeanConstraints};

    fn th(ell: [f64; 3], sf: f64, sn: f64) -> Hyperparameters {
        Hyperparameters::new(ell, sf, sn)
    }

    /// Gauss-Jordan inverse; dense test oracle.
    fn dense_inverse(a: &DMatrix<f64>) -> DMatrix<f64> {
        let n = a.nrows();
        let mut aug = DMatrix::<f64>::zeros(n, 2 * n);
        aug.view_mut((0, 0), (n, n)).copy_from(a);
        for i in 0..n {
            aug[(i, n + i)] = 1.0;
        }
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&i, &j| {
                    aug[(i, col)]
                        .abs()
                        .partial_cmp(&aug[(j, col)].abs())
                        .unwrap()
                })
                .unwrap();
            aug.swap_rows(pivot, col);
            let d = aug[(col, col)];
            for j in 0..2 * n {
                aug[(col, j)] /= d;
            }
            for i in 0..n {
                if i != col {
                    let f = aug[(i, col)];
                    for j in 0..2 * n {
                        aug[(i, j)] -= f * aug[(col, j)];
                    }
                }
            }
        }
        aug.view((0, n), (n, n)).into()
    }

    fn dense_log_det(a: &DMatrix<f64>) -> f64 {
        let lu = a.clone().lu();
        (0..a.nrows()).map(|i| lu.u()[(i, i)].abs().ln()).sum()
    }

    fn model_from_points(
        points: &[([f64; 3], f64)],
        t: Hyperparameters,
        mean: MeanModel,
    ) -> GpModel {
        GpModel::assemble(
            points.to_vec(),
            t,
            mean,
            Normalization::identity(),
            false,
            0.025,
            Vec::new(),
        )
        .unwrap()
    }

    #[test]
    fn nlml_single_point_closed_form() {
        let t = th([1.0, 1.0, 1.0], 1.2, 0.3);
        let y = DVector::from_row_slice(&[0.0]);
        let got = nlml(&[[0.0, 0.0, 0.0]], &y, &MeanModel::Zero, &t).unwrap();
        let want = 0.5 * (1.2_f64 * 1.2 + 0.3 * 0.3).ln() + 0.5 * LN_2PI;
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn nlml_matches_dense_oracle() {
        let t = th([0.8, 1.1, 0.6], 1.3, 0.2);
        let xs = [
            [0.0, 0.1, -0.4],
            [0.5, -0.3, 0.2],
            [-0.6, 0.4, 0.9],
            [0.3, 0.8, -0.7],
        ];
        let y = DVector::from_row_slice(&[0.4, -0.2, 0.9, 0.1]);
        let got = nlml(&xs, &y, &MeanModel::Zero, &t).unwrap();

        let mut k = kernel_matrix(&xs, &t, KernelKind::Value);
        for i in 0..4 {
            k[(i, i)] += 0.04;
        }
        let kinv = dense_inverse(&k);
        let quad = (y.transpose() * &kinv * &y)[(0, 0)];
        let want = 0.5 * quad + 0.5 * dense_log_det(&k) + 2.0 * LN_2PI;
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }

    #[test]
    fn nlml_is_translation_invariant() {
        let t = th([1.0, 0.7, 1.4], 0.9, 0.15);
        let xs = [[0.0, 0.0, 0.0], [0.4, -0.2, 0.6], [-0.5, 0.3, -0.1]];
        let y = DVector::from_row_slice(&[0.2, -0.4, 0.7]);
        let base = nlml(&xs, &y, &MeanModel::Zero, &t).unwrap();
        for c in [-3.0, 0.6, 12.5] {
            let shifted = DVector::from_iterator(3, y.iter().map(|v| v + c));
            let mut beta = DVector::zeros(basis_len(0));
            beta[0] = c;
            let mean = MeanModel::Poly(PolyMean {
                degree: 0,
                beta,
                lambda_reg: 0.0,
                eps_s_max: 0.0,
            });
            let got = nlml(&xs, &shifted, &mean, &t).unwrap();
            assert!((got - base).abs() < 1e-10, "c={c}: {got} vs {base}");
        }
    }

    #[test]
    fn noise_free_model_interpolates_training_targets() {
        let t = th([0.8, 0.8, 0.8], 1.0, 1e-8);
        let points = [
            ([0.0, 0.0, 0.0], 1.0),
            ([1.0, 0.5, -0.5], -0.7),
            ([-1.0, 0.7, 0.8], 0.4),
            ([0.5, -1.0, 0.3], 1.6),
        ];
        let m = model_from_points(&points, t, MeanModel::Zero);
        for (x, target) in &points {
            let pred = m.predict(*x);
            assert!(
                (pred.mean - target).abs() <= 1e-6 * target.abs().max(1.0),
                "{} vs {target}",
                pred.mean
            );
            assert!(pred.variance <= 1e-8);
        }
    }

    #[test]
    fn far_point_reverts_to_prior() {
        let t = th([0.5, 0.5, 0.5], 1.3, 0.05);
        let points = [([0.0, 0.0, 0.0], 2.0), ([0.3, 0.1, -0.2], 1.5)];
        let m = model_from_points(&points, t, MeanModel::Zero);
        let pred = m.predict([50.0, 50.0, 50.0]);
        assert!(pred.mean.abs() < 1e-10);
        assert!((pred.variance - 1.69).abs() < 1e-10);
    }

    #[test]
    fn far_point_reverts_to_polynomial_mean() {
        let t = th([0.5, 0.5, 0.5], 1.3, 0.05);
        let mut beta = DVector::zeros(basis_len(1));
        beta[0] = 0.7;
        beta[3] = 0.2; // linear in p
        let pm = PolyMean {
            degree: 1,
            beta,
            lambda_reg: 0.0,
            eps_s_max: 0.0,
        };
        let points = [([0.0, 0.0, 0.0], 2.0), ([0.3, 0.1, -0.2], 1.5)];
        let m = model_from_points(&points, t, MeanModel::Poly(pm.clone()));
        let far = [60.0, -40.0, 30.0];
        let pred = m.predict(far);
        assert!((pred.mean - pm.value(&far)).abs() < 1e-10);
        assert!((pred.variance - 1.69).abs() < 1e-10);
        // derivative stats likewise revert to the mean slope and the
        // prior derivative variance
        let (mu, sigma) = m.deriv_dp_stats(far);
        assert!((mu - 0.2).abs() < 1e-12);
        assert!((sigma * sigma - 1.69 / 0.25).abs() < 1e-9);
    }

    #[test]
    fn two_point_posterior_matches_hand_solution() {
        let t = th([1.0, 1.0, 1.0], 1.1, 0.2);
        let points = [([0.0, 0.0, 0.0], 0.8), ([0.6, -0.4, 0.2], -0.3)];
        let m = model_from_points(&points, t, MeanModel::Zero);
        let xstar = [0.2, 0.3, -0.1];

        let xs = [points[0].0, points[1].0];
        let mut k = kernel_matrix(&xs, &t, KernelKind::Value);
        k[(0, 0)] += 0.04;
        k[(1, 1)] += 0.04;
        let kinv = dense_inverse(&k);
        let y = DVector::from_row_slice(&[0.8, -0.3]);
        let kv = cross_kernel(&xstar, &xs, &t, KernelKind::Value);
        let mean = kv.dot(&(&kinv * &y));
        let var = 1.1 * 1.1 - kv.dot(&(&kinv * &kv));

        let pred = m.predict(xstar);
        assert!((pred.mean - mean).abs() < 1e-10);
        assert!((pred.variance - var).abs() < 1e-10);
    }

    #[test]
    fn derivative_variance_collapses_at_training_input() {
        let t = th([0.9, 0.9, 0.7], 1.4, 0.1);
        let points = [
            ([0.0, 0.0, 0.0], 0.5),
            ([0.8, 0.2, 0.5], 0.9),
            ([-0.4, 0.6, -0.6], 0.1),
        ];
        let m = model_from_points(&points, t, MeanModel::Zero);
        let unit = 1.4 * 1.4 / (0.7 * 0.7);
        for (x, _) in &points {
            let (_, sigma) = m.deriv_dp_stats(*x);
            assert!(sigma * sigma <= 1e-8 * unit, "sigma^2 = {}", sigma * sigma);
        }
    }

    #[test]
    fn derivative_variance_reverts_to_prior_far_away() {
        let t = th([0.5, 0.5, 0.6], 1.2, 0.1);
        let points = [([0.0, 0.0, 0.0], 0.5), ([0.4, -0.2, 0.1], 0.7)];
        let m = model_from_points(&points, t, MeanModel::Zero);
        let (mu, sigma) = m.deriv_dp_stats([40.0, 40.0, 40.0]);
        assert_eq!(mu, 0.0);
        let prior = 1.2 * 1.2 / (0.6 * 0.6);
        assert!((sigma * sigma - prior).abs() < 1e-9);
    }

    #[test]
    fn derivative_stats_match_dense_oracle() {
        let t = th([0.8, 1.2, 0.9], 1.5, 0.2);
        let points = [([0.1, -0.3, 0.4], 0.6), ([-0.5, 0.2, -0.2], 1.1)];
        let m = model_from_points(&points, t, MeanModel::Zero);
        let xstar = [0.3, 0.1, 0.2];

        let xs = [points[0].0, points[1].0];
        let kd = kernel_matrix(&xs, &t, KernelKind::DerivPp);
        let kinv = dense_inverse(&kd);
        let kv = cross_kernel(&xstar, &xs, &t, KernelKind::DerivPp);
        let want_var = dkernel_pp(&xstar, &xstar, &t) - kv.dot(&(&kinv * &kv));

        let (_, sigma) = m.deriv_dp_stats(xstar);
        assert!((sigma * sigma - want_var).abs() < 1e-10);
    }

    #[test]
    fn margin_is_mean_minus_quantile_times_sigma() {
        let t = th([1.0, 1.0, 1.0], 1.0, 0.2);
        let points = [([0.0, 0.0, 0.0], 0.5), ([0.5, 0.5, 0.5], 0.9)];
        let m = model_from_points(&points, t, MeanModel::Zero);
        let v = [0.7, -0.3, 0.4];
        let z = inv_norm_cdf(0.975).unwrap();
        let (mu, sigma) = m.deriv_dp_stats(v);
        assert!((m.margin_with_z(v, z) - (mu - z * sigma)).abs() < 1e-14);
        // eta = 0.025: unit sigma costs z = 1.95996, so a mean of 2 leaves
        // a margin of about 0.04004
        assert!((2.0 - z * 1.0 - 0.0400360154599460).abs() < 1e-9);
        // boundary case: zero mean and zero sigma is exactly feasible
        assert_eq!(0.0 - z * 0.0, 0.0);
    }

    #[test]
    fn posterior_variance_is_never_negative() {
        let ds = monotone_dataset();
        let raw: Vec<([f64; 3], f64)> =
            ds.samples.iter().map(|s| (s.features(), s.gamma)).collect();
        let m = GpModel::assemble(
            raw,
            th([0.6, 0.6, 0.6], 1.0, 1e-3),
            MeanModel::Zero,
            ds.normalization.clone(),
            false,
            0.025,
            Vec::new(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        for _ in 0..1000 {
            let x = [
                rng.gen_range(-0.01..0.02),
                rng.gen_range(-0.01..0.02),
                rng.gen_range(0.0..60.0),
            ];
            let pred = m.predict(x);
            assert!(pred.variance >= 0.0);
            assert!(pred.ci95_low <= pred.mean && pred.mean <= pred.ci95_high);
        }
    }

    fn monotone_dataset() -> Dataset {
        let mut samples = Vec::new();
        for i in 0..6 {
            for j in 0..4 {
                let p = i as f64 * 8.0 + 5.0;
                let es = j as f64 * 0.004;
                samples.push(FeatureSample {
                    eps_v: 0.002 * j as f64 - 0.001 * i as f64,
                    eps_s: es,
                    p,
                    gamma: 3.0 + 0.9 * p + 150.0 * es,
                    confinement: p,
                    source: SourceKind::Simulated,
                });
            }
        }
        Dataset::from_samples(samples)
    }

    #[test]
    fn training_on_a_gp_draw_recovers_the_generating_likelihood() {
        // draw targets from the prior at a known theta; training from that
        // theta must not end above its NLML
        let th_gen = th([0.7, 1.2, 0.9], 1.1, 0.05);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let xs: Vec<[f64; 3]> = (0..24)
            .map(|_| {
                [
                    rng.gen_range(-1.5..1.5),
                    rng.gen_range(-1.5..1.5),
                    rng.gen_range(-1.5..1.5),
                ]
            })
            .collect();
        let mut k = kernel_matrix(&xs, &th_gen, KernelKind::Value);
        for i in 0..xs.len() {
            k[(i, i)] += th_gen.sigma_n * th_gen.sigma_n;
        }
        let chol = nalgebra::Cholesky::new(k).unwrap();
        let z = DVector::from_iterator(
            xs.len(),
            (0..xs.len()).map(|_| {
                let u1: f64 = rng.gen_range(1e-12..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            }),
        );
        let y = chol.l() * z;

        let samples: Vec<FeatureSample> = xs
            .iter()
            .zip(y.iter())
            .map(|(x, &g)| FeatureSample {
                eps_v: x[0],
                eps_s: x[1],
                p: x[2],
                gamma: g,
                confinement: 1.0,
                source: SourceKind::Simulated,
            })
            .collect();
        let mut ds = Dataset::from_samples(samples);
        ds.normalization = Normalization::identity();

        let ctrl = TrainControl {
            maxeval: 60,
            starts: 2,
            ..TrainControl::default()
        };
        let model = train(&ds, MeanModel::Zero, &th_gen, false, 0.025, &[], &ctrl).unwrap();

        let at_generator = nlml(&xs, &y, &MeanModel::Zero, &th_gen).unwrap();
        let at_end = nlml(&xs, &y, &MeanModel::Zero, model.hyperparameters()).unwrap();
        assert!(
            at_end <= at_generator + 1e-9,
            "{at_end} vs generating {at_generator}"
        );
    }

    #[test]
    fn optimal_start_is_a_fixed_point() {
        let ds = monotone_dataset();
        let th0 = th([1.0, 1.0, 1.0], 1.0, 0.1);
        let ctrl = TrainControl {
            maxeval: 60,
            starts: 2,
            ..TrainControl::default()
        };
        let first = train(&ds, MeanModel::Zero, &th0, false, 0.025, &[], &ctrl).unwrap();
        let tuned = *first.hyperparameters();

        let again = train(&ds, MeanModel::Zero, &tuned, false, 0.025, &[], &ctrl).unwrap();
        let xs = ds.features_normalized();
        let y = DVector::from_vec(ds.gammas_normalized());
        let a = nlml(&xs, &y, &MeanModel::Zero, &tuned).unwrap();
        let b = nlml(&xs, &y, &MeanModel::Zero, again.hyperparameters()).unwrap();
        assert!(b <= a + 1e-9);
    }

    #[test]
    fn constrained_training_reaches_full_feasibility() {
        let ds = monotone_dataset();
        let virt: Vec<[f64; 3]> = {
            let mut v = Vec::new();
            for a in 0..3 {
                for b in 0..3 {
                    for c in 0..3 {
                        v.push([
                            -1.2 + 1.2 * a as f64,
                            -1.2 + 1.2 * b as f64,
                            -1.2 + 1.2 * c as f64,
                        ]);
                    }
                }
            }
            v
        };
        let est = crate::polymean::estimate_eps_s_max(&ds).unwrap();
        let pm = fit_constrained_mean(
            &ds,
            2,
            1e-6,
            &virt,
            ds.normalization.normalize_eps_s(est.eps_s),
            MeanConstraints::default(),
        )
        .unwrap();
        let th0 = th([1.0, 1.0, 1.0], 1.0, 0.1);
        let ctrl = TrainControl {
            maxeval: 80,
            starts: 3,
            ..TrainControl::default()
        };
        let model = train(&ds, MeanModel::Poly(pm), &th0, true, 0.025, &virt, &ctrl).unwrap();
        assert!(model.constrained());
        assert!(
            model.worst_virtual_margin() >= -FEASIBILITY_TOL,
            "worst margin {}",
            model.worst_virtual_margin()
        );
    }

    #[test]
    fn chance_margin_bounds_empirical_violation_frequency() {
        use rand::Rng;
        let ds = monotone_dataset();
        let virt = vec![[0.0, 0.0, 0.0], [0.5, 0.5, 0.5]];
        let est = crate::polymean::estimate_eps_s_max(&ds).unwrap();
        let pm = fit_constrained_mean(
            &ds,
            2,
            1e-6,
            &virt,
            ds.normalization.normalize_eps_s(est.eps_s),
            MeanConstraints::default(),
        )
        .unwrap();
        let th0 = th([1.0, 1.0, 1.0], 1.0, 0.1);
        let ctrl = TrainControl {
            maxeval: 60,
            starts: 2,
            ..TrainControl::default()
        };
        let eta = 0.025;
        let model = train(&ds, MeanModel::Poly(pm), &th0, true, eta, &virt, &ctrl).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for &v in &virt {
            let margin = model.chance_constraint_margin(v);
            assert!(margin >= -FEASIBILITY_TOL);
            let (mu, sigma) = model.deriv_dp_stats(v);
            let n = 200_000;
            let mut violations = 0usize;
            for _ in 0..n {
                // Box-Muller sample of the Gaussian marginal
                let u1: f64 = rng.gen_range(1e-12..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                let g = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                if mu + sigma * g < 0.0 {
                    violations += 1;
                }
            }
            let freq = violations as f64 / n as f64;
            let se = (eta * (1.0 - eta) / n as f64).sqrt();
            assert!(
                freq <= eta + 3.0 * se + 1e-12,
                "violation frequency {freq} exceeds eta {eta} + 3 se {se}"
            );
        }
    }
}
