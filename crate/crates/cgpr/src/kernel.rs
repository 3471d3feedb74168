//! Anisotropic squared-exponential kernel, its pressure-pressure
//! derivative kernel, and kernel-matrix assembly.
//!
//! The value kernel is
//! `k(x, x') = sigma_f^2 exp[-sum_j (x_j - x'_j)^2 / (2 l_j^2)]`
//! with one length scale per input (eps_v, eps_s, p). The derivative
//! kernel is the mixed second derivative with respect to the pressure
//! coordinate of both arguments,
//! `k'(x, x') = k(x, x') * (1/l_3^2 - (x_3 - x'_3)^2 / l_3^4)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::SpdFactor;

/// GP kernel and noise parameters `{l_1, l_2, l_3, sigma_f, sigma_n}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparameters {
    /// Length scales for (eps_v, eps_s, p), in normalized feature units.
    pub ell: [f64; 3],
    /// Signal standard deviation.
    pub sigma_f: f64,
    /// Noise standard deviation.
    pub sigma_n: f64,
}

impl Hyperparameters {
    pub fn new(ell: [f64; 3], sigma_f: f64, sigma_n: f64) -> Self {
        Hyperparameters {
            ell,
            sigma_f,
            sigma_n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.ell[0],
            self.ell[1],
            self.ell[2],
            self.sigma_f,
            self.sigma_n,
        ];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "hyperparameters must be finite and strictly positive: {self:?}"
            )))
        }
    }

    /// Natural-log coordinates used by the optimizer.
    pub fn to_log(&self) -> [f64; 5] {
        [
            self.ell[0].ln(),
            self.ell[1].ln(),
            self.ell[2].ln(),
            self.sigma_f.ln(),
            self.sigma_n.ln(),
        ]
    }

    pub fn from_log(u: &[f64]) -> Self {
        Hyperparameters {
            ell: [u[0].exp(), u[1].exp(), u[2].exp()],
            sigma_f: u[3].exp(),
            sigma_n: u[4].exp(),
        }
    }
}

/// Which kernel a matrix is assembled from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    Value,
    DerivPp,
}

/// Squared-exponential kernel value.
#[inline]
pub fn k_se(x: &[f64; 3], x2: &[f64; 3], th: &Hyperparameters) -> f64 {
    let mut expo = 0.0;
    for j in 0..3 {
        let d = x[j] - x2[j];
        expo += d * d / (2.0 * th.ell[j] * th.ell[j]);
    }
    th.sigma_f * th.sigma_f * (-expo).exp()
}

/// Mixed derivative kernel `d^2 k / dp dp'`.
#[inline]
pub fn dkernel_pp(x: &[f64; 3], x2: &[f64; 3], th: &Hyperparameters) -> f64 {
    let l3sq = th.ell[2] * th.ell[2];
    let d3 = x[2] - x2[2];
    k_se(x, x2, th) * (1.0 / l3sq - d3 * d3 / (l3sq * l3sq))
}

#[inline]
fn kernel_value(kind: KernelKind, x: &[f64; 3], x2: &[f64; 3], th: &Hyperparameters) -> f64 {
    match kind {
        KernelKind::Value => k_se(x, x2, th),
        KernelKind::DerivPp => dkernel_pp(x, x2, th),
    }
}

/// Assemble the exactly-symmetric kernel matrix over the rows of `xs`.
pub fn kernel_matrix(xs: &[[f64; 3]], th: &Hyperparameters, kind: KernelKind) -> DMatrix<f64> {
    let n = xs.len();
    let mut k = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = kernel_value(kind, &xs[i], &xs[j], th);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Kernel vector `k(x, X)` against the rows of `xs`.
pub fn cross_kernel(
    x: &[f64; 3],
    xs: &[[f64; 3]],
    th: &Hyperparameters,
    kind: KernelKind,
) -> DVector<f64> {
    DVector::from_iterator(xs.len(), xs.iter().map(|xi| kernel_value(kind, x, xi, th)))
}

/// Factor `K + diag_add * I` under the jitter escalation policy.
///
/// `jitter_unit` should be the kernel's diagonal scale: the signal
/// variance for the value kernel, `sigma_f^2 / l_3^2` for the derivative
/// kernel.
pub fn factor_kernel_matrix(
    k: &DMatrix<f64>,
    diag_add: f64,
    jitter_unit: f64,
) -> Result<SpdFactor> {
    let mut m = k.clone();
    for i in 0..m.nrows() {
        m[(i, i)] += diag_add;
    }
    SpdFactor::new(&m, jitter_unit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn th(ell: [f64; 3], sf: f64, sn: f64) -> Hyperparameters {
        Hyperparameters::new(ell, sf, sn)
    }

    fn random_point(rng: &mut ChaCha8Rng) -> [f64; 3] {
        [
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
        ]
    }

    fn random_theta(rng: &mut ChaCha8Rng) -> Hyperparameters {
        th(
            [
                rng.gen_range(0.2..3.0),
                rng.gen_range(0.2..3.0),
                rng.gen_range(0.2..3.0),
            ],
            rng.gen_range(0.3..2.5),
            rng.gen_range(0.01..0.5),
        )
    }

    /// Central finite difference of `d^2 k / dp dp'`; oracle for the
    /// analytic derivative kernel.
    fn dkernel_pp_fd(x: &[f64; 3], x2: &[f64; 3], t: &Hyperparameters) -> f64 {
        let h = 1e-4 * t.ell[2];
        let mut xp = *x;
        let mut xm = *x;
        xp[2] += h;
        xm[2] -= h;
        let mut x2p = *x2;
        let mut x2m = *x2;
        x2p[2] += h;
        x2m[2] -= h;
        (k_se(&xp, &x2p, t) - k_se(&xp, &x2m, t) - k_se(&xm, &x2p, t) + k_se(&xm, &x2m, t))
            / (4.0 * h * h)
    }

    #[test]
    fn zero_distance_gives_signal_variance() {
        let t = th([0.7, 1.3, 2.0], 1.7, 0.1);
        let x = [0.4, -0.2, 1.0];
        assert!((k_se(&x, &x, &t) - 1.7 * 1.7).abs() < 1e-14);
    }

    #[test]
    fn unit_separation_matches_closed_form() {
        let t = th([1.0, 1.0, 1.0], 1.0, 0.1);
        let v = k_se(&[1.0, 0.0, 0.0], &[0.0, 0.0, 0.0], &t);
        assert!((v - 0.6065306597126334).abs() < 1e-15);
    }

    #[test]
    fn exponent_is_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let t = random_theta(&mut rng);
            let x = random_point(&mut rng);
            let x2 = random_point(&mut rng);
            let c: f64 = rng.gen_range(0.5..3.0);
            let scaled = th(
                [t.ell[0] * c, t.ell[1] * c, t.ell[2] * c],
                t.sigma_f,
                t.sigma_n,
            );
            let xs = [x[0] * c, x[1] * c, x[2] * c];
            let x2s = [x2[0] * c, x2[1] * c, x2[2] * c];
            let a = k_se(&x, &x2, &t);
            let b = k_se(&xs, &x2s, &scaled);
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300));
        }
    }

    #[test]
    fn kernel_is_symmetric_in_arguments() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..1000 {
            let t = random_theta(&mut rng);
            let x = random_point(&mut rng);
            let y = random_point(&mut rng);
            assert_eq!(k_se(&x, &y, &t), k_se(&y, &x, &t));
            assert_eq!(dkernel_pp(&x, &y, &t), dkernel_pp(&y, &x, &t));
        }
    }

    #[test]
    fn deriv_kernel_at_zero_separation() {
        let t = th([0.5, 0.9, 1.4], 2.0, 0.1);
        let x = [0.1, 0.2, 0.3];
        let expected = 4.0 / (1.4 * 1.4);
        assert!((dkernel_pp(&x, &x, &t) - expected).abs() < 1e-13);
    }

    #[test]
    fn deriv_kernel_vanishes_at_one_length_scale() {
        let t = th([1.0, 1.0, 0.8], 1.5, 0.1);
        let x = [0.0, 0.0, 0.8];
        let x2 = [0.0, 0.0, 0.0];
        assert!(dkernel_pp(&x, &x2, &t).abs() < 1e-14);
    }

    #[test]
    fn deriv_kernel_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..1000 {
            let t = random_theta(&mut rng);
            let x = random_point(&mut rng);
            let x2 = random_point(&mut rng);
            let analytic = dkernel_pp(&x, &x2, &t);
            let fd = dkernel_pp_fd(&x, &x2, &t);
            let denom = analytic
                .abs()
                .max(t.sigma_f * t.sigma_f / (t.ell[2] * t.ell[2]));
            assert!(
                (analytic - fd).abs() / denom <= 1e-6,
                "analytic {analytic} vs fd {fd}"
            );
        }
    }

    #[test]
    fn one_point_matrix_is_signal_variance() {
        let t = th([1.0, 1.0, 1.0], 1.3, 0.1);
        let k = kernel_matrix(&[[0.0, 0.0, 0.0]], &t, KernelKind::Value);
        assert_eq!(k.nrows(), 1);
        assert!((k[(0, 0)] - 1.69).abs() < 1e-12);
    }

    #[test]
    fn duplicate_rows_need_jitter() {
        let t = th([1.0, 1.0, 1.0], 1.0, 0.1);
        let xs = [[0.3, 0.3, 0.3], [0.3, 0.3, 0.3]];
        let k = kernel_matrix(&xs, &t, KernelKind::Value);
        assert!(SpdFactor::without_jitter(&k).is_none());
        let f = factor_kernel_matrix(&k, 0.0, t.sigma_f * t.sigma_f).unwrap();
        assert!(f.jitter() > 0.0);
    }

    #[test]
    fn deriv_matrix_diagonal_is_prior_derivative_variance() {
        let t = th([1.0, 1.0, 0.6], 1.1, 0.1);
        let xs = [[0.0, 0.0, 0.0], [0.5, -0.5, 0.2], [1.0, 0.3, -0.4]];
        let k = kernel_matrix(&xs, &t, KernelKind::DerivPp);
        for i in 0..3 {
            assert!((k[(i, i)] - 1.1 * 1.1 / (0.6 * 0.6)).abs() < 1e-12);
        }
    }

    #[test]
    fn value_matrix_plus_jitter_is_positive_definite() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for trial in 0..50 {
            let t = random_theta(&mut rng);
            let n = rng.gen_range(1..=20);
            let xs: Vec<[f64; 3]> = (0..n).map(|_| random_point(&mut rng)).collect();
            let k = kernel_matrix(&xs, &t, KernelKind::Value);
            let f = factor_kernel_matrix(&k, 0.0, t.sigma_f * t.sigma_f)
                .unwrap_or_else(|e| panic!("trial {trial}: {e}"));
            // all Cholesky pivots positive by construction
            assert!(f.log_det().is_finite());
        }
    }
}
