//! Reference KCC-style single-element material model: pressure-dependent
//! strength surfaces, damage-interpolated failure surface, and a
//! strain-driven triaxial-compression simulator.
//!
//! The yield condition is `sqrt(3 J2) <= Gamma(p, lambda)` with
//! `Gamma` interpolating between the yield, maximum, and residual
//! strength envelopes `a0 + p / (a1 + a2 p)` through the damage variable
//! `lambda`. Damage accumulates as `d lambda = h(p) d eps_bar^p`, and
//! plastic flow follows the partially associated potential
//! `sqrt(3 J2) - varpi * Gamma`, whose volumetric part is
//! `varpi * dGamma/dp / 3`.
//!
//! Scalars are compression-positive throughout. Strain-rate effects and
//! third-invariant dependence are out of scope here: the rate factor is
//! pinned to one and the stress-state function to unity (triaxial
//! compression only).
//!
//! The simulator holds the radial stress at the confinement level while
//! driving axial strain. Under that boundary condition the radial elastic
//! strain is `-nu` times the axial elastic strain, so the deviatoric
//! stress reduces to `q = E * (eps_a - eps_a^p)` with strains measured
//! from the end of the hydrostatic phase. Emitted records therefore start
//! at zero strain with both stresses at the confinement pressure, the
//! usual lab bookkeeping after consolidation.

use crate::dataset::TriaxialRecord;
use crate::error::{Error, Result};

/// Coefficients of one strength envelope `a0 + p / (a1 + a2 p)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceCoeffs {
    /// Cohesion intercept, MPa.
    pub a0: f64,
    /// Inverse initial slope, dimensionless.
    pub a1: f64,
    /// Inverse asymptote increment, 1/MPa.
    pub a2: f64,
}

/// Which strength envelope.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurfaceId {
    Yield,
    Max,
    Residual,
}

/// Material parameters of the reference model.
///
/// The defaults are a synthetic placeholder calibration chosen to produce
/// confinement strengthening and hardening-then-softening curves; they do
/// not reproduce any published concrete dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct KccParams {
    pub surf_yield: SurfaceCoeffs,
    pub surf_max: SurfaceCoeffs,
    pub surf_residual: SurfaceCoeffs,
    /// Damage-rate exponent for compressive pressure.
    pub b1: f64,
    /// Damage-rate exponent for tensile pressure.
    pub b2: f64,
    /// Tensile strength, MPa.
    pub f_t: f64,
    /// Damage interpolation knots `(lambda, eta)`.
    pub eta_table: Vec<(f64, f64)>,
    /// Damage at peak strength; `eta(lambda_m) = 1`.
    pub lambda_m: f64,
    /// Flow-rule associativity weight.
    pub varpi: f64,
    /// Young's modulus, MPa.
    pub young: f64,
    /// Poisson ratio.
    pub poisson: f64,
    /// Dynamic increase factor; fixed to 1 (quasi-static scope).
    pub rate_factor: f64,
}

impl Default for KccParams {
    fn default() -> Self {
        let lambda_m = 5e-4;
        KccParams {
            surf_yield: SurfaceCoeffs {
                a0: 9.0,
                a1: 0.65,
                a2: 0.015,
            },
            surf_max: SurfaceCoeffs {
                a0: 13.0,
                a1: 0.45,
                a2: 0.010,
            },
            surf_residual: SurfaceCoeffs {
                a0: 0.0,
                a1: 0.50,
                a2: 0.012,
            },
            b1: 0.6,
            b2: 0.9,
            f_t: 3.5,
            eta_table: vec![(0.0, 0.0), (lambda_m, 1.0), (10.0 * lambda_m, 0.05)],
            lambda_m,
            varpi: 0.5,
            young: 30000.0,
            poisson: 0.2,
            rate_factor: 1.0,
        }
    }
}

impl KccParams {
    pub fn validate(&self) -> Result<()> {
        for (name, s) in [
            ("yield", self.surf_yield),
            ("max", self.surf_max),
            ("residual", self.surf_residual),
        ] {
            if !(s.a1 > 0.0) || !s.a0.is_finite() || !s.a2.is_finite() {
                return Err(Error::Domain(format!(
                    "{name} surface coefficients invalid: a1 must be positive, got {s:?}"
                )));
            }
        }
        if self.eta_table.len() < 2 {
            return Err(Error::Domain("eta table needs at least two knots".into()));
        }
        if self.eta_table[0] != (0.0, 0.0) {
            return Err(Error::Domain("eta table must start at (0, 0)".into()));
        }
        for w in self.eta_table.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::Domain(
                    "eta table lambda knots must be strictly increasing".into(),
                ));
            }
        }
        if self
            .eta_table
            .iter()
            .any(|&(_, eta)| !(0.0..=1.0).contains(&eta))
        {
            return Err(Error::Domain("eta values must lie in [0, 1]".into()));
        }
        if !self
            .eta_table
            .iter()
            .any(|&(l, eta)| (l - self.lambda_m).abs() <= 1e-12 * self.lambda_m && eta == 1.0)
        {
            return Err(Error::Domain(
                "eta table must contain the knot (lambda_m, 1)".into(),
            ));
        }
        if !(self.lambda_m > 0.0) {
            return Err(Error::Domain("lambda_m must be positive".into()));
        }
        if !(self.poisson > 0.0 && self.poisson < 0.5) {
            return Err(Error::Domain(format!(
                "Poisson ratio must lie in (0, 0.5), got {}",
                self.poisson
            )));
        }
        if !(self.young > 0.0) || !(self.f_t > 0.0) {
            return Err(Error::Domain(
                "Young's modulus and tensile strength must be positive".into(),
            ));
        }
        if !(self.b1 >= 0.0 && self.b2 >= 0.0 && self.varpi >= 0.0) {
            return Err(Error::Domain(
                "b1, b2, and varpi must be nonnegative".into(),
            ));
        }
        if self.rate_factor != 1.0 {
            return Err(Error::Domain(
                "rate_factor is fixed to 1 in this quasi-static implementation".into(),
            ));
        }
        Ok(())
    }

    fn surface(&self, id: SurfaceId) -> SurfaceCoeffs {
        match id {
            SurfaceId::Yield => self.surf_yield,
            SurfaceId::Max => self.surf_max,
            SurfaceId::Residual => self.surf_residual,
        }
    }
}

/// Strength envelope value `a0 + p / (a1 + a2 p)`.
pub fn strength_surface(id: SurfaceId, p: f64, params: &KccParams) -> Result<f64> {
    let s = params.surface(id);
    let den = s.a1 + s.a2 * p;
    if den <= 0.0 {
        return Err(Error::Domain(format!(
            "pressure {p} MPa is beyond the validity pole of the {id:?} surface"
        )));
    }
    Ok(s.a0 + p / den)
}

/// Pressure derivative of a strength envelope, `a1 / (a1 + a2 p)^2`.
fn strength_surface_slope(id: SurfaceId, p: f64, params: &KccParams) -> Result<f64> {
    let s = params.surface(id);
    let den = s.a1 + s.a2 * p;
    if den <= 0.0 {
        return Err(Error::Domain(format!(
            "pressure {p} MPa is beyond the validity pole of the {id:?} surface"
        )));
    }
    Ok(s.a1 / (den * den))
}

/// Piecewise-linear damage interpolation, clamped beyond the table.
pub fn eta_of_lambda(lambda: f64, table: &[(f64, f64)]) -> f64 {
    if lambda <= table[0].0 {
        return table[0].1;
    }
    for w in table.windows(2) {
        let (l0, e0) = w[0];
        let (l1, e1) = w[1];
        if lambda <= l1 {
            return e0 + (e1 - e0) * (lambda - l0) / (l1 - l0);
        }
    }
    table[table.len() - 1].1
}

/// Failure surface `Gamma(p, lambda)` with unit rate factor and unit
/// stress-state function.
pub fn gamma_kcc(p: f64, lambda: f64, params: &KccParams) -> Result<f64> {
    let eta = eta_of_lambda(lambda, &params.eta_table);
    let sm = strength_surface(SurfaceId::Max, p, params)?;
    if lambda <= params.lambda_m {
        let sy = strength_surface(SurfaceId::Yield, p, params)?;
        Ok(eta * (sm - sy) + sy)
    } else {
        let sr = strength_surface(SurfaceId::Residual, p, params)?;
        Ok(eta * (sm - sr) + sr)
    }
}

/// Analytic pressure derivative of [`gamma_kcc`].
pub fn dgamma_dp(p: f64, lambda: f64, params: &KccParams) -> Result<f64> {
    let eta = eta_of_lambda(lambda, &params.eta_table);
    let sm = strength_surface_slope(SurfaceId::Max, p, params)?;
    if lambda <= params.lambda_m {
        let sy = strength_surface_slope(SurfaceId::Yield, p, params)?;
        Ok(eta * (sm - sy) + sy)
    } else {
        let sr = strength_surface_slope(SurfaceId::Residual, p, params)?;
        Ok(eta * (sm - sr) + sr)
    }
}

/// Damage rate coefficient `h(p)`.
pub fn damage_rate_coeff(p: f64, params: &KccParams) -> Result<f64> {
    let rf = params.rate_factor;
    let base = 1.0 + p / (rf * params.f_t);
    if base <= 0.0 {
        return Err(Error::Domain(format!(
            "damage rate undefined: 1 + p/(rf*ft) = {base} at p = {p} MPa"
        )));
    }
    let exponent = if p >= 0.0 { -params.b1 } else { -params.b2 };
    Ok(base.powf(exponent) / rf)
}

/// One emitted simulation step with its internal state.
#[derive(Debug, Clone)]
pub struct StepState {
    pub record: TriaxialRecord,
    pub lambda: f64,
    pub plastic: bool,
    /// Pressure (compression positive), MPa.
    pub p: f64,
    /// Deviatoric stress norm `sqrt(3 J2)`, MPa.
    pub sqrt3j2: f64,
    /// Failure surface at the emitted state, MPa.
    pub gamma: f64,
    /// Plastic work increment of the step, MPa (per unit volume).
    pub dissipation_increment: f64,
}

/// Strain-driven axisymmetric element under constant radial stress.
pub struct TriaxialElement {
    params: KccParams,
    pc: f64,
    /// Axial strain from the end of the hydrostatic phase.
    eps_a: f64,
    eps_p_a: f64,
    eps_p_r: f64,
    lambda: f64,
}

const CONSISTENCY_REL_TOL: f64 = 1e-8;
const RETURN_MAP_MAX_ITER: usize = 50;
const MIN_SUBSTEP_FRACTION: f64 = 1.0 / 65536.0;

impl TriaxialElement {
    pub fn new(pc: f64, params: KccParams) -> Result<Self> {
        params.validate()?;
        if !(pc >= 0.0) || !pc.is_finite() {
            return Err(Error::Domain(format!(
                "confinement pressure must be nonnegative, got {pc}"
            )));
        }
        Ok(TriaxialElement {
            params,
            pc,
            eps_a: 0.0,
            eps_p_a: 0.0,
            eps_p_r: 0.0,
            lambda: 0.0,
        })
    }

    fn q_of(&self, eps_a: f64, eps_p_a: f64) -> f64 {
        self.params.young * (eps_a - eps_p_a)
    }

    fn p_of(&self, q: f64) -> f64 {
        self.pc + q / 3.0
    }

    /// Radial strain consistent with the constant radial stress.
    fn eps_r_of(&self, eps_a: f64, eps_p_a: f64, eps_p_r: f64) -> f64 {
        -self.params.poisson * (eps_a - eps_p_a) + eps_p_r
    }

    /// Current emitted state.
    pub fn state(&self) -> StepState {
        let q = self.q_of(self.eps_a, self.eps_p_a);
        let p = self.p_of(q);
        let gamma = gamma_kcc(p, self.lambda, &self.params).unwrap_or(f64::NAN);
        StepState {
            record: TriaxialRecord {
                eps_a: self.eps_a,
                eps_r: self.eps_r_of(self.eps_a, self.eps_p_a, self.eps_p_r),
                sig_a: self.pc + q,
                sig_r: self.pc,
                confinement: self.pc,
            },
            lambda: self.lambda,
            plastic: false,
            p,
            sqrt3j2: q.abs(),
            gamma,
            dissipation_increment: 0.0,
        }
    }

    /// Advance the axial strain by `d_eps_a`, substepping on
    /// non-convergence, and return the new emitted state.
    pub fn step(&mut self, d_eps_a: f64) -> Result<StepState> {
        let mut remaining = d_eps_a;
        let mut sub = d_eps_a;
        let min_sub = d_eps_a.abs() * MIN_SUBSTEP_FRACTION;
        let mut plastic_any = false;
        let mut dissipation = 0.0;
        while remaining.abs() > 0.0 {
            if sub.abs() > remaining.abs() {
                sub = remaining;
            }
            match self.advance_once(sub) {
                Ok((plastic, diss)) => {
                    plastic_any |= plastic;
                    dissipation += diss;
                    remaining -= sub;
                    sub *= 2.0;
                }
                Err(Error::Convergence(_)) if sub.abs() / 2.0 >= min_sub => {
                    sub /= 2.0;
                }
                Err(Error::Convergence(msg)) => {
                    return Err(Error::Convergence(format!(
                        "{msg}; state dump: eps_a={}, eps_p_a={}, eps_p_r={}, lambda={}, pc={}",
                        self.eps_a, self.eps_p_a, self.eps_p_r, self.lambda, self.pc
                    )));
                }
                Err(e) => return Err(e),
            }
        }
        let mut st = self.state();
        st.plastic = plastic_any;
        st.dissipation_increment = dissipation;
        Ok(st)
    }

    /// One un-substepped strain increment. Returns (plastic, dissipation).
    fn advance_once(&mut self, d_eps_a: f64) -> Result<(bool, f64)> {
        let eps_a_new = self.eps_a + d_eps_a;
        let q_trial = self.q_of(eps_a_new, self.eps_p_a);
        let p_trial = self.p_of(q_trial);
        let gamma_trial = gamma_kcc(p_trial, self.lambda, &self.params)?;
        debug_assert!(gamma_trial > 0.0);

        if q_trial.abs() <= gamma_trial {
            self.eps_a = eps_a_new;
            return Ok((false, 0.0));
        }
        if q_trial < 0.0 {
            return Err(Error::Domain(
                "plastic loading under deviatoric stress reversal is outside the \
                 triaxial-compression scope"
                    .to_string(),
            ));
        }

        // scalar return mapping on the plastic multiplier increment;
        // the tuple is (q, p, lambda, w, d_lambda) at the candidate d_mu
        type TrialState = (f64, f64, f64, f64, f64);
        let excess = q_trial - gamma_trial;
        let eval = |d_mu: f64| -> Result<TrialState> {
            // fixed point on the volumetric flow weight w = varpi*Gamma_p/3
            let mut w = self.params.varpi * dgamma_dp(p_trial, self.lambda, &self.params)? / 3.0;
            let mut out = (0.0, 0.0, 0.0, 0.0, 0.0);
            for _ in 0..30 {
                let eps_p_a = self.eps_p_a + d_mu * (1.0 - w);
                let q = self.q_of(eps_a_new, eps_p_a);
                let p = self.p_of(q);
                let h = damage_rate_coeff(p, &self.params)?;
                let d_lambda = h * d_mu * (1.0 + 2.0 * w * w).sqrt();
                let lambda = self.lambda + d_lambda;
                let w_next = self.params.varpi * dgamma_dp(p, lambda, &self.params)? / 3.0;
                out = (q, p, lambda, w_next, d_lambda);
                if (w_next - w).abs() <= 1e-13 * (1.0 + w.abs()) {
                    break;
                }
                w = w_next;
            }
            Ok(out)
        };
        let residual = |d_mu: f64| -> Result<(f64, TrialState)> {
            let st = eval(d_mu)?;
            let gamma = gamma_kcc(st.1, st.2, &self.params)?;
            Ok((st.0 - gamma, st))
        };

        // bracket the consistency root; dq/d_mu is about -E, so the
        // excess over E sets the scale of the multiplier
        let mut lo = 0.0;
        let mut r_lo = excess;
        let mut hi = excess / self.params.young.max(1.0);
        if hi <= 0.0 {
            hi = 1e-12;
        }
        let mut r_hi;
        let mut doublings = 0;
        loop {
            r_hi = residual(hi)?.0;
            if r_hi <= 0.0 {
                break;
            }
            hi *= 2.0;
            doublings += 1;
            if doublings > 80 {
                return Err(Error::Convergence(
                    "return mapping could not bracket the consistency root".to_string(),
                ));
            }
        }

        // Illinois regula falsi on the bracketed root
        let mut d_mu = hi;
        let mut converged = false;
        let mut side = 0i8;
        let mut state = residual(hi)?.1;
        for _ in 0..RETURN_MAP_MAX_ITER {
            d_mu = (lo * r_hi - hi * r_lo) / (r_hi - r_lo);
            if !d_mu.is_finite() {
                break;
            }
            let (r, st) = residual(d_mu)?;
            state = st;
            let gamma_scale = (st.0 - r).abs().max(1e-9);
            if r.abs() <= CONSISTENCY_REL_TOL * gamma_scale {
                converged = true;
                break;
            }
            if r > 0.0 {
                lo = d_mu;
                r_lo = r;
                if side == 1 {
                    r_hi *= 0.5;
                }
                side = 1;
            } else {
                hi = d_mu;
                r_hi = r;
                if side == -1 {
                    r_lo *= 0.5;
                }
                side = -1;
            }
        }
        if !converged {
            return Err(Error::Convergence(format!(
                "return mapping did not converge within {RETURN_MAP_MAX_ITER} iterations"
            )));
        }

        let (q, p, lambda, w, d_lambda) = state;
        debug_assert!(d_lambda >= 0.0);
        let dissipation = (q - 3.0 * w * p) * d_mu;

        self.eps_a = eps_a_new;
        self.eps_p_a += d_mu * (1.0 - w);
        self.eps_p_r += d_mu * (-0.5 - w);
        self.lambda = lambda;
        Ok((true, dissipation))
    }
}

/// Run the shear phase of a triaxial compression test, emitting the
/// initial hydrostatic state plus one record per step.
pub fn simulate_triaxial_path(
    pc: f64,
    eps_a_max: f64,
    n_steps: usize,
    params: &KccParams,
) -> Result<Vec<StepState>> {
    if n_steps < 10 {
        return Err(Error::Domain(format!(
            "n_steps must be at least 10, got {n_steps}"
        )));
    }
    if !(eps_a_max > 0.0) {
        return Err(Error::Domain(format!(
            "eps_a_max must be positive, got {eps_a_max}"
        )));
    }
    let mut element = TriaxialElement::new(pc, params.clone())?;
    let mut out = Vec::with_capacity(n_steps + 1);
    out.push(element.state());
    let d = eps_a_max / n_steps as f64;
    for _ in 0..n_steps {
        out.push(element.step(d)?);
    }
    Ok(out)
}

/// [`simulate_triaxial_path`] reduced to the emitted records.
pub fn simulate_triaxial(
    pc: f64,
    eps_a_max: f64,
    n_steps: usize,
    params: &KccParams,
) -> Result<Vec<TriaxialRecord>> {
    Ok(simulate_triaxial_path(pc, eps_a_max, n_steps, params)?
        .into_iter()
        .map(|s| s.record)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> KccParams {
        KccParams::default()
    }

    #[test]
    fn strength_surface_at_zero_pressure_is_a0() {
        let p = params();
        assert_eq!(strength_surface(SurfaceId::Max, 0.0, &p).unwrap(), 13.0);
        assert_eq!(strength_surface(SurfaceId::Yield, 0.0, &p).unwrap(), 9.0);
    }

    #[test]
    fn linear_surface_when_a2_is_zero() {
        let mut p = params();
        p.surf_max.a2 = 0.0;
        for pressure in [0.0, 10.0, 50.0] {
            let got = strength_surface(SurfaceId::Max, pressure, &p).unwrap();
            assert!((got - (13.0 + pressure / 0.45)).abs() < 1e-12);
        }
    }

    #[test]
    fn surface_approaches_asymptote() {
        let p = params();
        let got = strength_surface(SurfaceId::Max, 1e6, &p).unwrap();
        let asymptote = 13.0 + 1.0 / 0.010;
        assert!((got - asymptote).abs() / asymptote < 1e-3);
    }

    #[test]
    fn pole_guard_rejects_invalid_pressure() {
        let mut p = params();
        p.surf_yield.a2 = -0.01;
        assert!(strength_surface(SurfaceId::Yield, 100.0, &p).is_err());
    }

    #[test]
    fn eta_interpolation_hits_knots_and_midpoints() {
        let table = vec![(0.0, 0.0), (5e-4, 1.0), (5e-3, 0.05)];
        assert_eq!(eta_of_lambda(0.0, &table), 0.0);
        assert_eq!(eta_of_lambda(5e-4, &table), 1.0);
        assert!((eta_of_lambda(2.5e-4, &table) - 0.5).abs() < 1e-12);
        // clamp beyond the last knot
        assert_eq!(eta_of_lambda(1.0, &table), 0.05);
    }

    #[test]
    fn gamma_interpolates_between_surfaces() {
        let p = params();
        let pressure = 20.0;
        let sy = strength_surface(SurfaceId::Yield, pressure, &p).unwrap();
        let sm = strength_surface(SurfaceId::Max, pressure, &p).unwrap();
        assert!((gamma_kcc(pressure, 0.0, &p).unwrap() - sy).abs() < 1e-12);
        assert!((gamma_kcc(pressure, p.lambda_m, &p).unwrap() - sm).abs() < 1e-12);
    }

    #[test]
    fn gamma_reaches_residual_when_table_decays_to_zero() {
        let mut p = params();
        p.eta_table = vec![(0.0, 0.0), (p.lambda_m, 1.0), (10.0 * p.lambda_m, 0.0)];
        let pressure = 25.0;
        let sr = strength_surface(SurfaceId::Residual, pressure, &p).unwrap();
        // eta clamps to its terminal value 0 for large lambda
        let got = gamma_kcc(pressure, 1.0, &p).unwrap();
        assert!((got - sr).abs() < 1e-12);
        // table-driven oracle: direct evaluation of the interpolation rule
        let eta = eta_of_lambda(1.0, &p.eta_table);
        let sm = strength_surface(SurfaceId::Max, pressure, &p).unwrap();
        assert!((got - (eta * (sm - sr) + sr)).abs() < 1e-12);
    }

    #[test]
    fn dgamma_dp_matches_finite_difference() {
        let p = params();
        for lambda in [0.0, 2e-4, 5e-4, 2e-3] {
            for pressure in [5.0, 15.0, 40.0] {
                let h = 1e-5;
                let fd = (gamma_kcc(pressure + h, lambda, &p).unwrap()
                    - gamma_kcc(pressure - h, lambda, &p).unwrap())
                    / (2.0 * h);
                let analytic = dgamma_dp(pressure, lambda, &p).unwrap();
                assert!(
                    (analytic - fd).abs() < 1e-7,
                    "lambda={lambda} p={pressure}: {analytic} vs {fd}"
                );
            }
        }
    }

    #[test]
    fn damage_rate_at_zero_pressure_is_one() {
        assert!((damage_rate_coeff(0.0, &params()).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn damage_rate_with_zero_exponent_is_one() {
        let mut p = params();
        p.b1 = 0.0;
        for pressure in [0.0, 10.0, 100.0] {
            assert!((damage_rate_coeff(pressure, &p).unwrap() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn damage_rate_halves_at_tensile_strength_with_unit_exponent() {
        let mut p = params();
        p.b1 = 1.0;
        let got = damage_rate_coeff(p.f_t, &p).unwrap();
        assert!((got - 0.5).abs() < 1e-15);
    }

    #[test]
    fn damage_rate_tensile_branch_uses_b2() {
        let mut p = params();
        p.b2 = 1.0;
        // p = -ft/2: base 0.5, exponent -b2 -> 2
        let got = damage_rate_coeff(-p.f_t / 2.0, &p).unwrap();
        assert!((got - 2.0).abs() < 1e-15);
        // base <= 0 beyond -ft is out of domain
        assert!(damage_rate_coeff(-p.f_t, &p).is_err());
    }

    #[test]
    fn elastic_path_follows_axial_stiffness() {
        let p = params();
        // stay below yield: q = E * eps_a must remain under Gamma
        let path = simulate_triaxial_path(7.0, 4e-4, 10, &p).unwrap();
        assert_eq!(path.len(), 11);
        for st in &path {
            assert!(!st.plastic);
            let q_expected = p.young * st.record.eps_a;
            assert!(
                (st.sqrt3j2 - q_expected).abs() <= 1e-9 * q_expected.max(1.0),
                "{} vs {q_expected}",
                st.sqrt3j2
            );
            let eps_r_expected = -p.poisson * st.record.eps_a;
            assert!((st.record.eps_r - eps_r_expected).abs() < 1e-15);
            assert_eq!(st.record.sig_r, 7.0);
        }
    }

    #[test]
    fn first_plastic_step_sits_on_the_surface() {
        let p = params();
        let path = simulate_triaxial_path(7.0, 0.02, 200, &p).unwrap();
        let first_plastic = path.iter().find(|s| s.plastic).expect("path never yields");
        assert!(
            (first_plastic.sqrt3j2 - first_plastic.gamma).abs() <= 1e-6 * first_plastic.gamma,
            "q = {}, gamma = {}",
            first_plastic.sqrt3j2,
            first_plastic.gamma
        );
    }

    #[test]
    fn peak_strength_increases_with_confinement() {
        let p = params();
        let peak = |pc: f64| -> f64 {
            simulate_triaxial_path(pc, 0.02, 120, &p)
                .unwrap()
                .iter()
                .map(|s| s.record.sig_a - s.record.sig_r)
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let p7 = peak(7.0);
        let p34 = peak(34.0);
        assert!(
            p34 > p7,
            "peak at 34 MPa ({p34}) should exceed peak at 7 MPa ({p7})"
        );
    }

    #[test]
    fn damage_is_nondecreasing_and_states_admissible() {
        let p = params();
        for pc in [7.0, 34.0] {
            let path = simulate_triaxial_path(pc, 0.02, 150, &p).unwrap();
            let mut last_lambda = 0.0;
            for st in &path {
                assert!(st.lambda >= last_lambda);
                last_lambda = st.lambda;
                assert!(
                    st.sqrt3j2 <= st.gamma * (1.0 + 1e-6),
                    "pc={pc}: q={} gamma={}",
                    st.sqrt3j2,
                    st.gamma
                );
                assert!(st.dissipation_increment >= -1e-10);
            }
            assert!(path.iter().any(|s| s.plastic), "pc={pc} never yielded");
        }
    }

    #[test]
    fn hardening_then_softening_under_default_parameters() {
        let p = params();
        let path = simulate_triaxial_path(7.0, 0.02, 200, &p).unwrap();
        let q: Vec<f64> = path.iter().map(|s| s.sqrt3j2).collect();
        let peak_idx = q
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        // nondecreasing up to the peak
        for w in q[..=peak_idx].windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "pre-peak softening: {w:?}");
        }
        // and visibly softened by the end
        assert!(q[q.len() - 1] < q[peak_idx] * 0.95);
    }

    #[test]
    fn elastic_unload_returns_to_hydrostatic_state() {
        let p = params();
        let mut el = TriaxialElement::new(10.0, p).unwrap();
        el.step(3e-4).unwrap();
        let st = el.step(-3e-4).unwrap();
        assert!(st.record.eps_a.abs() < 1e-10);
        assert!(st.record.eps_r.abs() < 1e-10);
        assert!((st.record.sig_a - 10.0).abs() < 1e-10);
        assert!(st.sqrt3j2.abs() < 1e-10);
    }

    #[test]
    fn negative_confinement_is_rejected() {
        assert!(TriaxialElement::new(-1.0, params()).is_err());
    }

    #[test]
    fn invalid_eta_table_is_rejected() {
        let mut p = params();
        p.eta_table = vec![(0.0, 0.0), (1e-4, 0.5)];
        assert!(p.validate().is_err()); // missing (lambda_m, 1) knot
        p.eta_table = vec![(0.1, 0.0), (5e-4, 1.0)];
        assert!(p.validate().is_err()); // does not start at (0, 0)
    }
}
