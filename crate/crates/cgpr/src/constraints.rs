//! Virtual-point generation, constraint-violation maps over the
//! deviatoric/volumetric strain domain, and the plastic-dissipation
//! diagnostic.

use std::io::Write;
use std::path::Path;

use crate::dataset::{Dataset, Normalization};
use crate::error::{Error, Result};
use crate::gp::GpModel;
use crate::normal::inv_norm_cdf;

/// Per-axis extent of a tensor grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisSpec {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl AxisSpec {
    pub fn points(&self) -> Vec<f64> {
        let n = self.count;
        (0..n)
            .map(|i| self.min + (self.max - self.min) * i as f64 / (n - 1) as f64)
            .collect()
    }
}

/// Full tensor grid of virtual derivative points in normalized feature
/// space, row-major with eps_v outermost and p innermost.
#[derive(Debug, Clone)]
pub struct VirtualGrid {
    pub points: Vec<[f64; 3]>,
    pub spec: [AxisSpec; 3],
}

/// Build the virtual grid spanning the normalized training range expanded
/// by `margin` times the range on both ends of each axis.
pub fn make_virtual_grid(train: &Dataset, counts: [usize; 3], margin: f64) -> Result<VirtualGrid> {
    if counts.iter().any(|&c| c < 2) {
        return Err(Error::Domain(format!(
            "virtual grid needs at least 2 points per axis, got {counts:?}"
        )));
    }
    if !(0.0..=0.5).contains(&margin) {
        return Err(Error::Domain(format!(
            "virtual grid margin must lie in [0, 0.5], got {margin}"
        )));
    }
    if train.is_empty() {
        return Err(Error::EmptyInput("make_virtual_grid".to_string()));
    }
    let names = ["eps_v", "eps_s", "p"];
    let xs = train.features_normalized();
    let mut spec = [AxisSpec {
        min: 0.0,
        max: 0.0,
        count: 0,
    }; 3];
    for j in 0..3 {
        let lo = xs.iter().map(|x| x[j]).fold(f64::INFINITY, f64::min);
        let hi = xs.iter().map(|x| x[j]).fold(f64::NEG_INFINITY, f64::max);
        if !(hi > lo) {
            return Err(Error::DegenerateFeature(names[j]));
        }
        let range = hi - lo;
        spec[j] = AxisSpec {
            min: lo - margin * range,
            max: hi + margin * range,
            count: counts[j],
        };
    }
    let (av, as_, ap) = (spec[0].points(), spec[1].points(), spec[2].points());
    let mut points = Vec::with_capacity(av.len() * as_.len() * ap.len());
    for &ev in &av {
        for &es in &as_ {
            for &p in &ap {
                points.push([ev, es, p]);
            }
        }
    }
    Ok(VirtualGrid { points, spec })
}

/// Constraint-satisfaction map over the eps_s/eps_v plane.
///
/// Cell values are worst-case over the supplied pressure samples:
/// `mean_value` is the minimum derivative mean and `conf_value` the
/// minimum chance-constraint margin. Axes are in normalized units.
#[derive(Debug, Clone, PartialEq)]
pub struct ViolationMap {
    pub eps_s_axis: Vec<f64>,
    pub eps_v_axis: Vec<f64>,
    /// `[i_eps_v][i_eps_s]`: derivative mean nonnegative at every p.
    pub mean_ok: Vec<Vec<bool>>,
    /// `[i_eps_v][i_eps_s]`: chance margin nonnegative at every p.
    pub conf95_ok: Vec<Vec<bool>>,
    pub mean_value: Vec<Vec<f64>>,
    pub conf_value: Vec<Vec<f64>>,
    pub p_policy: String,
}

/// Evaluate the hardening-constraint map at the given axes and pressure
/// samples (all normalized).
pub fn violation_map(
    model: &GpModel,
    eps_s_axis: &[f64],
    eps_v_axis: &[f64],
    p_samples: &[f64],
    eta: f64,
) -> Result<ViolationMap> {
    if eps_s_axis.is_empty() || eps_v_axis.is_empty() || p_samples.is_empty() {
        return Err(Error::EmptyInput("violation_map axes".to_string()));
    }
    let z = inv_norm_cdf(1.0 - eta)?;
    let mut mean_ok = Vec::with_capacity(eps_v_axis.len());
    let mut conf_ok = Vec::with_capacity(eps_v_axis.len());
    let mut mean_value = Vec::with_capacity(eps_v_axis.len());
    let mut conf_value = Vec::with_capacity(eps_v_axis.len());
    for &ev in eps_v_axis {
        let mut row_mok = Vec::with_capacity(eps_s_axis.len());
        let mut row_cok = Vec::with_capacity(eps_s_axis.len());
        let mut row_mv = Vec::with_capacity(eps_s_axis.len());
        let mut row_cv = Vec::with_capacity(eps_s_axis.len());
        for &es in eps_s_axis {
            let mut worst_mu = f64::INFINITY;
            let mut worst_margin = f64::INFINITY;
            for &p in p_samples {
                let (mu, sigma) = model.deriv_dp_stats([ev, es, p]);
                worst_mu = worst_mu.min(mu);
                worst_margin = worst_margin.min(mu - z * sigma);
            }
            row_mok.push(worst_mu >= 0.0);
            row_cok.push(worst_margin >= 0.0);
            row_mv.push(worst_mu);
            row_cv.push(worst_margin);
        }
        mean_ok.push(row_mok);
        conf_ok.push(row_cok);
        mean_value.push(row_mv);
        conf_value.push(row_cv);
    }
    Ok(ViolationMap {
        eps_s_axis: eps_s_axis.to_vec(),
        eps_v_axis: eps_v_axis.to_vec(),
        mean_ok,
        conf95_ok: conf_ok,
        mean_value,
        conf_value,
        p_policy: format!(
            "worst case over {} pressures in [{:.4}, {:.4}] (normalized), eta = {}",
            p_samples.len(),
            p_samples.first().unwrap(),
            p_samples.last().unwrap(),
            eta
        ),
    })
}

impl ViolationMap {
    pub fn satisfied_fraction_mean(&self) -> f64 {
        fraction(&self.mean_ok)
    }

    pub fn satisfied_fraction_conf(&self) -> f64 {
        fraction(&self.conf95_ok)
    }

    /// Write one CSV row per cell, axes de-normalized to raw units.
    pub fn write_csv(&self, path: &Path, norm: &Normalization) -> Result<()> {
        let mut out = String::from("eps_s,eps_v,mean_ok,conf95_ok\n");
        for (iv, &ev) in self.eps_v_axis.iter().enumerate() {
            for (is, &es) in self.eps_s_axis.iter().enumerate() {
                let raw = norm.denormalize_x([ev, es, 0.0]);
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    raw[1], raw[0], self.mean_ok[iv][is], self.conf95_ok[iv][is]
                ));
            }
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

fn fraction(cells: &[Vec<bool>]) -> f64 {
    let total: usize = cells.iter().map(|r| r.len()).sum();
    if total == 0 {
        return 0.0;
    }
    let ok: usize = cells.iter().map(|r| r.iter().filter(|&&b| b).count()).sum();
    ok as f64 / total as f64
}

/// Plastic-dissipation margins `sqrt(3 J2) - varpi * dGamma/dp * p` for a
/// list of on-yield states in raw units.
pub fn dissipation_check(
    model: &GpModel,
    states: &[([f64; 3], f64)],
    varpi: f64,
) -> Result<Vec<(f64, bool)>> {
    if varpi < 0.0 || !varpi.is_finite() {
        return Err(Error::Domain(format!(
            "varpi must be nonnegative, got {varpi}"
        )));
    }
    Ok(states
        .iter()
        .map(|&(x, sqrt3j2)| {
            let (mu_dp, _) = model.deriv_dp_stats_raw(x);
            let margin = sqrt3j2 - varpi * mu_dp * x[2];
            (margin, margin >= 0.0)
        })
        .collect())
}
