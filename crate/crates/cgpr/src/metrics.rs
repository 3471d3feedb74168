//! NRMSE, coefficient of determination, and the four-tier accuracy
//! classification, per confinement level and aggregated.

use crate::error::{Error, Result};

/// Accuracy tier. NRMSE is range-normalized; when the two metrics fall in
/// different bands the worse one wins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Tier {
    Excellent,
    Good,
    Acceptable,
    Poor,
}

impl Tier {
    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Excellent => "excellent",
            Tier::Good => "good",
            Tier::Acceptable => "acceptable",
            Tier::Poor => "poor",
        }
    }
}

/// Root-mean-square error normalized by the reference range.
pub fn nrmse(pred: &[f64], reference: &[f64]) -> Result<f64> {
    check_lengths(pred, reference)?;
    let lo = reference.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = reference.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(Error::Domain(
            "NRMSE normalization undefined: reference range is zero".to_string(),
        ));
    }
    let mse: f64 = pred
        .iter()
        .zip(reference)
        .map(|(p, r)| (p - r) * (p - r))
        .sum::<f64>()
        / pred.len() as f64;
    Ok(mse.sqrt() / (hi - lo))
}

/// Coefficient of determination; may be negative and is not floored.
pub fn r2(pred: &[f64], reference: &[f64]) -> Result<f64> {
    check_lengths(pred, reference)?;
    let mean = reference.iter().sum::<f64>() / reference.len() as f64;
    let ss_tot: f64 = reference.iter().map(|r| (r - mean) * (r - mean)).sum();
    if ss_tot <= 0.0 {
        return Err(Error::Domain(
            "R^2 undefined: reference is constant".to_string(),
        ));
    }
    let ss_res: f64 = pred
        .iter()
        .zip(reference)
        .map(|(p, r)| (r - p) * (r - p))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

fn check_lengths(pred: &[f64], reference: &[f64]) -> Result<()> {
    if pred.len() != reference.len() {
        return Err(Error::Domain(format!(
            "prediction and reference lengths differ: {} vs {}",
            pred.len(),
            reference.len()
        )));
    }
    if pred.len() < 2 {
        return Err(Error::Domain(
            "metrics need at least two samples".to_string(),
        ));
    }
    Ok(())
}

fn nrmse_band(v: f64) -> Tier {
    if v < 0.02 {
        Tier::Excellent
    } else if v <= 0.05 {
        Tier::Good
    } else if v <= 0.12 {
        Tier::Acceptable
    } else {
        Tier::Poor
    }
}

fn r2_band(v: f64) -> Tier {
    if v > 0.98 {
        Tier::Excellent
    } else if v >= 0.85 {
        Tier::Good
    } else if v >= 0.7 {
        Tier::Acceptable
    } else {
        Tier::Poor
    }
}

/// Classify a (NRMSE, R^2) pair; the worse band governs.
pub fn tier(nrmse: f64, r2: f64) -> Tier {
    nrmse_band(nrmse).max(r2_band(r2))
}

/// Metrics of one held-out confinement level.
#[derive(Debug, Clone, Copy)]
pub struct LevelScore {
    pub pc: f64,
    pub nrmse: f64,
    pub r2: f64,
    pub tier: Tier,
}

/// Per-level metrics plus arithmetic-mean aggregates.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub per_level: Vec<LevelScore>,
    pub mean_nrmse: f64,
    pub mean_r2: f64,
}

impl EvalReport {
    pub fn from_scores(per_level: Vec<LevelScore>) -> Self {
        let n = per_level.len().max(1) as f64;
        let mean_nrmse = per_level.iter().map(|s| s.nrmse).sum::<f64>() / n;
        let mean_r2 = per_level.iter().map(|s| s.r2).sum::<f64>() / n;
        EvalReport {
            per_level,
            mean_nrmse,
            mean_r2,
        }
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("pc,nrmse,r2,tier\n");
        for s in &self.per_level {
            out.push_str(&format!(
                "{},{},{},{}\n",
                s.pc,
                s.nrmse,
                s.r2,
                s.tier.as_str()
            ));
        }
        out.push_str(&format!("mean,{},{},\n", self.mean_nrmse, self.mean_r2));
        out
    }

    /// Fixed-width table with one tier tag per level, mirrored on the
    /// published layout.
    pub fn to_table_string(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:>8}  {:>9}  {:>9}  {:<10}\n",
            "Pc (MPa)", "NRMSE", "R^2", "tier"
        ));
        for s in &self.per_level {
            out.push_str(&format!(
                "{:>8}  {:>8.2}%  {:>9.4}  {:<10}\n",
                s.pc,
                s.nrmse * 100.0,
                s.r2,
                s.tier.as_str()
            ));
        }
        out.push_str(&format!(
            "{:>8}  {:>8.2}%  {:>9.4}\n",
            "mean",
            self.mean_nrmse * 100.0,
            self.mean_r2
        ));
        out
    }
}
