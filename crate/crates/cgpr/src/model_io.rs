//! Save/load of trained models as a versioned line-oriented text
//! artifact (`CGPR-MODEL-1`).
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! reloaded model reproduces predictions bit-exactly.

use std::io::Write;
use std::path::Path;

use nalgebra::DVector;

use crate::dataset::Normalization;
use crate::error::{Error, Result};
use crate::gp::{GpModel, MeanModel};
use crate::kernel::Hyperparameters;
use crate::polymean::PolyMean;

pub const MODEL_VERSION: &str = "CGPR-MODEL-1";

pub fn save_model(model: &GpModel, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(MODEL_VERSION);
    out.push('\n');
    out.push_str(&format!("constrained {}\n", u8::from(model.constrained())));
    out.push_str(&format!("eta {}\n", model.eta()));
    let th = model.hyperparameters();
    out.push_str(&format!(
        "hyperparameters {} {} {} {} {}\n",
        th.ell[0], th.ell[1], th.ell[2], th.sigma_f, th.sigma_n
    ));
    let norm = model.normalization();
    out.push_str(&format!(
        "normalization_shift {} {} {} {}\n",
        norm.shift[0], norm.shift[1], norm.shift[2], norm.shift[3]
    ));
    out.push_str(&format!(
        "normalization_scale {} {} {} {}\n",
        norm.scale[0], norm.scale[1], norm.scale[2], norm.scale[3]
    ));
    match model.mean() {
        MeanModel::Zero => out.push_str("mean zero\n"),
        MeanModel::Poly(pm) => {
            out.push_str("mean poly\n");
            out.push_str(&format!("degree {}\n", pm.degree));
            out.push_str(&format!("lambda_reg {}\n", pm.lambda_reg));
            out.push_str(&format!("eps_s_max {}\n", pm.eps_s_max));
            let beta: Vec<String> = pm.beta.iter().map(|v| v.to_string()).collect();
            out.push_str(&format!("beta {}\n", beta.join(" ")));
        }
    }
    out.push_str(&format!("virtual_count {}\n", model.virtual_points().len()));
    for v in model.virtual_points() {
        out.push_str(&format!("v {} {} {}\n", v[0], v[1], v[2]));
    }
    out.push_str(&format!("train_count {}\n", model.train_raw().len()));
    for (x, g) in model.train_raw() {
        out.push_str(&format!("t {} {} {} {}\n", x[0], x[1], x[2], g));
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<GpModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let version = lines
        .next()
        .ok_or_else(|| Error::ModelFormat("empty model file".to_string()))?;
    if version != MODEL_VERSION {
        return Err(Error::ModelFormat(format!(
            "unsupported model version `{version}`, expected `{MODEL_VERSION}`"
        )));
    }

    let mut take = |key: &str| -> Result<Vec<String>> {
        let line = lines
            .next()
            .ok_or_else(|| Error::ModelFormat(format!("missing `{key}` line")))?;
        let mut parts = line.split_whitespace();
        let head = parts.next().unwrap_or("");
        if head != key {
            return Err(Error::ModelFormat(format!(
                "expected `{key}` line, found `{line}`"
            )));
        }
        Ok(parts.map(str::to_string).collect())
    };
    fn floats(parts: &[String], n: usize, key: &str) -> Result<Vec<f64>> {
        if parts.len() != n {
            return Err(Error::ModelFormat(format!(
                "`{key}` expects {n} fields, found {}",
                parts.len()
            )));
        }
        parts
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| Error::ModelFormat(format!("bad float `{s}` in `{key}`")))
            })
            .collect()
    }

    let constrained = match take("constrained")?.as_slice() {
        [v] if v == "0" => false,
        [v] if v == "1" => true,
        other => {
            return Err(Error::ModelFormat(format!(
                "bad `constrained` value {other:?}"
            )))
        }
    };
    let eta = floats(&take("eta")?, 1, "eta")?[0];
    let thv = floats(&take("hyperparameters")?, 5, "hyperparameters")?;
    let th = Hyperparameters::new([thv[0], thv[1], thv[2]], thv[3], thv[4]);
    let shift = floats(&take("normalization_shift")?, 4, "normalization_shift")?;
    let scale = floats(&take("normalization_scale")?, 4, "normalization_scale")?;
    let normalization = Normalization {
        shift: [shift[0], shift[1], shift[2], shift[3]],
        scale: [scale[0], scale[1], scale[2], scale[3]],
    };

    let mean = match take("mean")?.as_slice() {
        [kind] if kind == "zero" => MeanModel::Zero,
        [kind] if kind == "poly" => {
            let degree = take("degree")?
                .first()
                .and_then(|s| s.parse::<usize>().ok())
                .ok_or_else(|| Error::ModelFormat("bad `degree`".to_string()))?;
            let lambda_reg = floats(&take("lambda_reg")?, 1, "lambda_reg")?[0];
            let eps_s_max = floats(&take("eps_s_max")?, 1, "eps_s_max")?[0];
            let beta_parts = take("beta")?;
            let expected = crate::polymean::basis_len(degree);
            let beta = floats(&beta_parts, expected, "beta")?;
            MeanModel::Poly(PolyMean {
                degree,
                beta: DVector::from_vec(beta),
                lambda_reg,
                eps_s_max,
            })
        }
        other => return Err(Error::ModelFormat(format!("bad `mean` value {other:?}"))),
    };

    let virtual_count = take("virtual_count")?
        .first()
        .and_then(|s| s.parse::<usize>().ok())
        .ok_or_else(|| Error::ModelFormat("bad `virtual_count`".to_string()))?;
    let mut virtual_points = Vec::with_capacity(virtual_count);
    for _ in 0..virtual_count {
        let v = floats(&take("v")?, 3, "v")?;
        virtual_points.push([v[0], v[1], v[2]]);
    }

    let train_count = take("train_count")?
        .first()
        .and_then(|s| s.parse::<usize>().ok())
        .ok_or_else(|| Error::ModelFormat("bad `train_count`".to_string()))?;
    let mut train_raw = Vec::with_capacity(train_count);
    for _ in 0..train_count {
        let v = floats(&take("t")?, 4, "t")?;
        train_raw.push(([v[0], v[1], v[2]], v[3]));
    }

    GpModel::assemble(
        train_raw,
        th,
        mean,
        normalization,
        constrained,
        eta,
        virtual_points,
    )
}
