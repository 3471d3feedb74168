//! Run configuration: a key = value text file per run plus CLI flag
//! overrides. Unknown keys are rejected, every command can print its
//! defaults, and all values are validated before any computation starts.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::kcc::KccParams;

/// Ordered key/value pairs; later entries override earlier ones.
pub type Entries = Vec<(String, String)>;

/// Parse a config file: `key = value` lines, `#` comments, blank lines.
pub fn read_config_file(path: &Path) -> Result<Entries> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_text(&text)
}

pub fn parse_config_text(text: &str) -> Result<Entries> {
    let mut entries = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "line {}: expected `key = value`, found `{raw}`",
                lineno + 1
            )));
        };
        entries.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(entries)
}

/// Key/value view that tracks which keys were consumed so leftovers can
/// be rejected.
pub struct ConfigMap {
    entries: Entries,
    consumed: BTreeSet<String>,
}

impl ConfigMap {
    pub fn new(entries: Entries) -> Self {
        ConfigMap {
            entries,
            consumed: BTreeSet::new(),
        }
    }

    /// Last value for `key`, marking it consumed.
    pub fn get(&mut self, key: &str) -> Option<String> {
        self.consumed.insert(key.to_string());
        self.entries
            .iter()
            .rev()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.clone())
    }

    pub fn f64(&mut self, key: &str, default: f64) -> Result<f64> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => parse_f64(key, &v),
        }
    }

    pub fn usize(&mut self, key: &str, default: usize) -> Result<usize> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("key `{key}`: bad integer `{v}`"))),
        }
    }

    pub fn u64(&mut self, key: &str, default: u64) -> Result<u64> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse::<u64>()
                .map_err(|_| Error::Config(format!("key `{key}`: bad integer `{v}`"))),
        }
    }

    pub fn bool(&mut self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => match v.as_str() {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                _ => Err(Error::Config(format!("key `{key}`: bad boolean `{v}`"))),
            },
        }
    }

    pub fn string(&mut self, key: &str, default: &str) -> String {
        self.get(key).unwrap_or_else(|| default.to_string())
    }

    pub fn required(&mut self, key: &str) -> Result<String> {
        self.get(key)
            .ok_or_else(|| Error::Config(format!("missing required key `{key}`")))
    }

    pub fn paths(&mut self, key: &str) -> Vec<PathBuf> {
        self.get(key)
            .map(|v| {
                v.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(PathBuf::from)
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Error on any key that was never consumed.
    pub fn finish(self) -> Result<()> {
        for (k, _) in &self.entries {
            if !self.consumed.contains(k) {
                return Err(Error::Config(format!("unknown key `{k}`")));
            }
        }
        Ok(())
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| Error::Config(format!("key `{key}`: bad number `{v}`")))
}

/// Comma list of floats.
pub fn parse_f64_list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_f64(key, s))
        .collect()
}

/// Confinement list: either `lo:hi:step` or a comma list.
pub fn parse_pc_spec(key: &str, v: &str) -> Result<Vec<f64>> {
    if v.contains(':') {
        let parts: Vec<&str> = v.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::Config(format!(
                "key `{key}`: range must be `lo:hi:step`, got `{v}`"
            )));
        }
        let lo = parse_f64(key, parts[0].trim())?;
        let hi = parse_f64(key, parts[1].trim())?;
        let step = parse_f64(key, parts[2].trim())?;
        if step <= 0.0 || hi < lo {
            return Err(Error::Config(format!(
                "key `{key}`: bad range `{v}` (need step > 0 and hi >= lo)"
            )));
        }
        let mut out = Vec::new();
        let n = ((hi - lo) / step).round() as usize;
        for i in 0..=n {
            let val = lo + step * i as f64;
            if val <= hi + 1e-9 * step {
                out.push(val);
            }
        }
        Ok(out)
    } else {
        parse_f64_list(key, v)
    }
}

/// Apply `kcc.*` overrides onto the defaults and validate.
pub fn kcc_params_from(map: &mut ConfigMap) -> Result<KccParams> {
    let mut p = KccParams::default();
    p.surf_yield.a0 = map.f64("kcc.a0y", p.surf_yield.a0)?;
    p.surf_yield.a1 = map.f64("kcc.a1y", p.surf_yield.a1)?;
    p.surf_yield.a2 = map.f64("kcc.a2y", p.surf_yield.a2)?;
    p.surf_max.a0 = map.f64("kcc.a0m", p.surf_max.a0)?;
    p.surf_max.a1 = map.f64("kcc.a1m", p.surf_max.a1)?;
    p.surf_max.a2 = map.f64("kcc.a2m", p.surf_max.a2)?;
    p.surf_residual.a0 = map.f64("kcc.a0r", p.surf_residual.a0)?;
    p.surf_residual.a1 = map.f64("kcc.a1r", p.surf_residual.a1)?;
    p.surf_residual.a2 = map.f64("kcc.a2r", p.surf_residual.a2)?;
    p.b1 = map.f64("kcc.b1", p.b1)?;
    p.b2 = map.f64("kcc.b2", p.b2)?;
    p.f_t = map.f64("kcc.ft", p.f_t)?;
    p.varpi = map.f64("kcc.varpi", p.varpi)?;
    p.young = map.f64("kcc.young", p.young)?;
    p.poisson = map.f64("kcc.poisson", p.poisson)?;
    let lambda_m = map.f64("kcc.lambda_m", p.lambda_m)?;
    if let Some(table) = map.get("kcc.eta_table") {
        let mut knots = Vec::new();
        for pair in table.split(',') {
            let Some((l, e)) = pair.split_once(':') else {
                return Err(Error::Config(format!(
                    "key `kcc.eta_table`: knots are `lambda:eta`, got `{pair}`"
                )));
            };
            knots.push((
                parse_f64("kcc.eta_table", l.trim())?,
                parse_f64("kcc.eta_table", e.trim())?,
            ));
        }
        p.eta_table = knots;
    } else if lambda_m != p.lambda_m {
        // keep the default table shape when only lambda_m moves
        p.eta_table = vec![(0.0, 0.0), (lambda_m, 1.0), (10.0 * lambda_m, 0.05)];
    }
    p.lambda_m = lambda_m;
    p.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(p)
}
