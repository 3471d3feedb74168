//! Triaxial-compression records, derived invariant features, and the
//! training/test dataset container.
//!
//! All scalars use the compression-positive lab convention: axial and
//! radial stresses are nonnegative in triaxial compression, the pressure
//! is `p = (sig_a + 2 sig_r) / 3`, and the failure-surface observable is
//! the deviatoric stress `gamma = sig_a - sig_r`.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Provenance of a sample: measured in the lab or produced by the
/// reference simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceKind {
    Experimental,
    Simulated,
}

impl SourceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceKind::Experimental => "experimental",
            SourceKind::Simulated => "simulated",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "experimental" => Some(SourceKind::Experimental),
            "simulated" => Some(SourceKind::Simulated),
            _ => None,
        }
    }
}

/// One row of a triaxial compression test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriaxialRecord {
    /// Axial strain, compression positive.
    pub eps_a: f64,
    /// Radial strain.
    pub eps_r: f64,
    /// Axial stress in MPa, compression positive.
    pub sig_a: f64,
    /// Radial (confining) stress in MPa.
    pub sig_r: f64,
    /// Nominal confinement tag in MPa.
    pub confinement: f64,
}

/// Derived invariants for one record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureSample {
    /// Volumetric strain `eps_a + 2 eps_r`.
    pub eps_v: f64,
    /// Deviatoric strain `eps_a - eps_r`.
    pub eps_s: f64,
    /// Pressure `(sig_a + 2 sig_r) / 3` in MPa.
    pub p: f64,
    /// Failure-surface observable `sig_a - sig_r` in MPa.
    pub gamma: f64,
    pub confinement: f64,
    pub source: SourceKind,
}

impl FeatureSample {
    pub fn features(&self) -> [f64; 3] {
        [self.eps_v, self.eps_s, self.p]
    }
}

/// Per-feature affine transform (z-score) for the three inputs and gamma.
///
/// Index order is `[eps_v, eps_s, p, gamma]`. Features with zero variance
/// keep a unit scale so the transform stays invertible.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub shift: [f64; 4],
    pub scale: [f64; 4],
}

impl Normalization {
    pub fn identity() -> Self {
        Normalization {
            shift: [0.0; 4],
            scale: [1.0; 4],
        }
    }

    pub fn fit(samples: &[FeatureSample]) -> Self {
        if samples.is_empty() {
            return Normalization::identity();
        }
        let n = samples.len() as f64;
        let columns = |s: &FeatureSample| -> [f64; 4] { [s.eps_v, s.eps_s, s.p, s.gamma] };
        let mut mean = [0.0; 4];
        for s in samples {
            let c = columns(s);
            for j in 0..4 {
                mean[j] += c[j] / n;
            }
        }
        let mut var = [0.0; 4];
        for s in samples {
            let c = columns(s);
            for j in 0..4 {
                var[j] += (c[j] - mean[j]).powi(2) / n;
            }
        }
        let mut scale = [1.0; 4];
        for j in 0..4 {
            let sd = var[j].sqrt();
            if sd > 0.0 {
                scale[j] = sd;
            }
        }
        Normalization { shift: mean, scale }
    }

    pub fn normalize_x(&self, x: [f64; 3]) -> [f64; 3] {
        [
            (x[0] - self.shift[0]) / self.scale[0],
            (x[1] - self.shift[1]) / self.scale[1],
            (x[2] - self.shift[2]) / self.scale[2],
        ]
    }

    pub fn denormalize_x(&self, x: [f64; 3]) -> [f64; 3] {
        [
            x[0] * self.scale[0] + self.shift[0],
            x[1] * self.scale[1] + self.shift[1],
            x[2] * self.scale[2] + self.shift[2],
        ]
    }

    pub fn normalize_gamma(&self, g: f64) -> f64 {
        (g - self.shift[3]) / self.scale[3]
    }

    pub fn denormalize_gamma(&self, g: f64) -> f64 {
        g * self.scale[3] + self.shift[3]
    }

    pub fn gamma_scale(&self) -> f64 {
        self.scale[3]
    }

    /// Scale of input feature `j` (0 = eps_v, 1 = eps_s, 2 = p).
    pub fn x_scale(&self, j: usize) -> f64 {
        self.scale[j]
    }

    pub fn normalize_eps_s(&self, v: f64) -> f64 {
        (v - self.shift[1]) / self.scale[1]
    }
}

/// An ordered collection of feature samples plus the normalization
/// fitted to them.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<FeatureSample>,
    pub normalization: Normalization,
}

impl Dataset {
    pub fn from_samples(samples: Vec<FeatureSample>) -> Self {
        let normalization = Normalization::fit(&samples);
        Dataset {
            samples,
            normalization,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Normalized input rows in sample order.
    pub fn features_normalized(&self) -> Vec<[f64; 3]> {
        self.samples
            .iter()
            .map(|s| self.normalization.normalize_x(s.features()))
            .collect()
    }

    /// Normalized gamma targets in sample order.
    pub fn gammas_normalized(&self) -> Vec<f64> {
        self.samples
            .iter()
            .map(|s| self.normalization.normalize_gamma(s.gamma))
            .collect()
    }

    /// Distinct confinement levels in first-appearance order.
    pub fn levels(&self) -> Vec<f64> {
        let mut levels: Vec<f64> = Vec::new();
        for s in &self.samples {
            if !levels.contains(&s.confinement) {
                levels.push(s.confinement);
            }
        }
        levels
    }

    /// Sample indices grouped by confinement level, in level order.
    pub fn groups(&self) -> Vec<(f64, Vec<usize>)> {
        let mut groups: Vec<(f64, Vec<usize>)> = Vec::new();
        for (i, s) in self.samples.iter().enumerate() {
            match groups.iter_mut().find(|(l, _)| *l == s.confinement) {
                Some((_, idx)) => idx.push(i),
                None => groups.push((s.confinement, vec![i])),
            }
        }
        groups
    }
}

const CSV_COLUMNS: [&str; 5] = ["eps_a", "eps_r", "sig_a", "sig_r", "confinement"];

/// Parse a triaxial CSV file into records, grouped and sorted by
/// `(confinement, eps_a)`.
///
/// The header must name the five columns `eps_a, eps_r, sig_a, sig_r,
/// confinement` (any order; extra columns are ignored). Row numbers in
/// errors are 1-based over data rows.
pub fn parse_triaxial_csv(path: &Path) -> Result<Vec<TriaxialRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_triaxial_str(&text, &path.display().to_string())
}

/// String-based parser backing [`parse_triaxial_csv`].
pub fn parse_triaxial_str(text: &str, origin: &str) -> Result<Vec<TriaxialRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let headers = reader
        .headers()
        .map_err(|_| Error::EmptyInput(origin.to_string()))?
        .clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::EmptyInput(origin.to_string()));
    }

    let mut col = [0usize; 5];
    for (slot, name) in col.iter_mut().zip(CSV_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))?;
    }

    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::BadCell {
            row: i + 1,
            column: "<record>".to_string(),
            value: e.to_string(),
        })?;
        let mut vals = [0.0_f64; 5];
        for (j, v) in vals.iter_mut().enumerate() {
            let raw = row.get(col[j]).unwrap_or("");
            *v = raw
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or(Error::BadCell {
                    row: i + 1,
                    column: CSV_COLUMNS[j].to_string(),
                    value: raw.to_string(),
                })?;
        }
        records.push(TriaxialRecord {
            eps_a: vals[0],
            eps_r: vals[1],
            sig_a: vals[2],
            sig_r: vals[3],
            confinement: vals[4],
        });
    }
    if records.is_empty() {
        return Err(Error::EmptyInput(origin.to_string()));
    }
    records.sort_by(|a, b| {
        (a.confinement, a.eps_a)
            .partial_cmp(&(b.confinement, b.eps_a))
            .expect("finite keys")
    });
    Ok(records)
}

/// Derive invariant features from records and fit the normalization.
///
/// Raw values are passed through unchanged; no smoothing is applied.
pub fn derive_features(records: &[TriaxialRecord], source: SourceKind) -> Dataset {
    let samples = records
        .iter()
        .map(|r| FeatureSample {
            eps_v: r.eps_a + 2.0 * r.eps_r,
            eps_s: r.eps_a - r.eps_r,
            p: (r.sig_a + 2.0 * r.sig_r) / 3.0,
            gamma: r.sig_a - r.sig_r,
            confinement: r.confinement,
            source,
        })
        .collect();
    Dataset::from_samples(samples)
}

/// Partition a dataset by confinement level. Each part refits its own
/// normalization.
pub fn split_by_confinement(ds: &Dataset, train_levels: &[f64]) -> Result<(Dataset, Dataset)> {
    if train_levels.is_empty() {
        return Err(Error::EmptyInput("train_levels".to_string()));
    }
    let available = ds.levels();
    for &level in train_levels {
        if !available.contains(&level) {
            return Err(Error::UnknownLevel {
                level,
                available: available.clone(),
            });
        }
    }
    let (train, test): (Vec<_>, Vec<_>) = ds
        .samples
        .iter()
        .partition(|s| train_levels.contains(&s.confinement));
    Ok((Dataset::from_samples(train), Dataset::from_samples(test)))
}

/// Write the feature CSV `(eps_v, eps_s, p, gamma, confinement, source)`.
pub fn write_features_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::from("eps_v,eps_s,p,gamma,confinement,source\n");
    for s in &ds.samples {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            s.eps_v,
            s.eps_s,
            s.p,
            s.gamma,
            s.confinement,
            s.source.as_str()
        ));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Read a feature CSV previously written by [`write_features_csv`].
pub fn read_features_csv(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|_| Error::EmptyInput(path.display().to_string()))?
        .clone();
    let names = ["eps_v", "eps_s", "p", "gamma", "confinement", "source"];
    let mut col = [0usize; 6];
    for (slot, name) in col.iter_mut().zip(names) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))?;
    }
    let mut samples = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::BadCell {
            row: i + 1,
            column: "<record>".to_string(),
            value: e.to_string(),
        })?;
        let num = |j: usize| -> Result<f64> {
            let raw = row.get(col[j]).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or(Error::BadCell {
                    row: i + 1,
                    column: names[j].to_string(),
                    value: raw.to_string(),
                })
        };
        let source_raw = row.get(col[5]).unwrap_or("");
        let source = SourceKind::parse(source_raw).ok_or(Error::BadCell {
            row: i + 1,
            column: "source".to_string(),
            value: source_raw.to_string(),
        })?;
        samples.push(FeatureSample {
            eps_v: num(0)?,
            eps_s: num(1)?,
            p: num(2)?,
            gamma: num(3)?,
            confinement: num(4)?,
            source,
        });
    }
    if samples.is_empty() {
        return Err(Error::EmptyInput(path.display().to_string()));
    }
    Ok(Dataset::from_samples(samples))
}
