//! Command implementations behind the `cgpr` binary: data synthesis,
//! training, prediction, evaluation, violation maps, and the
//! thermodynamic diagnostic.
//!
//! Every command is deterministic given its configuration (including the
//! seed); reruns produce identical files.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{kcc_params_from, parse_f64_list, parse_pc_spec, ConfigMap, Entries};
use crate::constraints::{dissipation_check, make_virtual_grid, violation_map};
use crate::dataset::{
    derive_features, parse_triaxial_csv, split_by_confinement, Dataset, FeatureSample, SourceKind,
    TriaxialRecord,
};
use crate::error::{Error, Result};
use crate::gp::{train, MeanModel, TrainControl, FEASIBILITY_TOL};
use crate::kcc::{simulate_triaxial_path, KccParams};
use crate::kernel::Hyperparameters;
use crate::metrics::{nrmse, r2, tier, EvalReport, LevelScore};
use crate::model_io::{load_model, save_model};
use crate::polymean::{estimate_eps_s_max, fit_constrained_mean, MeanConstraints};
use crate::render::{write_violation_map_svg, MapLayer};

/// Box-Muller standard normal sample.
fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(content.as_bytes())
        .map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------
// synth

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub pc_levels: Vec<f64>,
    pub eps_a_max: f64,
    pub n_steps: usize,
    pub out_dir: PathBuf,
    pub states_out: bool,
    /// Standard deviation of point-wise measurement noise on the emitted
    /// deviatoric stress, MPa. Zero keeps the simulator output exact.
    pub noise: f64,
    /// Relative standard deviation of a per-level strength scale factor,
    /// emulating specimen-to-specimen scatter between confinement levels.
    pub curve_noise: f64,
    pub seed: u64,
    pub params: KccParams,
}

impl SynthConfig {
    pub fn from_entries(entries: Entries) -> Result<Self> {
        let mut map = ConfigMap::new(entries);
        let pc_raw = map.string("pc", "5:39:1");
        let pc_levels = parse_pc_spec("pc", &pc_raw)?;
        if pc_levels.is_empty() {
            return Err(Error::Config("key `pc`: no levels given".to_string()));
        }
        if let Some(&bad) = pc_levels.iter().find(|&&p| !(p >= 0.0)) {
            return Err(Error::Config(format!(
                "key `pc`: confinement must be nonnegative, got {bad}"
            )));
        }
        let cfg = SynthConfig {
            pc_levels,
            eps_a_max: map.f64("eps_a_max", 0.02)?,
            n_steps: map.usize("steps", 60)?,
            out_dir: PathBuf::from(map.string("out_dir", "data")),
            states_out: map.bool("states_out", false)?,
            noise: map.f64("noise", 0.0)?,
            curve_noise: map.f64("curve_noise", 0.0)?,
            seed: map.u64("seed", 0)?,
            params: kcc_params_from(&mut map)?,
        };
        if !(cfg.eps_a_max > 0.0) {
            return Err(Error::Config(
                "key `eps_a_max` must be positive".to_string(),
            ));
        }
        if cfg.noise < 0.0 || cfg.curve_noise < 0.0 {
            return Err(Error::Config(
                "keys `noise` and `curve_noise` must be nonnegative".to_string(),
            ));
        }
        if cfg.n_steps < 10 {
            return Err(Error::Config("key `steps` must be at least 10".to_string()));
        }
        map.finish()?;
        Ok(cfg)
    }

    pub fn defaults_text() -> String {
        let p = KccParams::default();
        format!(
            "# cgpr synth defaults\n\
             pc = 5:39:1            # confinement levels: lo:hi:step or comma list (MPa)\n\
             eps_a_max = 0.02       # axial strain driven in the shear phase\n\
             steps = 60             # records per level (plus the hydrostatic start)\n\
             out_dir = data\n\
             states_out = false     # also write on-yield states per level\n\
             noise = 0              # stddev of point noise on sig_a - sig_r (MPa)\n\
             curve_noise = 0        # relative stddev of a per-level strength scale\n\
             seed = 0               # noise seed\n\
             # reference model parameters (synthetic placeholder calibration)\n\
             kcc.a0y = {}\nkcc.a1y = {}\nkcc.a2y = {}\n\
             kcc.a0m = {}\nkcc.a1m = {}\nkcc.a2m = {}\n\
             kcc.a0r = {}\nkcc.a1r = {}\nkcc.a2r = {}\n\
             kcc.b1 = {}\nkcc.b2 = {}\nkcc.ft = {}\n\
             kcc.lambda_m = {}\nkcc.varpi = {}\n\
             kcc.young = {}\nkcc.poisson = {}\n\
             kcc.eta_table = 0:0,0.0005:1,0.005:0.05\n",
            p.surf_yield.a0,
            p.surf_yield.a1,
            p.surf_yield.a2,
            p.surf_max.a0,
            p.surf_max.a1,
            p.surf_max.a2,
            p.surf_residual.a0,
            p.surf_residual.a1,
            p.surf_residual.a2,
            p.b1,
            p.b2,
            p.f_t,
            p.lambda_m,
            p.varpi,
            p.young,
            p.poisson,
        )
    }
}

#[derive(Debug, Clone)]
pub struct SynthSummary {
    pub files: Vec<PathBuf>,
}

fn level_file_stem(pc: f64) -> String {
    format!("pc_{pc}").replace('.', "_")
}

pub fn cmd_synth(cfg: &SynthConfig) -> Result<SynthSummary> {
    let mut files = Vec::new();
    let mut manifest = String::from("cgpr synth manifest\n");
    manifest.push_str(&format!(
        "pc_levels {}\n",
        cfg.pc_levels
            .iter()
            .map(|p| p.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    ));
    manifest.push_str(&format!("eps_a_max {}\n", cfg.eps_a_max));
    manifest.push_str(&format!("steps {}\n", cfg.n_steps));
    manifest.push_str(&format!("states_out {}\n", cfg.states_out));
    manifest.push_str(&format!("noise {}\n", cfg.noise));
    manifest.push_str(&format!("curve_noise {}\n", cfg.curve_noise));
    manifest.push_str(&format!("seed {}\n", cfg.seed));
    manifest.push_str(&format!("params {:?}\n", cfg.params));

    for &pc in &cfg.pc_levels {
        let mut path = simulate_triaxial_path(pc, cfg.eps_a_max, cfg.n_steps, &cfg.params)?;
        if cfg.noise > 0.0 || cfg.curve_noise > 0.0 {
            // deterministic lab-like scatter: one strength scale per level
            // plus point noise, clamped so sig_a >= sig_r
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(pc.to_bits()));
            let scale = (1.0 + cfg.curve_noise * gaussian(&mut rng)).max(0.5);
            for st in &mut path {
                let q = st.record.sig_a - st.record.sig_r;
                let q_noisy = (q * scale + cfg.noise * gaussian(&mut rng)).max(0.0);
                st.record.sig_a = st.record.sig_r + q_noisy;
            }
        }
        let mut csv = String::from("eps_a,eps_r,sig_a,sig_r,confinement\n");
        for st in &path {
            let r = &st.record;
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                r.eps_a, r.eps_r, r.sig_a, r.sig_r, r.confinement
            ));
        }
        let file = cfg.out_dir.join(format!("{}.csv", level_file_stem(pc)));
        write_file(&file, &csv)?;
        manifest.push_str(&format!("file {}\n", file.display()));
        files.push(file);

        if cfg.states_out {
            let mut states = String::from("eps_v,eps_s,p,sqrt3j2\n");
            for st in path.iter().filter(|s| s.plastic) {
                let r = &st.record;
                states.push_str(&format!(
                    "{},{},{},{}\n",
                    r.eps_a + 2.0 * r.eps_r,
                    r.eps_a - r.eps_r,
                    st.p,
                    st.sqrt3j2
                ));
            }
            let file = cfg
                .out_dir
                .join(format!("states_{}.csv", level_file_stem(pc)));
            write_file(&file, &states)?;
            manifest.push_str(&format!("file {}\n", file.display()));
            files.push(file);
        }
    }
    write_file(&cfg.out_dir.join("manifest.txt"), &manifest)?;
    Ok(SynthSummary { files })
}

// ---------------------------------------------------------------------
// train

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeanKind {
    Auto,
    Zero,
    Poly,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub experimental_csv: Vec<PathBuf>,
    pub simulated_csv: Vec<PathBuf>,
    /// Optional confinement filter; when set, only these levels of the
    /// loaded data are used for training.
    pub train_levels: Option<Vec<f64>>,
    pub constrained: bool,
    pub constrain_c1: bool,
    pub constrain_c2: bool,
    pub eta: f64,
    pub mean_kind: MeanKind,
    pub degree: usize,
    pub lambda_reg: f64,
    pub eps_s_max_override: Option<f64>,
    pub virtual_counts: [usize; 3],
    pub virtual_margin: f64,
    pub maxeval: usize,
    pub starts: usize,
    pub rhobeg: f64,
    pub seed: u64,
    pub th0: Hyperparameters,
    pub out: PathBuf,
}

impl TrainConfig {
    pub fn from_entries(entries: Entries) -> Result<Self> {
        let mut map = ConfigMap::new(entries);
        let experimental_csv = map.paths("experimental_csv");
        let simulated_csv = map.paths("simulated_csv");
        if experimental_csv.is_empty() && simulated_csv.is_empty() {
            return Err(Error::Config(
                "at least one of `experimental_csv` / `simulated_csv` is required".to_string(),
            ));
        }
        let mean_kind = match map.string("mean", "auto").as_str() {
            "auto" => MeanKind::Auto,
            "zero" => MeanKind::Zero,
            "poly" => MeanKind::Poly,
            other => {
                return Err(Error::Config(format!(
                    "key `mean`: expected auto|zero|poly, got `{other}`"
                )))
            }
        };
        let virtual_raw = map.string("virtual", "8,8,8");
        let vc = parse_f64_list("virtual", &virtual_raw)?;
        if vc.len() != 3 || vc.iter().any(|&v| v < 2.0 || v.fract() != 0.0) {
            return Err(Error::Config(format!(
                "key `virtual`: expected three integer counts >= 2, got `{virtual_raw}`"
            )));
        }
        let th0_raw = map.string("th0", "1,1,1,1,0.1");
        let th0v = parse_f64_list("th0", &th0_raw)?;
        if th0v.len() != 5 {
            return Err(Error::Config(format!(
                "key `th0`: expected five values l1,l2,l3,sigma_f,sigma_n, got `{th0_raw}`"
            )));
        }
        let th0 = Hyperparameters::new([th0v[0], th0v[1], th0v[2]], th0v[3], th0v[4]);
        th0.validate().map_err(|e| Error::Config(e.to_string()))?;
        let eps_s_max_override = match map.get("eps_s_max") {
            None => None,
            Some(v) if v == "auto" => None,
            Some(v) => Some(
                v.parse::<f64>()
                    .map_err(|_| Error::Config(format!("key `eps_s_max`: bad number `{v}`")))?,
            ),
        };
        let train_levels = match map.get("train_levels") {
            None => None,
            Some(v) => Some(parse_f64_list("train_levels", &v)?),
        };
        let cfg = TrainConfig {
            experimental_csv,
            simulated_csv,
            train_levels,
            constrained: map.bool("constrained", false)?,
            constrain_c1: map.bool("constrain_c1", true)?,
            constrain_c2: map.bool("constrain_c2", true)?,
            eta: map.f64("eta", 0.025)?,
            mean_kind,
            degree: map.usize("degree", 3)?,
            lambda_reg: map.f64("lambda_reg", 1e-6)?,
            eps_s_max_override,
            virtual_counts: [vc[0] as usize, vc[1] as usize, vc[2] as usize],
            virtual_margin: map.f64("virtual_margin", 0.1)?,
            maxeval: map.usize("maxeval", 150)?,
            starts: map.usize("starts", 5)?,
            rhobeg: map.f64("rhobeg", 0.5)?,
            seed: map.u64("seed", 0)?,
            th0,
            out: PathBuf::from(map.string("out", "model.txt")),
        };
        if cfg.constrained && !(cfg.eta > 0.0 && cfg.eta < 0.5) {
            return Err(Error::Config(format!(
                "key `eta` must lie in (0, 0.5) for constrained training, got {}",
                cfg.eta
            )));
        }
        map.finish()?;
        Ok(cfg)
    }

    pub fn defaults_text() -> String {
        "# cgpr train defaults\n\
         experimental_csv =     # comma list of triaxial CSV files (required)\n\
         simulated_csv =        # optional additional simulated levels\n\
         train_levels =         # optional confinement filter (comma list)\n\
         constrained = false    # chance-constrained hardening enforcement\n\
         constrain_c1 = true    # pressure-hardening constraint (constrained mode)\n\
         constrain_c2 = true    # deviatoric monotonicity constraint (constrained mode)\n\
         eta = 0.025            # allowable violation probability\n\
         mean = auto            # auto | zero | poly (auto: poly when constrained)\n\
         degree = 3             # polynomial mean total degree\n\
         lambda_reg = 1e-6      # ridge coefficient (normalized space)\n\
         eps_s_max = auto       # peak deviatoric strain (raw units) or auto\n\
         virtual = 8,8,8        # virtual grid counts per axis\n\
         virtual_margin = 0.1   # grid expansion beyond the training range\n\
         maxeval = 150          # optimizer evaluations per start\n\
         starts = 5             # multi-start count\n\
         rhobeg = 0.5           # initial trust-region radius (log space)\n\
         seed = 0\n\
         th0 = 1,1,1,1,0.1      # initial l1,l2,l3,sigma_f,sigma_n\n\
         out = model.txt\n"
            .to_string()
    }
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub model_path: PathBuf,
    pub n_train: usize,
    pub final_nlml: f64,
    pub worst_margin: Option<f64>,
    pub feasible_fraction: Option<f64>,
    pub wall_seconds: f64,
}

fn load_records(paths: &[PathBuf]) -> Result<Vec<TriaxialRecord>> {
    let mut out = Vec::new();
    for p in paths {
        out.extend(parse_triaxial_csv(p)?);
    }
    Ok(out)
}

/// Assemble the training dataset from experimental and simulated files.
pub fn load_training_data(cfg: &TrainConfig) -> Result<Dataset> {
    let mut samples: Vec<FeatureSample> = Vec::new();
    if !cfg.experimental_csv.is_empty() {
        let ds = derive_features(
            &load_records(&cfg.experimental_csv)?,
            SourceKind::Experimental,
        );
        samples.extend(ds.samples);
    }
    if !cfg.simulated_csv.is_empty() {
        let ds = derive_features(&load_records(&cfg.simulated_csv)?, SourceKind::Simulated);
        samples.extend(ds.samples);
    }
    if samples.is_empty() {
        return Err(Error::EmptyInput("training data".to_string()));
    }
    let data = Dataset::from_samples(samples);
    match &cfg.train_levels {
        None => Ok(data),
        Some(levels) => {
            let (train, _) = split_by_confinement(&data, levels)?;
            Ok(train)
        }
    }
}

pub fn cmd_train(cfg: &TrainConfig) -> Result<TrainSummary> {
    let started = Instant::now();
    let data = load_training_data(cfg)?;

    let needs_virtual = cfg.constrained;
    let needs_poly = match cfg.mean_kind {
        MeanKind::Auto => cfg.constrained,
        MeanKind::Zero => false,
        MeanKind::Poly => true,
    };
    let virtual_points: Vec<[f64; 3]> = if needs_virtual || needs_poly {
        make_virtual_grid(&data, cfg.virtual_counts, cfg.virtual_margin)?.points
    } else {
        Vec::new()
    };

    let mean = if needs_poly {
        let eps_s_max_raw = match cfg.eps_s_max_override {
            Some(v) => v,
            None => estimate_eps_s_max(&data)?.eps_s,
        };
        let eps_s_max = data.normalization.normalize_eps_s(eps_s_max_raw);
        let constraints = MeanConstraints {
            c1: cfg.constrained && cfg.constrain_c1,
            c2: cfg.constrained && cfg.constrain_c2,
        };
        MeanModel::Poly(fit_constrained_mean(
            &data,
            cfg.degree,
            cfg.lambda_reg,
            &virtual_points,
            eps_s_max,
            constraints,
        )?)
    } else {
        MeanModel::Zero
    };

    let ctrl = TrainControl {
        maxeval: cfg.maxeval,
        starts: cfg.starts,
        rhobeg: cfg.rhobeg,
        seed: cfg.seed,
    };
    let model = train(
        &data,
        mean,
        &cfg.th0,
        cfg.constrained,
        cfg.eta,
        &virtual_points,
        &ctrl,
    )?;
    save_model(&model, &cfg.out)?;

    let (worst_margin, feasible_fraction) = if cfg.constrained {
        let margins: Vec<f64> = model
            .virtual_points()
            .iter()
            .map(|&v| model.chance_constraint_margin(v))
            .collect();
        let worst = margins.iter().copied().fold(f64::INFINITY, f64::min);
        let ok = margins.iter().filter(|&&m| m >= -FEASIBILITY_TOL).count();
        (Some(worst), Some(ok as f64 / margins.len() as f64))
    } else {
        (None, None)
    };

    Ok(TrainSummary {
        model_path: cfg.out.clone(),
        n_train: data.len(),
        final_nlml: model.nlml_value(),
        worst_margin,
        feasible_fraction,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

// ---------------------------------------------------------------------
// predict

#[derive(Debug, Clone)]
pub struct PredictConfig {
    pub model: PathBuf,
    pub inputs: PathBuf,
    pub out: PathBuf,
}

impl PredictConfig {
    pub fn from_entries(entries: Entries) -> Result<Self> {
        let mut map = ConfigMap::new(entries);
        let cfg = PredictConfig {
            model: PathBuf::from(map.required("model")?),
            inputs: PathBuf::from(map.required("inputs")?),
            out: PathBuf::from(map.string("out", "predictions.csv")),
        };
        map.finish()?;
        Ok(cfg)
    }

    pub fn defaults_text() -> String {
        "# cgpr predict defaults\n\
         model =                # trained model artifact (required)\n\
         inputs =               # CSV with eps_v,eps_s,p columns (required)\n\
         out = predictions.csv\n"
            .to_string()
    }
}

/// Read a CSV that carries at least the named numeric columns.
fn read_numeric_columns(path: &Path, names: &[&str]) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|_| Error::EmptyInput(path.display().to_string()))?
        .clone();
    let mut cols = Vec::with_capacity(names.len());
    for name in names {
        cols.push(
            headers
                .iter()
                .position(|h| h == *name)
                .ok_or_else(|| Error::MissingColumn(name.to_string()))?,
        );
    }
    let mut rows = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::BadCell {
            row: i + 1,
            column: "<record>".to_string(),
            value: e.to_string(),
        })?;
        let mut vals = Vec::with_capacity(names.len());
        for (j, &c) in cols.iter().enumerate() {
            let raw = row.get(c).unwrap_or("");
            vals.push(
                raw.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or(Error::BadCell {
                        row: i + 1,
                        column: names[j].to_string(),
                        value: raw.to_string(),
                    })?,
            );
        }
        rows.push(vals);
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput(path.display().to_string()));
    }
    Ok(rows)
}

pub fn cmd_predict(cfg: &PredictConfig) -> Result<()> {
    let model = load_model(&cfg.model)?;
    let rows = read_numeric_columns(&cfg.inputs, &["eps_v", "eps_s", "p"])?;
    let mut out = String::from("eps_v,eps_s,p,mean,variance,ci95_low,ci95_high\n");
    for r in rows {
        let pred = model.predict([r[0], r[1], r[2]]);
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r[0], r[1], r[2], pred.mean, pred.variance, pred.ci95_low, pred.ci95_high
        ));
    }
    write_file(&cfg.out, &out)
}

// ---------------------------------------------------------------------
// evaluate

#[derive(Debug, Clone)]
pub struct EvaluateConfig {
    pub model: PathBuf,
    pub test_csv: Vec<PathBuf>,
    pub out_dir: PathBuf,
}

impl EvaluateConfig {
    pub fn from_entries(entries: Entries) -> Result<Self> {
        let mut map = ConfigMap::new(entries);
        let cfg = EvaluateConfig {
            model: PathBuf::from(map.required("model")?),
            test_csv: map.paths("test_csv"),
            out_dir: PathBuf::from(map.string("out_dir", "eval")),
        };
        if cfg.test_csv.is_empty() {
            return Err(Error::Config("key `test_csv` is required".to_string()));
        }
        map.finish()?;
        Ok(cfg)
    }

    pub fn defaults_text() -> String {
        "# cgpr evaluate defaults\n\
         model =                # trained model artifact (required)\n\
         test_csv =             # comma list of reference triaxial CSVs (required)\n\
         out_dir = eval\n"
            .to_string()
    }
}

pub fn cmd_evaluate(cfg: &EvaluateConfig) -> Result<EvalReport> {
    let model = load_model(&cfg.model)?;
    let records = load_records(&cfg.test_csv)?;
    let data = derive_features(&records, SourceKind::Simulated);

    let mut groups = data.groups();
    groups.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let mut scores = Vec::new();
    for (pc, idx) in &groups {
        let mut curve = String::from("eps_s,mean,lo,hi,ref\n");
        let mut pred = Vec::with_capacity(idx.len());
        let mut reference = Vec::with_capacity(idx.len());
        for &i in idx {
            let s = &data.samples[i];
            let p = model.predict(s.features());
            curve.push_str(&format!(
                "{},{},{},{},{}\n",
                s.eps_s, p.mean, p.ci95_low, p.ci95_high, s.gamma
            ));
            pred.push(p.mean);
            reference.push(s.gamma);
        }
        let n = nrmse(&pred, &reference)?;
        let r = r2(&pred, &reference)?;
        scores.push(LevelScore {
            pc: *pc,
            nrmse: n,
            r2: r,
            tier: tier(n, r),
        });
        write_file(
            &cfg.out_dir
                .join(format!("curve_{}.csv", level_file_stem(*pc))),
            &curve,
        )?;
    }
    let report = EvalReport::from_scores(scores);
    write_file(&cfg.out_dir.join("report.csv"), &report.to_csv_string())?;
    write_file(&cfg.out_dir.join("report.txt"), &report.to_table_string())?;
    Ok(report)
}

// ---------------------------------------------------------------------
// map

#[derive(Debug, Clone)]
pub struct MapConfig {
    pub model: PathBuf,
    /// (eps_s count, eps_v count).
    pub grid: [usize; 2],
    pub p_count: usize,
    pub eta: Option<f64>,
    pub margin: f64,
    pub out_prefix: PathBuf,
}

impl MapConfig {
    pub fn from_entries(entries: Entries) -> Result<Self> {
        let mut map = ConfigMap::new(entries);
        let grid_raw = map.string("grid", "16,16");
        let gv = parse_f64_list("grid", &grid_raw)?;
        if gv.len() != 2 || gv.iter().any(|&v| v < 2.0 || v.fract() != 0.0) {
            return Err(Error::Config(format!(
                "key `grid`: expected two integer counts >= 2, got `{grid_raw}`"
            )));
        }
        let eta = match map.get("eta") {
            None => None,
            Some(v) if v == "model" => None,
            Some(v) => Some(
                v.parse::<f64>()
                    .map_err(|_| Error::Config(format!("key `eta`: bad number `{v}`")))?,
            ),
        };
        let cfg = MapConfig {
            model: PathBuf::from(map.required("model")?),
            grid: [gv[0] as usize, gv[1] as usize],
            p_count: map.usize("p_count", 9)?,
            eta,
            margin: map.f64("margin", 0.1)?,
            out_prefix: PathBuf::from(map.string("out_prefix", "map")),
        };
        if cfg.p_count < 1 {
            return Err(Error::Config("key `p_count` must be >= 1".to_string()));
        }
        map.finish()?;
        Ok(cfg)
    }

    pub fn defaults_text() -> String {
        "# cgpr map defaults\n\
         model =                # trained model artifact (required)\n\
         grid = 16,16           # eps_s x eps_v cells\n\
         p_count = 9            # pressures sampled per cell (worst case governs)\n\
         eta = model            # violation probability, or `model` for the trained one\n\
         margin = 0.1           # plotted-domain expansion beyond the training range\n\
         out_prefix = map\n"
            .to_string()
    }
}

#[derive(Debug, Clone)]
pub struct MapSummary {
    pub mean_fraction: f64,
    pub conf_fraction: f64,
    pub csv: PathBuf,
    pub svg_mean: PathBuf,
    pub svg_conf: PathBuf,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

pub fn cmd_map(cfg: &MapConfig) -> Result<MapSummary> {
    let model = load_model(&cfg.model)?;
    let xs = model.train_x();
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for x in xs {
        for j in 0..3 {
            lo[j] = lo[j].min(x[j]);
            hi[j] = hi[j].max(x[j]);
        }
    }
    let names = ["eps_v", "eps_s", "p"];
    for j in 0..3 {
        if !(hi[j] > lo[j]) {
            return Err(Error::DegenerateFeature(names[j]));
        }
    }
    let pad = |j: usize| (hi[j] - lo[j]) * cfg.margin;
    let eps_v_axis = linspace(lo[0] - pad(0), hi[0] + pad(0), cfg.grid[1]);
    let eps_s_axis = linspace(lo[1] - pad(1), hi[1] + pad(1), cfg.grid[0]);
    let p_samples = linspace(lo[2], hi[2], cfg.p_count);
    let eta = cfg.eta.unwrap_or_else(|| model.eta());

    let map = violation_map(&model, &eps_s_axis, &eps_v_axis, &p_samples, eta)?;

    let csv = cfg.out_prefix.with_extension("csv");
    if let Some(parent) = csv.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    map.write_csv(&csv, model.normalization())?;
    let svg_mean = PathBuf::from(format!("{}-mean.svg", cfg.out_prefix.display()));
    let svg_conf = PathBuf::from(format!("{}-conf95.svg", cfg.out_prefix.display()));
    write_violation_map_svg(
        &map,
        MapLayer::MeanDerivative,
        model.normalization(),
        &svg_mean,
    )?;
    write_violation_map_svg(
        &map,
        MapLayer::Confidence95,
        model.normalization(),
        &svg_conf,
    )?;

    Ok(MapSummary {
        mean_fraction: map.satisfied_fraction_mean(),
        conf_fraction: map.satisfied_fraction_conf(),
        csv,
        svg_mean,
        svg_conf,
    })
}

// ---------------------------------------------------------------------
// check-thermo

#[derive(Debug, Clone)]
pub struct CheckThermoConfig {
    pub model: PathBuf,
    pub states_csv: PathBuf,
    pub varpi: f64,
    pub out: Option<PathBuf>,
}

impl CheckThermoConfig {
    pub fn from_entries(entries: Entries) -> Result<Self> {
        let mut map = ConfigMap::new(entries);
        let out = map.get("out").map(PathBuf::from);
        let cfg = CheckThermoConfig {
            model: PathBuf::from(map.required("model")?),
            states_csv: PathBuf::from(map.required("states_csv")?),
            varpi: map.f64("varpi", 0.5)?,
            out,
        };
        if cfg.varpi < 0.0 {
            return Err(Error::Config("key `varpi` must be nonnegative".to_string()));
        }
        map.finish()?;
        Ok(cfg)
    }

    pub fn defaults_text() -> String {
        "# cgpr check-thermo defaults\n\
         model =                # trained model artifact (required)\n\
         states_csv =           # CSV with eps_v,eps_s,p,sqrt3j2 columns (required)\n\
         varpi = 0.5            # flow-rule associativity weight\n\
         out =                  # optional per-state margin CSV\n"
            .to_string()
    }
}

#[derive(Debug, Clone)]
pub struct ThermoSummary {
    pub n_pass: usize,
    pub n_fail: usize,
    pub worst_margin: f64,
}

pub fn cmd_check_thermo(cfg: &CheckThermoConfig) -> Result<ThermoSummary> {
    let model = load_model(&cfg.model)?;
    let rows = read_numeric_columns(&cfg.states_csv, &["eps_v", "eps_s", "p", "sqrt3j2"])?;
    let states: Vec<([f64; 3], f64)> = rows.iter().map(|r| ([r[0], r[1], r[2]], r[3])).collect();
    let margins = dissipation_check(&model, &states, cfg.varpi)?;

    if let Some(out) = &cfg.out {
        let mut text = String::from("eps_v,eps_s,p,sqrt3j2,margin,ok\n");
        for (st, (margin, ok)) in states.iter().zip(&margins) {
            text.push_str(&format!(
                "{},{},{},{},{},{}\n",
                st.0[0], st.0[1], st.0[2], st.1, margin, ok
            ));
        }
        write_file(out, &text)?;
    }

    let n_pass = margins.iter().filter(|(_, ok)| *ok).count();
    Ok(ThermoSummary {
        n_pass,
        n_fail: margins.len() - n_pass,
        worst_margin: margins
            .iter()
            .map(|(m, _)| *m)
            .fold(f64::INFINITY, f64::min),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config_text;

    fn entries(text: &str) -> Entries {
        parse_config_text(text).unwrap()
    }

    #[test]
    fn synth_config_counts_levels() {
        let cfg = SynthConfig::from_entries(entries("pc = 5:39:1\nout_dir = x\n")).unwrap();
        assert_eq!(cfg.pc_levels.len(), 35);
    }

    #[test]
    fn synth_rejects_negative_confinement() {
        let err = SynthConfig::from_entries(entries("pc = -1\n")).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn synth_rejects_unknown_keys() {
        let err = SynthConfig::from_entries(entries("pc = 7\nnot_a_key = 3\n")).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn train_config_requires_data() {
        assert!(TrainConfig::from_entries(entries("constrained = true\n")).is_err());
        let cfg = TrainConfig::from_entries(entries(
            "experimental_csv = a.csv,b.csv\nconstrained = true\neta = 0.025\n",
        ))
        .unwrap();
        assert_eq!(cfg.experimental_csv.len(), 2);
        assert!(cfg.constrained);
    }

    #[test]
    fn train_levels_filter_restricts_training_data() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("data");
        let cfg = SynthConfig::from_entries(entries(&format!(
            "pc = 7,14,20\nsteps = 12\neps_a_max = 0.004\nout_dir = {}\n",
            out.display()
        )))
        .unwrap();
        cmd_synth(&cfg).unwrap();
        let tcfg = TrainConfig::from_entries(entries(&format!(
            "experimental_csv = {0}/pc_7.csv,{0}/pc_14.csv,{0}/pc_20.csv\ntrain_levels = 7,20\n",
            out.display()
        )))
        .unwrap();
        let data = load_training_data(&tcfg).unwrap();
        assert_eq!(data.levels(), vec![7.0, 20.0]);

        let bad = TrainConfig::from_entries(entries(&format!(
            "experimental_csv = {0}/pc_7.csv\ntrain_levels = 99\n",
            out.display()
        )))
        .unwrap();
        assert!(matches!(
            load_training_data(&bad),
            Err(Error::UnknownLevel { .. })
        ));
    }

    #[test]
    fn train_config_validates_eta() {
        let err = TrainConfig::from_entries(entries(
            "experimental_csv = a.csv\nconstrained = true\neta = 0.7\n",
        ))
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn synth_writes_deterministic_files() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("data");
        let cfg = SynthConfig::from_entries(entries(&format!(
            "pc = 7,14\nsteps = 12\neps_a_max = 0.004\nout_dir = {}\nstates_out = true\n",
            out.display()
        )))
        .unwrap();
        let first = cmd_synth(&cfg).unwrap();
        assert_eq!(first.files.len(), 4); // 2 level files + 2 state files
        let bytes_a = std::fs::read(out.join("pc_7.csv")).unwrap();
        let manifest_a = std::fs::read(out.join("manifest.txt")).unwrap();
        cmd_synth(&cfg).unwrap();
        let bytes_b = std::fs::read(out.join("pc_7.csv")).unwrap();
        let manifest_b = std::fs::read(out.join("manifest.txt")).unwrap();
        assert_eq!(bytes_a, bytes_b);
        assert_eq!(manifest_a, manifest_b);
    }

    #[test]
    fn missing_model_file_is_a_data_error() {
        let cfg = PredictConfig {
            model: PathBuf::from("/nonexistent/model.txt"),
            inputs: PathBuf::from("/nonexistent/in.csv"),
            out: PathBuf::from("/tmp/out.csv"),
        };
        let err = cmd_predict(&cfg).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert_eq!(err.exit_code(), 3);
    }
}
