use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cgpr::cli::{
    cmd_check_thermo, cmd_evaluate, cmd_map, cmd_predict, cmd_synth, cmd_train, CheckThermoConfig,
    EvaluateConfig, MapConfig, PredictConfig, SynthConfig, TrainConfig,
};
use cgpr::config::{parse_config_text, read_config_file, Entries};
use cgpr::error::Error;

/// Constrained GP surrogate for concrete failure surfaces.
#[derive(Parser)]
#[command(name = "cgpr", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize triaxial compression data with the reference simulator.
    Synth(CommonArgs),
    /// Train a surrogate model from triaxial CSV files.
    Train(TrainArgs),
    /// Predict at feature points from a trained model.
    Predict(CommonArgs),
    /// Evaluate a model against reference curves and tier the accuracy.
    Evaluate(EvaluateArgs),
    /// Export constraint-violation maps (CSV + SVG).
    Map(CommonArgs),
    /// Check the plastic-dissipation inequality at given states.
    CheckThermo(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Run configuration file (key = value lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key (repeatable): --set key=value
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Print the default configuration and exit.
    #[arg(long)]
    dump_defaults: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Train with the chance-constrained hardening enforcement.
    #[arg(long)]
    constrained: bool,
    /// Allowable violation probability for the chance constraint.
    #[arg(long)]
    eta: Option<f64>,
    /// Output model path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Random seed for the optimizer multi-starts.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Model artifact path.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn gather_entries(common: &CommonArgs, extra: Entries) -> Result<Entries, Error> {
    let mut entries = match &common.config {
        Some(path) => read_config_file(path)?,
        None => Vec::new(),
    };
    entries.extend(extra);
    for kv in &common.set {
        let parsed = parse_config_text(kv)?;
        if parsed.len() != 1 {
            return Err(Error::Config(format!(
                "--set expects key=value, got `{kv}`"
            )));
        }
        entries.extend(parsed);
    }
    Ok(entries)
}

fn run() -> Result<(), Error> {
    match Cli::parse().command {
        Command::Synth(common) => {
            if common.dump_defaults {
                print!("{}", SynthConfig::defaults_text());
                return Ok(());
            }
            let cfg = SynthConfig::from_entries(gather_entries(&common, Vec::new())?)?;
            let summary = cmd_synth(&cfg)?;
            println!(
                "synth: wrote {} files to {}",
                summary.files.len() + 1,
                cfg.out_dir.display()
            );
            Ok(())
        }
        Command::Train(args) => {
            if args.common.dump_defaults {
                print!("{}", TrainConfig::defaults_text());
                return Ok(());
            }
            let mut extra: Entries = Vec::new();
            if args.constrained {
                extra.push(("constrained".to_string(), "true".to_string()));
            }
            if let Some(eta) = args.eta {
                extra.push(("eta".to_string(), eta.to_string()));
            }
            if let Some(out) = &args.out {
                extra.push(("out".to_string(), out.display().to_string()));
            }
            if let Some(seed) = args.seed {
                extra.push(("seed".to_string(), seed.to_string()));
            }
            let cfg = TrainConfig::from_entries(gather_entries(&args.common, extra)?)?;
            let summary = cmd_train(&cfg)?;
            println!(
                "train: n = {}, final NLML = {:.6}, wall = {:.1}s",
                summary.n_train, summary.final_nlml, summary.wall_seconds
            );
            if let (Some(worst), Some(frac)) = (summary.worst_margin, summary.feasible_fraction) {
                println!(
                    "train: feasible virtual points = {:.1}%, worst margin = {:.3e}",
                    frac * 100.0,
                    worst
                );
            }
            println!("train: model written to {}", summary.model_path.display());
            Ok(())
        }
        Command::Predict(common) => {
            if common.dump_defaults {
                print!("{}", PredictConfig::defaults_text());
                return Ok(());
            }
            let cfg = PredictConfig::from_entries(gather_entries(&common, Vec::new())?)?;
            cmd_predict(&cfg)?;
            println!("predict: wrote {}", cfg.out.display());
            Ok(())
        }
        Command::Evaluate(args) => {
            if args.common.dump_defaults {
                print!("{}", EvaluateConfig::defaults_text());
                return Ok(());
            }
            let mut extra: Entries = Vec::new();
            if let Some(model) = &args.model {
                extra.push(("model".to_string(), model.display().to_string()));
            }
            if let Some(out_dir) = &args.out_dir {
                extra.push(("out_dir".to_string(), out_dir.display().to_string()));
            }
            let cfg = EvaluateConfig::from_entries(gather_entries(&args.common, extra)?)?;
            let report = cmd_evaluate(&cfg)?;
            print!("{}", report.to_table_string());
            println!("evaluate: reports written to {}", cfg.out_dir.display());
            Ok(())
        }
        Command::Map(common) => {
            if common.dump_defaults {
                print!("{}", MapConfig::defaults_text());
                return Ok(());
            }
            let cfg = MapConfig::from_entries(gather_entries(&common, Vec::new())?)?;
            let summary = cmd_map(&cfg)?;
            println!(
                "map: mean-level satisfied fraction = {:.4}",
                summary.mean_fraction
            );
            println!(
                "map: 95%-level satisfied fraction = {:.4}",
                summary.conf_fraction
            );
            println!(
                "map: wrote {}, {}, {}",
                summary.csv.display(),
                summary.svg_mean.display(),
                summary.svg_conf.display()
            );
            Ok(())
        }
        Command::CheckThermo(common) => {
            if common.dump_defaults {
                print!("{}", CheckThermoConfig::defaults_text());
                return Ok(());
            }
            let cfg = CheckThermoConfig::from_entries(gather_entries(&common, Vec::new())?)?;
            let summary = cmd_check_thermo(&cfg)?;
            println!(
                "check-thermo: {} pass, {} fail, worst margin = {:.6}",
                summary.n_pass, summary.n_fail, summary.worst_margin
            );
            if summary.n_fail > 0 {
                return Err(Error::Infeasible(format!(
                    "{} states violate the dissipation inequality",
                    summary.n_fail
                )));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
