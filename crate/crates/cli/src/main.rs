use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use seedbank_core::engine::engine_registry;
use seedbank_core::experiments::{experiment_registry, run_experiment, write_failure, ExperimentConfig};
use seedbank_core::Error;

/// Simulation and checking front end for seed-bank Moran, lookdown and diffusion models.
#[derive(Parser)]
#[command(name = "seedbank", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Forward Moran paths.
    SimulateMoran(RunArgs),
    /// Forward lookdown paths.
    SimulateLookdown(RunArgs),
    /// Marked coalescent genealogies.
    SimulateCoalescent(RunArgs),
    /// Euler paths of the limiting jump diffusion.
    IntegrateSde(RunArgs),
    /// Sampling duality gaps.
    CheckDuality(RunArgs),
    /// Finite-N vs limit generator convergence table.
    CheckGenerators(RunArgs),
    /// Fixation conditioning (level-1 rule, DIRECT / REDUCED / rejection sampling).
    CheckFixation(RunArgs),
    /// List registered experiments and forward engines.
    List,
}

#[derive(Args)]
struct RunArgs {
    /// JSON config file; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores). Never changes results.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory for paths.csv, summary.json and report.txt.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    replicates: Option<u64>,
    /// Population size N.
    #[arg(long = "population", short = 'N')]
    population: Option<usize>,
    #[arg(long)]
    horizon: Option<f64>,
    /// Forward engine by name (see `seedbank list`).
    #[arg(long)]
    engine: Option<String>,
}

impl Command {
    fn experiment(&self) -> Option<(&'static str, &RunArgs)> {
        Some(match self {
            Command::SimulateMoran(a) => ("moran", a),
            Command::SimulateLookdown(a) => ("lookdown", a),
            Command::SimulateCoalescent(a) => ("coalescent", a),
            Command::IntegrateSde(a) => ("sde", a),
            Command::CheckDuality(a) => ("duality", a),
            Command::CheckGenerators(a) => ("generator_conv", a),
            Command::CheckFixation(a) => ("fixation_equiv", a),
            Command::List => return None,
        })
    }
}

const EXIT_CHECKS_FAILED: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

fn config_error(path: Option<&Path>, err: &Error) -> String {
    let file = path.map_or_else(|| "<flags>".to_string(), |p| p.display().to_string());
    match err {
        Error::Json(e) if e.line() > 0 => format!("{file}:{}:{}: {e}", e.line(), e.column()),
        e => format!("{file}: {e}"),
    }
}

fn load(name: &str, args: &RunArgs) -> Result<ExperimentConfig, String> {
    let mut cfg = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            ExperimentConfig::from_json(&text).map_err(|e| config_error(Some(p), &e))?
        }
        None => ExperimentConfig::default(),
    };
    if !cfg.experiment.is_empty() && cfg.experiment != name {
        return Err(format!(
            "{}: config is for experiment `{}` but the subcommand runs `{name}`",
            args.config.as_ref().map_or_else(String::new, |p| p.display().to_string()),
            cfg.experiment
        ));
    }
    cfg.experiment = name.to_string();
    if let Some(s) = args.seed {
        cfg.master_seed = s;
    }
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    if let Some(o) = &args.out {
        cfg.output_dir = Some(o.display().to_string());
    }
    if let Some(r) = args.replicates {
        cfg.replicates = r;
    }
    if let Some(n) = args.population {
        cfg.population = n;
    }
    if let Some(h) = args.horizon {
        cfg.horizon = h;
    }
    if let Some(e) = &args.engine {
        cfg.engine = Some(e.clone());
    }
    cfg.validate().map_err(|e| config_error(args.config.as_deref(), &e))?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Some((name, args)) = cli.command.experiment() else {
        println!("experiments:");
        let reg = experiment_registry();
        for n in reg.names() {
            println!("  {n:<16} {}", reg.get(n).map(|e| e.description()).unwrap_or_default());
        }
        println!("engines:");
        let engines = engine_registry(Default::default());
        for n in engines.names() {
            println!("  {n:<16} {}", engines.get(n).map(|e| e.description()).unwrap_or_default());
        }
        return ExitCode::SUCCESS;
    };
    let cfg = match load(name, args) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("config error: {msg}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let out = PathBuf::from(cfg.output_dir.clone().unwrap_or_else(|| format!("out/{name}")));
    match run_experiment(&cfg) {
        Ok(report) => {
            if let Err(e) = report.write(&out) {
                eprintln!("error writing {}: {e}", out.display());
                return ExitCode::from(EXIT_RUNTIME);
            }
            print!("{}", report.text());
            if report.all_passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_CHECKS_FAILED)
            }
        }
        Err(e) => {
            let code = match e {
                Error::UnknownStrategy { .. } | Error::InvalidParams(_) | Error::InvalidMeasure(_) => EXIT_CONFIG,
                _ => EXIT_RUNTIME,
            };
            eprintln!("error: {e}");
            if let Err(w) = write_failure(&out, &cfg, &e) {
                eprintln!("could not record the failure in {}: {w}", out.display());
            }
            ExitCode::from(code)
        }
    }
}
