mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use serde_json::Value;

use config::Command;

/// Pulse dynamics of the extended Klausmeier model: reduced ODE, spectra, cascades
/// and the full PDE.
#[derive(Debug, Parser)]
#[command(name = "kpulse", version)]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// Scenario file (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Override a config entry, e.g. `--set params.m=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, value_parser = ["dsp", "csp", "auto"])]
    spectrum_mode: Option<String>,
    #[arg(long, value_parser = ["even", "odd"])]
    parity: Option<String>,
    /// Cascade output directory (compare only).
    #[arg(long)]
    ode_dir: Option<PathBuf>,
    /// PDE output directory (compare only).
    #[arg(long)]
    pde_dir: Option<PathBuf>,
}

pub enum Failure {
    Validation(Vec<String>),
    Numerical(String),
    Io(String),
}

impl From<kpulse::Error> for Failure {
    fn from(e: kpulse::Error) -> Self {
        if e.is_validation() {
            Failure::Validation(vec![e.to_string()])
        } else {
            Failure::Numerical(e.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

fn overrides(args: &Args) -> Result<Vec<(String, Value)>, Failure> {
    let mut out = Vec::new();
    let mut errors = Vec::new();
    for o in &args.overrides {
        match config::parse_override(o) {
            Ok(kv) => out.push(kv),
            Err(e) => errors.push(e),
        }
    }
    if !errors.is_empty() {
        return Err(Failure::Validation(errors));
    }
    if let Some(seed) = args.seed {
        out.push(("seed".into(), Value::from(seed)));
    }
    if let Some(m) = &args.spectrum_mode {
        out.push(("run.spectrum_mode".into(), Value::from(m.as_str())));
    }
    if let Some(p) = &args.parity {
        out.push(("run.parity".into(), Value::from(p.as_str())));
    }
    Ok(out)
}

fn run(args: &Args) -> Result<(), Failure> {
    let start = Instant::now();
    if args.config.is_none() && args.command != Command::Compare {
        return Err(Failure::Validation(vec!["--config is required".into()]));
    }
    let scenario = config::load(args.config.as_deref(), &overrides(args)?, args.command).map_err(Failure::Validation)?;
    std::fs::create_dir_all(&args.out)?;
    let mut out = output::OutDir::new(&args.out);
    let result = match args.command {
        Command::Ode => commands::ode(&scenario, &mut out),
        Command::Cascade => commands::cascade(&scenario, &mut out),
        Command::Pde => commands::pde(&scenario, &mut out),
        Command::Spectrum => commands::spectrum(&scenario, &mut out),
        Command::Skeleton => commands::skeleton(&scenario, &mut out),
        Command::FixedPoint => commands::fixed_point(&scenario, &mut out),
        Command::Speeds => commands::speeds(&scenario, &mut out),
        Command::Colonization => commands::colonization(&scenario, &mut out),
        Command::Compare => match (&args.ode_dir, &args.pde_dir) {
            (Some(ode), Some(pde)) => commands::compare(&scenario, ode, pde, &mut out),
            _ => Err(Failure::Validation(vec!["compare needs --ode-dir and --pde-dir".into()])),
        },
    };
    // A cascade that failed midway still leaves its partial trace behind.
    if result.is_ok() || out.has_outputs() {
        out.manifest(args.command.name(), &scenario, start.elapsed().as_secs_f64())?;
    }
    result
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(errors)) => {
            for e in errors {
                eprintln!("error: {e}");
            }
            ExitCode::from(2)
        }
        Err(Failure::Numerical(e)) => {
            eprintln!("numerical failure: {e}");
            ExitCode::from(3)
        }
        Err(Failure::Io(e)) => {
            eprintln!("i/o error: {e}");
            ExitCode::from(1)
        }
    }
}
