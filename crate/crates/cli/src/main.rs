use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use featleak_core::harness::{reports_csv, run_scenario, sweep, ScenarioConfig, SweepAxis};
use featleak_core::Error;

/// Simulate collaborative training and run inference attacks against it.
#[derive(Parser)]
#[command(name = "featleak", version)]
struct Cli {
    /// Root that relative output directories are resolved against.
    #[arg(long, env = "FEATLEAK_OUTPUT_ROOT", global = true)]
    output_root: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and print its metrics report.
    Run { config: PathBuf },
    /// Repeat a scenario over values of one axis and several seeds.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, default_value_t = 8)]
        seeds: usize,
    },
    /// Tabulate every report.json found under a directory.
    Report { dir: PathBuf },
}

fn load(path: &Path, root: Option<&Path>, default_name: &str) -> Result<ScenarioConfig, Error> {
    let bytes = std::fs::read(path).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
    let mut cfg = ScenarioConfig::from_json(&bytes)?;
    let dir = cfg.output_dir.clone().unwrap_or_else(|| {
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        PathBuf::from("featleak-out").join(default_name).join(stem)
    });
    cfg.output_dir = Some(match root {
        Some(r) if dir.is_relative() => r.join(dir),
        _ => dir,
    });
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<String, Error> {
    let root = cli.output_root.as_deref();
    match cli.command {
        Command::Run { config } => {
            let cfg = load(&config, root, "run")?;
            let report = run_scenario(&cfg)?;
            let mut out = serde_json::to_string_pretty(&report)?;
            out.push_str(&format!("\nartifacts: {}", cfg.output_dir.expect("set by load").display()));
            Ok(out)
        }
        Command::Sweep { config, axis, values, seeds } => {
            let axis: SweepAxis = axis.parse()?;
            let cfg = load(&config, root, "sweep")?;
            Ok(sweep(&cfg, axis, &values, seeds)?.to_csv())
        }
        Command::Report { dir } => reports_csv(&dir),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(out) => {
            println!("{}", out.trim_end());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 2 } else { 3 })
        }
    }
}
