use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ligament_bands::config::{parse_stages, ConventionChoice, Stage, SweepConfig};
use ligament_bands::runner::Runner;
use log::error;

/// Band structure of a periodic elastic waveguide with thin ligaments.
#[derive(Parser)]
#[command(name = "ligament-bands", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON run configuration (defaults apply to missing fields).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory, overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Normalization of the first-order correction.
    #[arg(long, global = true, value_parser = ["factor1", "factor2", "both"])]
    convention: Option<String>,

    /// Comma-separated stages to run instead of the command's defaults:
    /// limit, cell, sweep, asymptotics, study, report.
    #[arg(long, global = true)]
    stages: Option<String>,

    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Limit spectrum of the isolated cell.
    Limit,
    /// Polarization matrix of the junction.
    Cell,
    /// Dispersion curves over the configured h and eta grids.
    Sweep,
    /// Asymptotic predictions, convergence study and checks.
    Study,
    /// Text report from the files of an earlier run.
    Report,
}

impl Command {
    fn stages(self) -> Vec<Stage> {
        match self {
            Command::Limit => vec![Stage::Limit],
            Command::Cell => vec![Stage::Cell],
            Command::Sweep => vec![Stage::Sweep],
            Command::Study => vec![Stage::Asymptotics, Stage::Study, Stage::Report],
            Command::Report => vec![Stage::Report],
        }
    }
}

fn run(cli: Cli) -> ligament_bands::Result<bool> {
    let mut cfg = match &cli.config {
        Some(p) => SweepConfig::load(p)?,
        None => SweepConfig::default(),
    };
    if let Some(c) = &cli.convention {
        cfg.convention = c.parse::<ConventionChoice>()?;
    }
    if let Some(o) = &cli.out {
        cfg.output.dir = o.clone();
    }
    let stages = match &cli.stages {
        Some(s) => parse_stages(s)?,
        None => cli.command.stages(),
    };
    if cli.print_config {
        println!("{}", cfg.to_json()?);
        return Ok(true);
    }
    let summary = Runner::new(cfg)?.run(Some(&stages))?;
    let ok = summary.success();
    let json = serde_json::to_string_pretty(&summary)?;
    if ok {
        println!("{json}");
    } else {
        eprintln!("{json}");
    }
    Ok(ok)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            error!("{e}");
            ExitCode::from(2)
        }
    }
}
