//! `lielevy`: configuration-driven simulation, estimation and verification runs.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;

use commands::Context;
use config::{ExperimentConfig, Format};
use lielevy::io::parse_triple_file;

#[derive(Parser)]
#[command(name = "lielevy", version, about = "Inhomogeneous Lévy processes on Lie groups and the sphere")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Subcommand, Clone, Copy, Debug)]
enum Command {
    /// Simulate paths from the triple and write them out.
    Simulate,
    /// Estimate the triple from simulated (or `--input`) paths.
    Estimate,
    /// Run the martingale and fixed-jump checks against the triple.
    Verify,
    /// Simulate, verify, estimate and compare with the input triple.
    Roundtrip,
    /// Lift a sphere triple to SO(3), simulate there and project the paths.
    Project,
    /// Compare lifted-then-projected paths with direct sphere simulation.
    LiftCheck,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Estimate => "estimate",
            Command::Verify => "verify",
            Command::Roundtrip => "roundtrip",
            Command::Project => "project",
            Command::LiftCheck => "lift-check",
        }
    }
}

#[derive(Args)]
struct Opts {
    /// Experiment configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides `[sim] seed`.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Overrides `[sim] paths`.
    #[arg(long, global = true, value_name = "M")]
    paths: Option<usize>,
    /// Output directory; overrides `[output] dir`.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Path file format; overrides `[output] format`.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Read group-valued paths from a CSV or JSON path file instead of simulating.
    #[arg(long, global = true, value_name = "PATH")]
    input: Option<PathBuf>,
}

#[derive(Serialize)]
struct Report<'a> {
    command: &'a str,
    version: &'static str,
    config_hash: &'a str,
    seed: u64,
    paths: usize,
    pass: bool,
    artifacts: &'a [String],
    result: Value,
}

fn setup(cmd: Command, opts: Opts) -> Result<Context, String> {
    let config_path = opts.config.ok_or("--config PATH is required")?;
    let text = std::fs::read_to_string(&config_path).map_err(|e| format!("{}: {e}", config_path.display()))?;
    let mut cfg = ExperimentConfig::parse(&text, &config_path)?;
    if let Some(s) = opts.seed {
        cfg.sim.seed = s;
    }
    if let Some(m) = opts.paths {
        cfg.sim.paths = m;
    }
    if let Some(f) = opts.format {
        cfg.output.format = f;
    }
    cfg.validate().map_err(|e| format!("{}: {e}", config_path.display()))?;

    let base = config_path.parent().map(PathBuf::from).unwrap_or_default();
    let triple_path = base.join(&cfg.triple);
    let triple_text = std::fs::read_to_string(&triple_path)
        .map_err(|e| format!("triple file {}: {e}", triple_path.display()))?;
    let triple_file = parse_triple_file(&triple_text).map_err(|e| format!("{}: {e}", triple_path.display()))?;
    if let Some(input) = &opts.input {
        if !input.is_file() {
            return Err(format!("input file {} does not exist", input.display()));
        }
        if matches!(cmd, Command::Simulate | Command::Project | Command::LiftCheck) {
            return Err(format!("`{}` does not read path files", cmd.name()));
        }
    }
    let out_dir = opts.out.unwrap_or_else(|| base.join(&cfg.output.dir));
    std::fs::create_dir_all(&out_dir).map_err(|e| format!("{}: {e}", out_dir.display()))?;
    let hash = cfg.hash(&triple_text);
    let format = cfg.output.format;
    Ok(Context { cfg, triple_file, out_dir, format, input: opts.input, hash, artifacts: Vec::new() })
}

fn run(cmd: Command, opts: Opts) -> Result<bool, String> {
    let mut ctx = setup(cmd, opts)?;
    let outcome = match cmd {
        Command::Simulate => commands::simulate(&mut ctx),
        Command::Estimate => commands::estimate_cmd(&mut ctx),
        Command::Verify => commands::verify(&mut ctx),
        Command::Roundtrip => commands::roundtrip(&mut ctx),
        Command::Project => commands::project(&mut ctx),
        Command::LiftCheck => commands::lift_check_cmd(&mut ctx),
    };
    let (result, pass) = outcome?;
    let name = format!("report_{}.json", cmd.name());
    ctx.artifacts.push(name.clone());
    let report = Report {
        command: cmd.name(),
        version: env!("CARGO_PKG_VERSION"),
        config_hash: &ctx.hash,
        seed: ctx.cfg.sim.seed,
        paths: ctx.cfg.sim.paths,
        pass,
        artifacts: &ctx.artifacts,
        result,
    };
    lielevy::io::write_json(&ctx.out_dir.join(&name), &report).map_err(|e| e.to_string())?;
    println!("{}: {}", cmd.name(), if pass { "pass" } else { "FAIL" });
    Ok(pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command, cli.opts) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
