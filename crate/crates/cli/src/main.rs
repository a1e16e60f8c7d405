use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use opdyn_cli::{config, run, CliError, CliResult, Mode};

/// Agent and mean-field experiments for coupled opinion–position dynamics.
///
/// Configuration keys are read from --config, overridden by OPDYN_<KEY>
/// environment variables, then by the flags below. `opdyn keys` lists them.
#[derive(Parser)]
#[command(name = "opdyn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Flat key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    output: PathBuf,
    /// Base seed (overrides the `seed` key).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    threads: Option<usize>,
    /// Comma-separated subset of csv,ndjson,svg.
    #[arg(long)]
    format: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the agent system once.
    RunAbm(Common),
    /// Integrate the density equation.
    RunPde(Common),
    /// Compare one agent run with the density over time (dim = 1).
    CompareLimits(Common),
    /// Ensemble statistics over several additive noise amplitudes.
    NoiseSweep(Common),
    /// Agent-to-density distance as the agent count grows (dim = 1).
    ChaosStudy(Common),
    /// Variance of the mean opinion against the agent count.
    FluctuationStudy(Common),
    /// Draw a snapshot NDJSON file as SVG.
    Render(Common),
    /// List configuration keys with defaults.
    Keys,
}

fn execute(mode: Mode, c: Common) -> CliResult<()> {
    let mut raw = config::RawConfig::defaults();
    if let Some(p) = &c.config {
        raw.load_file(p)?;
    }
    raw.apply_env(std::env::vars())?;
    if let Some(seed) = c.seed {
        raw.set("seed", &seed.to_string())?;
    }
    if let Some(f) = &c.format {
        raw.set("formats", f)?;
    }
    let cfg = config::ExperimentConfig::from_raw(mode, raw, c.output)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(c.threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let manifest = pool.install(|| run(&cfg))?;
    eprintln!(
        "{}: {} files in {} ({:.2} s)",
        mode,
        manifest.files.len(),
        cfg.output_dir.display(),
        manifest.wall_clock_s
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (mode, common) = match cli.command {
        Command::RunAbm(c) => (Mode::RunAbm, c),
        Command::RunPde(c) => (Mode::RunPde, c),
        Command::CompareLimits(c) => (Mode::CompareLimits, c),
        Command::NoiseSweep(c) => (Mode::NoiseSweep, c),
        Command::ChaosStudy(c) => (Mode::ChaosStudy, c),
        Command::FluctuationStudy(c) => (Mode::FluctuationStudy, c),
        Command::Render(c) => (Mode::Render, c),
        Command::Keys => {
            for (k, v, doc) in config::KEYS {
                println!("{k:<22} {v:<16} {doc}");
            }
            return ExitCode::SUCCESS;
        }
    };
    match execute(mode, common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
