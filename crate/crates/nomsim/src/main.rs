use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nomsim::config::SimConfig;
use nomsim::sim;
use nomsim::workload::Trace;

#[derive(Parser)]
#[command(
    name = "nomsim",
    about = "Cycle-level simulator of circuit-switched inter-bank copy in 3D-stacked memory"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one configuration and print its report.
    Simulate {
        /// Config file; omit for the built-in defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Trace file; omit to generate the configured preset.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the machine-readable report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run several configurations against one shared trace.
    Compare {
        /// Comma-separated config files.
        #[arg(long, value_delimiter = ',', required = true)]
        configs: Vec<PathBuf>,
        /// Shared trace file.
        #[arg(long)]
        trace: PathBuf,
    },
    /// Generate a preset trace file.
    Generate {
        #[arg(long, default_value = "fileCopy40")]
        preset: String,
        #[arg(long, default_value_t = 10_000)]
        count: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.cmd {
        Cmd::Simulate { config, trace, seed, out } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let trace = match trace {
                Some(path) => Trace::load(&path)?,
                None => Trace::generate(&cfg)?,
            };
            let result = sim::run_trace(&cfg, &trace)?;
            print!("{}", result.report.render_table());
            if let Some(out) = out {
                std::fs::write(&out, result.report.render())?;
                println!("report written to {}", out.display());
            }
            if !result.report.complete {
                anyhow::bail!("cycle cap hit with {} requests pending", result.report.requests_pending);
            }
        }
        Cmd::Compare { configs, trace } => {
            let trace = Trace::load(&trace)?;
            let mut labeled = Vec::new();
            for path in &configs {
                let label = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| path.display().to_string());
                labeled.push((label, SimConfig::load(path)?));
            }
            let rows = sim::compare(&labeled, &trace)?;
            print!("{}", sim::render_comparison(&rows));
        }
        Cmd::Generate { preset, count, seed, out } => {
            let mut cfg = SimConfig::default();
            cfg.workload_preset = preset;
            cfg.workload_requests = count;
            cfg.seed = seed;
            let trace = Trace::generate(&cfg)?;
            trace.save(&out)?;
            println!("{} records written to {}", trace.records.len(), out.display());
        }
    }
    Ok(())
}

fn load_config(path: Option<&std::path::Path>) -> anyhow::Result<SimConfig> {
    Ok(match path {
        Some(p) => SimConfig::load(p)?,
        None => SimConfig::default(),
    })
}
