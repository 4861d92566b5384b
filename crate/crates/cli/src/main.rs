use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

mod config;
mod run;

use config::ConfigError;

#[derive(Parser)]
#[command(name = "ptrlab", version, about = "Boundary-control iteration experiments for the wave equation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a TOML config or a previous manifest.json.
    Run {
        config: PathBuf,
        /// Output directory (overrides PTRLAB_OUT and the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a config without running it.
    Validate { config: PathBuf },
    /// List bundled media.
    Presets,
}

fn output_dir(flag: Option<PathBuf>, configured: &Path) -> PathBuf {
    flag.or_else(|| std::env::var_os("PTRLAB_OUT").map(PathBuf::from)).unwrap_or_else(|| configured.to_path_buf())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Presets => {
            println!("{:<20} {:>3} {:>5} {:>6} {:>6} {:>6}  description", "name", "dim", "nodes", "T", "c_min", "c_max");
            for p in ptrlab_core::catalog() {
                println!(
                    "{:<20} {:>3} {:>5} {:>6} {:>6} {:>6}  {}",
                    p.name,
                    p.dim,
                    p.resolution,
                    p.horizon,
                    p.c_min(),
                    p.c_max(),
                    p.description
                );
            }
        }
        Command::Validate { config } => {
            let loaded = config::load(&config)?;
            let (grid, _) = loaded.build_medium()?;
            loaded.validate(&grid)?;
            println!(
                "{}: ok ({}, {} boundary slots, {} time samples)",
                config.display(),
                loaded.config.kind.name(),
                grid.n_boundary(),
                grid.n_times()
            );
        }
        Command::Run { config, out } => {
            let loaded = config::load(&config)?;
            let dir = output_dir(out, &loaded.config.output);
            let outputs = run::run(&loaded, &dir)?;
            println!("wrote {} files to {}", outputs.len(), dir.display());
            for o in outputs {
                println!("  {:<22} {}", o.file, o.description);
            }
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConfigError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<ptrlab_core::Error>() {
        Some(ptrlab_core::Error::Io(_) | ptrlab_core::Error::Format(_)) | None => 1,
        Some(_) => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
