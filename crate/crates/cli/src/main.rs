mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, bad config, missing or mismatched inputs. Exit code 2.
    #[error("{0}")]
    Usage(String),
    /// Anything that fails after the inputs were accepted. Exit code 1.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "mei3d", version, about = "Synthesize maximally exciting 3D stimuli")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (overrides `output_dir` in the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads. 1 gives byte-identical reruns.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Same as `--threads 1`.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Optimize the mesh to maximize the configured model's response.
    Synthesize {
        #[command(flatten)]
        common: Common,
    },
    /// Deform the configured mesh toward the `[fit]` target by Chamfer loss.
    FitMesh {
        #[command(flatten)]
        common: Common,
    },
    /// Pose or light-direction tuning sweep of a stimulus.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, conflicts_with = "light", required_unless_present = "light")]
        pose: bool,
        #[arg(long)]
        light: bool,
        /// Saved deformation field; the undeformed mesh is used without it.
        #[arg(long)]
        field: Option<PathBuf>,
    },
    /// Render the mesh once and print the model response if one is configured.
    Render {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        field: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synthesize { common } => commands::synthesize(&common),
        Command::FitMesh { common } => commands::fit_mesh(&common),
        Command::Sweep {
            common,
            pose,
            light: _,
            field,
        } => commands::sweep(&common, pose, field.as_deref()),
        Command::Render { common, field } => commands::render(&common, field.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
