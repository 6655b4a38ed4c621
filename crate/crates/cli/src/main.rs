use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use procsplat::city::AssetLibrary;
use procsplat_cli::{self as cli, CliError};

#[derive(Parser)]
#[command(name = "procsplat", version, about = "Procedural Gaussian splatting workshop")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit shared assets to a posed image dataset.
    Fit {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        code: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Training config (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a checkpoint from one camera to PNG.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Assemble a procedural code file against a library.
    Assemble {
        #[arg(long)]
        library: PathBuf,
        #[arg(long)]
        code: PathBuf,
        #[arg(long, num_args = 3, value_names = ["L", "W", "H"])]
        dims: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a library building at new dimensions.
    GenerateBuilding {
        #[arg(long)]
        library: PathBuf,
        #[arg(long)]
        building: String,
        #[arg(long, num_args = 3, value_names = ["L", "W", "H"])]
        dims: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Lay out and build a toy city.
    GenerateCity {
        #[arg(long)]
        layout: PathBuf,
        #[arg(long)]
        library: PathBuf,
        /// City generation config (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the studio HTTP API.
    Serve {
        #[arg(long)]
        library: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
    /// Write a checkpoint as a single world-space PLY.
    Export {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn dims(v: Option<Vec<f64>>) -> Option<[f64; 3]> {
    v.map(|d| [d[0], d[1], d[2]])
}

fn run(args: Args) -> Result<(), CliError> {
    cli::configure_threads()?;
    match args.command {
        Command::Fit { dataset, code, manifest, config, seed, out } => {
            cli::fit(&dataset, &code, &manifest, config.as_deref(), seed, &out).map(drop)
        }
        Command::Render { checkpoint, camera, out } => cli::render_checkpoint(&checkpoint, &camera, &out),
        Command::Assemble { library, code, dims: d, seed, out } => cli::assemble_code(&library, &code, dims(d), seed, &out).map(drop),
        Command::GenerateBuilding { library, building, dims: d, seed, out } => {
            cli::generate_building(&library, &building, dims(d), seed, &out).map(drop)
        }
        Command::GenerateCity { layout, library, config, seed, out } => {
            cli::generate_city(&layout, &library, config.as_deref(), seed, &out).map(drop)
        }
        Command::Serve { library, port } => {
            let library = AssetLibrary::load(&library)?;
            let rt = tokio::runtime::Runtime::new().map_err(|source| CliError::Io { path: "runtime".into(), source })?;
            rt.block_on(cli::server::serve(library, port)).map_err(|source| CliError::Io { path: format!("port {port}"), source })
        }
        Command::Export { checkpoint, out } => cli::export_ply(&checkpoint, &out),
    }
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
