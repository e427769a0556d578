use clap::{Parser, Subcommand};
use mmshape_cli::{
    cmd_convergence, cmd_optimize, cmd_solve, cmd_sweep, cmd_taylor, parse_config, ConfigError,
};
use std::path::PathBuf;
use std::process::ExitCode;

/// Shape optimization on overlapping non-matching meshes.
#[derive(Parser)]
#[command(name = "mmshape", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the state (and adjoint) at the initial design and write fields.
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the steepest-descent optimization loop.
    Optimize {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Taylor-test the shape gradient along the steepest-descent direction.
    Taylor {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated perturbation magnitudes (decreasing).
        #[arg(long, value_delimiter = ',')]
        eps: Option<Vec<f64>>,
    },
    /// Sample J over a grid of rotation angles.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Start angle in degrees.
        #[arg(long, default_value_t = 0.0)]
        from: f64,
        /// End angle in degrees (exclusive).
        #[arg(long, default_value_t = 360.0)]
        to: f64,
        #[arg(long, default_value_t = 72)]
        steps: usize,
    },
    /// Manufactured-solution convergence study.
    Convergence {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        levels: usize,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let artifacts = match cli.command {
        Command::Solve { config, out } => {
            let config = parse_config(&config)?;
            cmd_solve(&config, out.as_deref())?
        }
        Command::Optimize { config, out } => {
            let config = parse_config(&config)?;
            cmd_optimize(&config, out.as_deref())?
        }
        Command::Taylor { config, out, eps } => {
            let config = parse_config(&config)?;
            cmd_taylor(&config, out.as_deref(), eps)?
        }
        Command::Sweep {
            config,
            out,
            from,
            to,
            steps,
        } => {
            let config = parse_config(&config)?;
            cmd_sweep(&config, out.as_deref(), from, to, steps)?
        }
        Command::Convergence {
            config,
            out,
            levels,
        } => {
            let config = parse_config(&config)?;
            cmd_convergence(&config, out.as_deref(), levels)?
        }
    };
    println!("{}", serde_json::to_string_pretty(&artifacts.summary)?);
    eprintln!("summary written to {}", artifacts.summary_path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
