//! `steerdiff` — train and evaluate a toy conditional diffusion policy with
//! GRPO and a safety-steered reward.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage/config error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use steerdiff_cli::commands::{
    cmd_ablate_reward, cmd_ablate_sampler, cmd_eval, cmd_steer_sweep, cmd_train, parse_variant,
};
use steerdiff_cli::config::RunConfig;

#[derive(Parser)]
#[command(
    name = "steerdiff",
    version,
    about = "GRPO post-training of a toy conditional diffusion model with a safety-steered reward",
    after_help = "\
CONFIG is a TOML file; see configs/ for annotated examples and the README\n\
for the full schema. Anchor/task tables are plain text: one point per line\n\
as comma-separated floats, '#' starts a comment line.\n\n\
Exit codes: 0 success, 1 runtime failure, 2 usage/config error."
)]
struct Cli {
    /// Path to the run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the config's run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the config's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for rollouts and gradient accumulation.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run GRPO training; writes metrics.jsonl, checkpoints, summary.json.
    Train,
    /// Emit per-prompt safety scores before/after steering over an alpha grid (CSV).
    SteerSweep {
        /// Comma-separated steering strengths.
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "0,0.25,0.5,0.75,1.0,1.25,1.5,1.75,2.0"
        )]
        alphas: Vec<f64>,
    },
    /// Train each reward variant from the same seed; emit a comparison (JSON).
    AblateReward {
        /// Comma-separated variant names.
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "steered,plain_cosine,safeclip_posneg,neg_only"
        )]
        variants: Vec<String>,
    },
    /// Evaluate a trained checkpoint across an (eta, T) sampler grid (CSV).
    AblateSampler {
        /// Checkpoint produced by a train run with the same config identity.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated eta values.
        #[arg(long, value_delimiter = ',', default_value = "0.0,0.5,1.0")]
        etas: Vec<f64>,
        /// Comma-separated step counts.
        #[arg(long = "steps-grid", value_delimiter = ',', default_value = "10,20,50")]
        steps_grid: Vec<usize>,
    },
    /// Report unsafe rate and utility of the configured (or checkpointed) policy (JSON).
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(RunError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(RunError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

enum RunError {
    Usage(String),
    Runtime(String),
}

fn run(cli: Cli) -> Result<(), RunError> {
    let config_path = cli
        .config
        .ok_or_else(|| RunError::Usage("--config PATH is required".into()))?;
    let cfg = RunConfig::load(&config_path)
        .map_err(|e| RunError::Usage(format!("{}: {e}", config_path.display())))?;
    let seed = cli.seed.unwrap_or(cfg.run.seed);
    let out_dir = cli.out.clone().or_else(|| cfg.run.out_dir.clone());
    let workers = cli.workers.max(1);
    let runtime = |e: steerdiff_core::Error| RunError::Runtime(e.to_string());

    match cli.command {
        Command::Train => {
            let summary = cmd_train(&cfg, seed, out_dir.as_deref(), workers).map_err(runtime)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&summary).expect("summary serializes")
            );
        }
        Command::SteerSweep { alphas } => {
            if alphas.iter().any(|a| *a < 0.0) {
                return Err(RunError::Usage("steering strengths must be >= 0".into()));
            }
            let csv = cmd_steer_sweep(&cfg, &alphas).map_err(runtime)?;
            print!("{csv}");
            write_artifact(out_dir.as_deref(), "steer_sweep.csv", &csv)?;
        }
        Command::AblateReward { variants } => {
            let parsed = variants
                .iter()
                .map(|v| parse_variant(v))
                .collect::<steerdiff_core::Result<Vec<_>>>()
                .map_err(|e| RunError::Usage(e.to_string()))?;
            let rows = cmd_ablate_reward(&cfg, &parsed, seed, out_dir.as_deref(), workers)
                .map_err(runtime)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&rows).expect("rows serialize")
            );
        }
        Command::AblateSampler {
            checkpoint,
            etas,
            steps_grid,
        } => {
            let csv =
                cmd_ablate_sampler(&cfg, &checkpoint, &etas, &steps_grid, seed).map_err(runtime)?;
            print!("{csv}");
            write_artifact(out_dir.as_deref(), "ablate_sampler.csv", &csv)?;
        }
        Command::Eval { checkpoint } => {
            let report = cmd_eval(&cfg, checkpoint.as_deref(), seed).map_err(runtime)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&report).expect("report serializes")
            );
        }
    }
    Ok(())
}

fn write_artifact(
    out_dir: Option<&std::path::Path>,
    name: &str,
    text: &str,
) -> Result<(), RunError> {
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)
            .and_then(|_| std::fs::write(dir.join(name), text))
            .map_err(|e| RunError::Runtime(format!("writing {name}: {e}")))?;
    }
    Ok(())
}
