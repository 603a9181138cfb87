use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use concil_cli::config::{base_dir_of, has_errors, resolve_config};
use concil_cli::{run_experiment, validate_config, CliError, RunOptions};

#[derive(Parser)]
#[command(name = "concil", version, about = "Run concept- and class-incremental experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write checkpoints and reports.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output.dir` from the config.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Replaces the split and model seeds (split/backbone: SEED, concept expansion: SEED+1).
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from a `checkpoints/phase-<t>` directory.
        #[arg(long)]
        resume_from: Option<PathBuf>,
    },
    /// Check a config without running it; prints one diagnostic per line.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn run(config: PathBuf, output_dir: Option<PathBuf>, seed: Option<u64>, resume_from: Option<PathBuf>) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&config).map_err(CliError::io(&config))?;
    let base_dir = base_dir_of(&config).to_path_buf();
    let (resolved, diagnostics) = resolve_config(&text, &base_dir);
    for d in &diagnostics {
        eprintln!("{d}");
    }
    let resolved = match resolved {
        Some(c) if !has_errors(&diagnostics) => c,
        _ => return Err(CliError::InvalidConfig(diagnostics)),
    };
    let resolved = match seed {
        Some(s) => resolved.with_seed(s),
        None => resolved,
    };
    let options = RunOptions {
        output_dir,
        resume_from,
        base_dir,
    };
    let summary = run_experiment(&resolved, &options)?;
    for (learner, record) in &summary.final_metrics {
        println!(
            "{} after {} phases: concept acc {:.4}, class acc {:.4}, concept forgetting {:.4}, class forgetting {:.4}",
            learner.name(),
            record.phase,
            record.avg_concept_accuracy,
            record.avg_class_accuracy,
            record.concept_forget_rate,
            record.class_forget_rate
        );
    }
    for path in &summary.report_files {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Validate { config } => {
            let diagnostics = validate_config(&config);
            for d in &diagnostics {
                println!("{d}");
            }
            if has_errors(&diagnostics) {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            }
        }
        Command::Run {
            config,
            output_dir,
            seed,
            resume_from,
        } => match run(config, output_dir, seed, resume_from) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("{}", serde_json::to_string_pretty(&e.report()).expect("report serializes"));
                ExitCode::from(e.exit_code() as u8)
            }
        },
    }
}
