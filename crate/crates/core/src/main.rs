use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use adi::ablation::Axis;
use adi::commands::{self, Overrides};
use adi::config::RunConfig;
use adi::eval::Protocol;
use adi::Result;

#[derive(Parser)]
#[command(
    name = "adi",
    version,
    about = "Multi-domain two-tower retrieval with adaptive domain interest"
)]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run with this single seed instead of the configured list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Train with self-training pseudo-labels.
    #[arg(long, global = true)]
    self_train: bool,
    /// Evaluation protocol: open-corpus or candidate-list.
    #[arg(long, global = true)]
    protocol: Option<Protocol>,
    /// Drop each user's training positives from the retrieved lists.
    #[arg(long, global = true)]
    exclude_train_positives: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset into `paths.data`.
    GenData,
    /// Train a model and save its checkpoint and loss trace.
    Train {
        /// Continue from the saved checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate the saved checkpoint.
    Eval,
    /// Train and evaluate every variant of one ablation axis.
    Ablate {
        /// fusion, components, se-placement, shared-count or baselines.
        #[arg(long)]
        axis: Option<Axis>,
    },
    /// Report mean adaptation weights per domain and field.
    InspectAttention,
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let axis = match &cli.command {
        Command::Ablate { axis } => *axis,
        _ => None,
    };
    Overrides {
        seed: cli.seed,
        self_train: cli.self_train,
        protocol: cli.protocol,
        exclude_train_positives: cli.exclude_train_positives,
        axis,
    }
    .apply(&mut cfg);
    cfg.validate()?;

    match cli.command {
        Command::GenData => println!("{}", commands::cmd_gen_data(&cfg)?),
        Command::Train { resume } => {
            let trace = commands::cmd_train(&cfg, resume)?;
            match trace.last() {
                Some(last) => println!(
                    "epoch {}/{}: loss {:.6}; checkpoint {}",
                    last.epoch + 1,
                    cfg.train.epochs,
                    last.loss,
                    cfg.paths.checkpoint.display()
                ),
                None => println!(
                    "already trained for {} epochs; nothing to do",
                    cfg.train.epochs
                ),
            }
        }
        Command::Eval => print!("{}", commands::cmd_eval(&cfg)?.render()),
        Command::Ablate { .. } => print!("{}", commands::cmd_ablate(&cfg)?.render()),
        Command::InspectAttention => print!("{}", commands::cmd_inspect_attention(&cfg)?.1),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.kind();
            let text = e.to_string();
            let text = text.strip_prefix(&format!("{kind}: ")).unwrap_or(&text);
            let message = text.split_whitespace().collect::<Vec<_>>().join(" ");
            eprintln!("error[{kind}]: {message}");
            ExitCode::FAILURE
        }
    }
}
