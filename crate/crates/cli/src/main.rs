use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use cka_cli::config::load_config;
use cka_cli::{commands, CliResult};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cka", version, about = "Train one student from several frozen teachers without labels")]
struct Cli {
    /// JSON run file; every omitted field takes its default.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override a config field, e.g. `--set train.alpha=0.3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate (or load) the dataset and write it with its task split.
    GenData,
    /// Train teachers on their task classes; all tasks unless `--task` is given.
    Pretrain {
        #[arg(long)]
        task: Option<usize>,
    },
    /// Train the student from the pretrained teachers.
    Amalgamate,
    /// Run a comparison method.
    Baseline {
        #[arg(long, value_parser = ["ensemble", "kd", "cfl"])]
        method: String,
    },
    /// Union accuracy of a saved network on the test split.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
    },
    /// Finite-difference check of the loss gradients.
    Gradcheck {
        #[arg(long, default_value = "all")]
        op: String,
        #[arg(long, default_value_t = 10)]
        configs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Sweep method variants over the configured seeds and emit a CSV table.
    Ablate {
        #[arg(long, value_parser = ["losses", "inter-metric"])]
        axis: String,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    let mut out = io::stdout().lock();
    if let Command::Gradcheck { op, configs, seed } = &cli.command {
        return commands::gradcheck(op, *configs, *seed, &mut out);
    }
    let cfg = load_config(cli.config.as_deref(), &cli.overrides)?;
    commands::write_resolved(&cfg)?;
    match cli.command {
        Command::GenData => commands::gen_data(&cfg, &mut out),
        Command::Pretrain { task } => commands::pretrain(&cfg, task, &mut out),
        Command::Amalgamate => commands::amalgamate(&cfg, &mut out),
        Command::Baseline { method } => commands::baseline(&cfg, &method, &mut out),
        Command::Evaluate { ckpt } => commands::evaluate(&cfg, &ckpt, &mut out),
        Command::Ablate { axis } => commands::ablate(&cfg, &axis, &mut out),
        Command::Gradcheck { .. } => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
