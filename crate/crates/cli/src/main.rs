use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use slime_cli::config::RunConfig;
use slime_cli::{commands, rundir, CliError, Outcome};

/// Preference optimization with the SLIME objective and DPO/SimPO baselines
/// on a toy autoregressive policy.
#[derive(Parser)]
#[command(name = "slime", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one objective and write metrics, checkpoints and the resolved config.
    Train(Common),
    /// Compare analytic gradients with finite differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Check a deliberately wrong gradient formula (test hook).
        #[arg(long, hide = true)]
        corrupt: bool,
    },
    /// Train every ablation variant and the exponent sweep.
    Ablate(Common),
    /// Train SLIME, SimPO and DPO from the same start and tabulate the outcome.
    Compare(Common),
    /// Write the synthetic corpus as JSONL.
    GenData(Common),
}

#[derive(Args)]
struct Common {
    /// TOML configuration file; every key has a default.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a config key, `key=value` or `section.key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Objective to train: slime, simpo or dpo.
    #[arg(long)]
    objective: Option<String>,
    /// Use a synthetic corpus of N pairs.
    #[arg(long, value_name = "N", conflicts_with = "data")]
    synthetic: Option<usize>,
    /// JSONL corpus.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Run directory. Defaults to a timestamped directory under the output root.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(o) = &self.objective {
            config.train.objective = o.clone();
        }
        if let Some(n) = self.synthetic {
            config.data.path = None;
            config.data.synthetic_pairs = n;
        }
        if let Some(p) = &self.data {
            config.data.path = Some(p.display().to_string());
        }
        if let Some(s) = self.seed {
            config.train.seed = s;
        }
        if let Some(lr) = self.lr {
            config.train.lr = lr;
        }
        if let Some(e) = self.epochs {
            config.train.epochs = e;
        }
        if let Some(b) = self.batch_size {
            config.train.batch_size = b;
        }
        config.apply_set_args(&self.set)?;
        config.validate()?;
        Ok(config)
    }
}

fn run(cli: Cli) -> Result<Outcome, CliError> {
    let (name, common) = match &cli.command {
        Command::Train(c) => ("train", c),
        Command::Gradcheck { common, .. } => ("gradcheck", common),
        Command::Ablate(c) => ("ablate", c),
        Command::Compare(c) => ("compare", c),
        Command::GenData(c) => ("gen-data", c),
    };
    let config = common.resolve()?;
    let run_dir = rundir::prepare(common.out.as_deref(), config.output.dir.as_deref(), name)?;
    match cli.command {
        Command::Train(_) => commands::cmd_train(&config, &run_dir),
        Command::Gradcheck { corrupt, .. } => commands::cmd_gradcheck(&config, &run_dir, corrupt),
        Command::Ablate(_) => commands::cmd_ablate(&config, &run_dir),
        Command::Compare(_) => commands::cmd_compare(&config, &run_dir),
        Command::GenData(_) => commands::cmd_gen_data(&config, &run_dir),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::CheckFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
