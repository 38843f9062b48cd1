//! `tcm`: train, evaluate and query text-classification-as-matching models.
//!
//! Exit codes: 0 on success, 1 when the arguments or config are invalid,
//! 2 when a run fails after validation.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tcm_core::experiments::presets;
use tcm_core::text::SyntheticConfig;

use crate::config::{FieldError, RunConfig, Validated, OUTPUT_ROOT_ENV};

#[derive(Parser)]
#[command(name = "tcm", version, about = "Text classification as matching")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// TOML run config.
    config: PathBuf,
    /// Replaces the config's seeds with this one.
    #[arg(long)]
    seed: Option<u64>,
    /// Replaces the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Root for relative output directories.
    #[arg(long, env = OUTPUT_ROOT_ENV, hide_env_values = true)]
    output_root: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model on one seed and save a checkpoint.
    Train(RunArgs),
    /// Run the config's protocol over all its seeds.
    Experiment(RunArgs),
    /// Classify texts with a trained checkpoint, one JSON line per text.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Label mapping; must match the one the checkpoint was trained on.
        #[arg(long)]
        mapping: PathBuf,
        #[arg(long, conflicts_with = "file", required_unless_present = "file")]
        text: Option<String>,
        /// One text per line.
        #[arg(long)]
        file: Option<PathBuf>,
    },
    /// Write a synthetic dataset and label mapping.
    MakeSynthetic(SyntheticArgs),
}

#[derive(Args)]
struct SyntheticArgs {
    /// Output directory for data.jsonl and labels.json.
    #[arg(long)]
    out: PathBuf,
    /// Starting point that the other flags override.
    #[arg(long, value_parser = ["synthetic40", "overlap"], default_value = "synthetic40")]
    preset: String,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long)]
    vocab_size: Option<usize>,
    #[arg(long)]
    signal_tokens_per_class: Option<usize>,
    #[arg(long)]
    signal_per_example: Option<usize>,
    #[arg(long)]
    shared_signal: Option<usize>,
    #[arg(long)]
    noise_len: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl SyntheticArgs {
    fn config(&self) -> SyntheticConfig {
        let mut c = match self.preset.as_str() {
            "overlap" => presets::synthetic_overlap(),
            _ => presets::synthetic40(),
        };
        let set = |dst: &mut usize, v: Option<usize>| *dst = v.unwrap_or(*dst);
        set(&mut c.classes, self.classes);
        set(&mut c.per_class, self.per_class);
        set(&mut c.vocab_size, self.vocab_size);
        set(&mut c.signal_tokens_per_class, self.signal_tokens_per_class);
        set(&mut c.signal_per_example, self.signal_per_example);
        set(&mut c.shared_signal, self.shared_signal);
        set(&mut c.noise_len, self.noise_len);
        c.seed = self.seed.unwrap_or(c.seed);
        c
    }
}

enum Failure {
    Validation(Vec<FieldError>),
    Runtime(tcm_core::Error),
}

impl From<tcm_core::Error> for Failure {
    fn from(e: tcm_core::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn validated(args: &RunArgs) -> Result<Validated, Failure> {
    let mut cfg = RunConfig::load(&args.config).map_err(Failure::Validation)?;
    if let Some(seed) = args.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate(args.output_root.as_deref())
        .map_err(Failure::Validation)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train(args) => {
            let v = validated(&args)?;
            commands::train(&v, v.config.seeds[0])?;
        }
        Command::Experiment(args) => {
            let v = validated(&args)?;
            commands::experiment(&v)?;
        }
        Command::Predict {
            checkpoint,
            mapping,
            text,
            file,
        } => {
            let input = match (text, file) {
                (Some(t), _) => commands::Input::Text(t),
                (None, Some(f)) => commands::Input::File(f),
                (None, None) => unreachable!("clap requires one of them"),
            };
            for (flag, path) in [("--checkpoint", &checkpoint), ("--mapping", &mapping)] {
                if !Path::new(path).is_file() {
                    return Err(Failure::Validation(vec![FieldError {
                        path: flag.into(),
                        message: format!("{}: file not found", path.display()),
                    }]));
                }
            }
            let stdout = std::io::stdout();
            commands::predict(&checkpoint, &mapping, &input, &mut stdout.lock())?;
        }
        Command::MakeSynthetic(args) => {
            let cfg = args.config();
            if let Err(e) = cfg.validate() {
                return Err(Failure::Validation(vec![FieldError {
                    path: "synthetic".into(),
                    message: e.to_string(),
                }]));
            }
            commands::make_synthetic(&cfg, &args.out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(errs)) => {
            for e in errs {
                eprintln!("error: {e}");
            }
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
