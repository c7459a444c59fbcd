//! `byola`: synthesize data, pretrain, extract embeddings and probe them.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use byola_core::encoder::TemporalPooling;
use byola_core::eval::TaskKind;
use byola_core::{Error, RunConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "byola", version, about = "Self-supervised audio representations from log-mel spectrograms")]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

/// Options shared by the configurable subcommands. Precedence is flags,
/// then the config file, then built-in defaults.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Flat TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, env = "BYOLA_SEED")]
    pub seed: Option<u64>,
    /// Single worker everywhere; results depend only on inputs and seed.
    #[arg(long)]
    pub deterministic: bool,
    /// Print the fully resolved configuration and exit.
    #[arg(long)]
    pub print_config: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic labelled dataset and its manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// JSON dataset recipe; defaults to two pure-tone classes.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        clips_per_class: Option<usize>,
        #[arg(long)]
        duration: Option<f64>,
        /// Assign folds 1..=K instead of train/valid/test splits.
        #[arg(long)]
        folds: Option<u32>,
        #[arg(long, env = "BYOLA_SEED")]
        seed: Option<u64>,
    },
    /// Corpus log-mel mean and standard deviation as JSON.
    Stats {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Pretrain an encoder; writes checkpoint, sidecar and training log.
    Pretrain {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Precomputed corpus statistics (from `stats`).
        #[arg(long)]
        stats: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<u64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        max_steps: Option<u64>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        chain: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Embed every clip of a manifest with a pretrained encoder.
    Extract {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Output TNSR file; a CSV sidecar is written next to it.
        #[arg(long)]
        out: PathBuf,
        /// Override temporal pooling (mean_max, mean, max).
        #[arg(long)]
        pooling: Option<TemporalPooling>,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
    },
    /// Train linear probes on an embedding table and report test metrics.
    Probe {
        #[arg(long)]
        embeddings: PathBuf,
        /// Report path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        task: Option<TaskKind>,
        #[arg(long)]
        runs: Option<usize>,
        /// Fixed learning rate instead of the sweep.
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        max_epochs: Option<usize>,
        #[arg(long)]
        patience: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Produce two augmented views of every spectrogram in a TNSR file.
    Augment {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated blocks (mixup, gaussian, rrc, rlf) or `none`.
        #[arg(long)]
        chain: Option<String>,
        /// Statistics for pre-normalization; computed from the input when
        /// omitted.
        #[arg(long)]
        stats: Option<PathBuf>,
        /// Compute in double precision (output is still stored as f32).
        #[arg(long)]
        double: bool,
        #[command(flatten)]
        common: Common,
    },
}

/// Loads the config file and applies the common overrides.
pub fn resolve(common: &Common, apply: impl FnOnce(&mut RunConfig)) -> Result<RunConfig, Error> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if common.deterministic {
        cfg.deterministic = true;
    }
    apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::NonFinite(_) => 4,
        Error::Contract(_) => 1,
        _ => 3,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Synth {
            out,
            spec,
            clips_per_class,
            duration,
            folds,
            seed,
        } => commands::synth(&out, spec.as_deref(), clips_per_class, duration, folds, seed),
        Command::Stats { manifest, out, common } => {
            let cfg = resolve(&common, |_| {})?;
            if common.print_config {
                print!("{}", cfg.to_toml());
                return Ok(());
            }
            commands::stats(&cfg, &manifest, out.as_deref())
        }
        Command::Pretrain {
            manifest,
            out,
            stats,
            epochs,
            batch_size,
            max_steps,
            frames,
            chain,
            common,
        } => {
            let cfg = resolve(&common, |c| {
                if let Some(v) = epochs {
                    c.epochs = v;
                }
                if let Some(v) = batch_size {
                    c.batch_size = v;
                }
                if let Some(v) = max_steps {
                    c.max_steps = v;
                }
                if let Some(v) = frames {
                    c.frames = v;
                }
                if let Some(v) = chain {
                    c.chain = v;
                }
            })?;
            if common.print_config {
                print!("{}", cfg.to_toml());
                return Ok(());
            }
            commands::pretrain(&cfg, &manifest, &out, stats.as_deref())
        }
        Command::Extract {
            checkpoint,
            manifest,
            out,
            pooling,
            batch_size,
        } => commands::extract(&checkpoint, &manifest, &out, pooling, batch_size),
        Command::Probe {
            embeddings,
            out,
            task,
            runs,
            lr,
            max_epochs,
            patience,
            common,
        } => {
            let cfg = resolve(&common, |c| {
                if let Some(v) = task {
                    c.probe_task = v;
                }
                if let Some(v) = runs {
                    c.probe_runs = v;
                }
                if let Some(v) = lr {
                    c.probe_lr = v;
                }
                if let Some(v) = max_epochs {
                    c.probe_max_epochs = v;
                }
                if let Some(v) = patience {
                    c.probe_patience = v;
                }
            })?;
            if common.print_config {
                print!("{}", cfg.to_toml());
                return Ok(());
            }
            commands::probe(&cfg, &embeddings, out.as_deref())
        }
        Command::Augment {
            input,
            out,
            chain,
            stats,
            double,
            common,
        } => {
            let cfg = resolve(&common, |c| {
                if let Some(v) = chain {
                    c.chain = v;
                }
            })?;
            if common.print_config {
                print!("{}", cfg.to_toml());
                return Ok(());
            }
            commands::augment(&cfg, &input, &out, stats.as_deref(), double)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
