use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use neurosleep::commands::{self, EdfInput, SweepAxis, PUBLISHED_PARAMS};
use neurosleep::config::{resolve, Overrides};
use neurosleep::{Error, Result};
use neurosleep_core::loss::WeightScheme;
use neurosleep_core::signal::{PrepConfig, ScaleMode, WakePolicy};
use neurosleep_core::synth::SynthSpec;
use neurosleep_core::Stage;

/// Sleep staging from raw EEG: preprocessing, training, evaluation.
#[derive(Parser)]
#[command(name = "neurosleep", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Turn EDF recordings into an epoch store.
    Preprocess(PreprocessArgs),
    /// Train on one subject-wise fold of a store.
    Train(TrainArgs),
    /// Score a checkpoint on a store and draw hypnograms.
    Eval(EvalArgs),
    /// Train once per setting of one configuration axis.
    Sweep(SweepArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic epoch store.
    Synth(SynthArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Flat TOML config listing every key; defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    sequence_length: Option<usize>,
    /// none, regular, balanced or log.
    #[arg(long, value_parser = parse_scheme)]
    scheme: Option<WeightScheme>,
    #[arg(long)]
    scales: Option<usize>,
    #[arg(long)]
    encoder_layers: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
}

impl RunArgs {
    fn resolve(&self) -> Result<neurosleep::config::RunConfig> {
        let o = Overrides {
            seed: self.seed,
            sequence_length: self.sequence_length,
            scheme: self.scheme,
            scales: self.scales,
            encoder_layers: self.encoder_layers,
            max_epochs: self.max_epochs,
        };
        resolve(self.config.as_deref(), &o)
    }
}

fn parse_scheme(s: &str) -> std::result::Result<WeightScheme, String> {
    s.parse().map_err(|e: neurosleep_core::Error| e.to_string())
}

#[derive(Args)]
struct PreprocessArgs {
    /// Signal files; the subject id is the file name without extension.
    #[arg(required = true)]
    psg: Vec<PathBuf>,
    /// Hypnogram files, one per signal file in the same order.
    #[arg(long)]
    hypnogram: Vec<PathBuf>,
    /// Comma-separated channel labels to keep, in order.
    #[arg(long, value_delimiter = ',')]
    channels: Vec<String>,
    #[arg(long, value_enum, default_value = "sleep-edf")]
    wake_policy: WakeArg,
    #[arg(long, value_enum, default_value = "recording")]
    scale: ScaleArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum WakeArg {
    SleepEdf,
    SleepOnly,
    KeepAll,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Recording,
    Epoch,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    store: PathBuf,
    /// Validation fold of the subject-wise split.
    #[arg(long, default_value_t = 0)]
    fold: usize,
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    Scales,
    Scheme,
    SequenceLength,
    EncoderLayers,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    store: PathBuf,
    /// Held-out store to score on; the validation fold otherwise.
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long, value_enum)]
    axis: AxisArg,
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Perturb one op's analytic gradient; the check must then fail.
    #[arg(long, hide = true)]
    corrupt: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Default,
    Overlapping,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "default")]
    preset: Preset,
    #[arg(long)]
    subjects: Option<usize>,
    #[arg(long)]
    epochs_per_subject: Option<usize>,
    #[arg(long)]
    samples_per_epoch: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    /// Five comma-separated class shares, W,N1,N2,N3,R.
    #[arg(long, value_delimiter = ',', num_args = 5)]
    proportions: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn counts_line(counts: &[usize; Stage::COUNT]) -> String {
    Stage::ALL
        .iter()
        .zip(counts)
        .map(|(s, c)| format!("{s} {c}"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => {
            let mut spec = match a.preset {
                Preset::Default => SynthSpec::default(),
                Preset::Overlapping => SynthSpec::overlapping(),
            };
            spec.seed = a.seed;
            if let Some(v) = a.subjects {
                spec.subjects = v;
            }
            if let Some(v) = a.epochs_per_subject {
                spec.epochs_per_subject = v;
            }
            if let Some(v) = a.samples_per_epoch {
                spec.samples_per_epoch = v;
            }
            if let Some(v) = a.channels {
                spec.channels = v;
            }
            if let Some(v) = a.noise {
                spec.noise = v;
            }
            if let Some(p) = a.proportions {
                spec.proportions.copy_from_slice(&p);
            }
            let s = commands::synth(&spec, &a.out)?;
            println!("{} epochs from {} subjects: {}", s.epochs, s.subjects, counts_line(&s.class_counts));
        }
        Command::Preprocess(a) => {
            if !a.hypnogram.is_empty() && a.hypnogram.len() != a.psg.len() {
                return Err(Error::Config(format!(
                    "{} hypnogram files for {} signal files",
                    a.hypnogram.len(),
                    a.psg.len()
                )));
            }
            let inputs: Vec<EdfInput> = a
                .psg
                .iter()
                .enumerate()
                .map(|(i, p)| EdfInput {
                    psg: p.clone(),
                    hypnogram: a.hypnogram.get(i).cloned(),
                })
                .collect();
            let prep = PrepConfig {
                channels: a.channels,
                wake_policy: match a.wake_policy {
                    WakeArg::SleepEdf => WakePolicy::SleepEdf,
                    WakeArg::SleepOnly => WakePolicy::SleepOnly,
                    WakeArg::KeepAll => WakePolicy::KeepAll,
                },
                scale: match a.scale {
                    ScaleArg::Recording => ScaleMode::Recording,
                    ScaleArg::Epoch => ScaleMode::Epoch,
                },
                ..PrepConfig::default()
            };
            let s = commands::preprocess(&inputs, &prep, &a.out)?;
            println!("{} epochs from {} recordings: {}", s.epochs, s.subjects, counts_line(&s.class_counts));
            if let Some(r) = &s.epoching {
                println!(
                    "dropped: {} unannotated, {} excluded labels, {} unknown labels, {} wake trim, {} fragments",
                    r.dropped_unannotated, r.dropped_excluded, r.dropped_unknown_label, r.dropped_wake_trim, r.dropped_fragment
                );
            }
        }
        Command::Train(a) => {
            let cfg = a.run.resolve()?;
            let s = commands::train(&a.store, &cfg, a.fold, &a.out)?;
            let published = if cfg.channels > 1 { PUBLISHED_PARAMS.0 } else { PUBLISHED_PARAMS.1 };
            println!("parameters: {} (published figure {published:.3e})", s.param_count);
            println!(
                "{:?} after {} epochs; best epoch {}",
                s.outcome.status,
                s.outcome.history.len(),
                s.outcome.best_epoch
            );
            if let Some(best) = s.outcome.history.iter().find(|h| h.epoch == s.outcome.best_epoch) {
                println!(
                    "validation: loss {:.4}, accuracy {:.4}, macro-F1 {:.4}",
                    best.val_loss, best.val_accuracy, best.val_macro_f1
                );
            }
            println!("checkpoint {}", s.checkpoint.display());
        }
        Command::Eval(a) => {
            let r = commands::eval(&a.checkpoint, &a.store, &a.out)?;
            print!("{}", neurosleep::report::confusion_table(&r));
        }
        Command::Sweep(a) => {
            let base = a.run.resolve()?;
            let axis = match a.axis {
                AxisArg::Scales => SweepAxis::Scales,
                AxisArg::Scheme => SweepAxis::Scheme,
                AxisArg::SequenceLength => SweepAxis::SequenceLength,
                AxisArg::EncoderLayers => SweepAxis::EncoderLayers,
            };
            let rows = commands::sweep(&a.store, a.test.as_deref(), &base, axis, &a.out)?;
            print!("{}", neurosleep::report::sweep_csv(&rows));
        }
        Command::Gradcheck(a) => {
            let r = commands::gradcheck(a.seed, a.corrupt)?;
            print!("{}", commands::gradcheck_table(&r));
            if !r.passed() {
                return Err(Error::Diverged("gradient check exceeded the threshold".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Ok(v) = std::env::var("NEUROSLEEP_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    log::warn!("could not size the thread pool: {e}");
                }
            }
            _ => {
                eprintln!("error: NEUROSLEEP_THREADS must be a positive integer, got {v:?}");
                return ExitCode::from(2);
            }
        }
    }
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
