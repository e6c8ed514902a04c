//! The work behind each subcommand. Every command writes its artifacts and a
//! `manifest.json` into one output directory.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use neurosleep_core::gradcheck::{self, GradcheckOptions, GradcheckReport};
use neurosleep_core::loss::WeightScheme;
use neurosleep_core::metrics::EvalReport;
use neurosleep_core::model::param_count;
use neurosleep_core::signal::{pack_sequences, preprocess as prep_recording, EpochRecord, EpochReport, PrepConfig};
use neurosleep_core::synth::{generate_dataset, SynthSpec};
use neurosleep_core::train::{self, subject_kfold_split, StopReason, TrainOutcome};
use neurosleep_core::Stage;
use serde::Serialize;

use crate::checkpoint::{Checkpoint, CheckpointMeta};
use crate::config::RunConfig;
use crate::edf;
use crate::error::{Error, Result};
use crate::hypnogram;
use crate::io::write_file;
use crate::report::{self, ReportJson, SweepRow};
use crate::store::EpochStore;

pub const STORE_FILE: &str = "epochs.nse";
pub const CHECKPOINT_FILE: &str = "checkpoint.nsc";
pub const HISTORY_FILE: &str = "history.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const REPORT_FILE: &str = "report.json";
pub const CONFUSION_FILE: &str = "confusion.txt";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// Parameter counts quoted for the published two- and one-channel models.
pub const PUBLISHED_PARAMS: (f64, f64) = (2.18e5, 1.17e5);

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// Record of one run: enough to repeat it.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub tool_version: String,
    pub config: Option<RunConfig>,
    /// Command-specific settings (synthetic spec, preprocessing options, ...).
    pub settings: serde_json::Value,
    pub inputs: Vec<String>,
    pub seed: Option<u64>,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub outputs: Vec<String>,
}

impl Manifest {
    fn start(command: &str) -> Self {
        Self {
            command: command.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config: None,
            settings: serde_json::Value::Null,
            inputs: Vec::new(),
            seed: None,
            started_unix: unix_now(),
            finished_unix: 0.0,
            outputs: Vec::new(),
        }
    }

    fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    fn finish(mut self, out: &Path) -> Result<()> {
        self.finished_unix = unix_now();
        let path = out.join(MANIFEST_FILE);
        self.outputs.push(path.display().to_string());
        let text = serde_json::to_string_pretty(&self).map_err(|e| Error::Format(e.to_string()))?;
        write_file(&path, format!("{text}\n").as_bytes())
    }
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

fn write_text(manifest: &mut Manifest, path: PathBuf, text: &str) -> Result<()> {
    write_file(&path, text.as_bytes())?;
    manifest.output(&path);
    Ok(())
}

// ---------------------------------------------------------------- stores

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StoreSummary {
    pub epochs: usize,
    pub subjects: usize,
    pub channels: usize,
    pub samples_per_epoch: usize,
    /// W, N1, N2, N3, R.
    pub class_counts: [usize; Stage::COUNT],
    /// Per-reason drop counts; absent for synthetic data.
    pub epoching: Option<EpochReport>,
}

fn summarize(store: &EpochStore, epoching: Option<EpochReport>) -> StoreSummary {
    StoreSummary {
        epochs: store.epochs.len(),
        subjects: store.subjects().len(),
        channels: store.channels,
        samples_per_epoch: store.samples_per_epoch,
        class_counts: store.class_counts(),
        epoching,
    }
}

fn write_store(manifest: &mut Manifest, out: &Path, store: &EpochStore, summary: &StoreSummary) -> Result<()> {
    let path = out.join(STORE_FILE);
    store.write(&path)?;
    manifest.output(&path);
    let text = serde_json::to_string_pretty(summary).map_err(|e| Error::Format(e.to_string()))?;
    write_text(manifest, out.join(SUMMARY_FILE), &format!("{text}\n"))
}

/// Generates a synthetic store.
pub fn synth(spec: &SynthSpec, out: &Path) -> Result<StoreSummary> {
    let mut m = Manifest::start("synth");
    m.settings = to_value(spec);
    m.seed = Some(spec.seed);
    let epochs = generate_dataset(spec)?;
    let store = EpochStore::new(spec.channels, spec.samples_per_epoch, epochs)?;
    let summary = summarize(&store, None);
    write_store(&mut m, out, &store, &summary)?;
    m.finish(out)?;
    Ok(summary)
}

/// One signal file and its optional hypnogram file.
#[derive(Debug, Clone, Serialize)]
pub struct EdfInput {
    pub psg: PathBuf,
    pub hypnogram: Option<PathBuf>,
}

impl EdfInput {
    /// Subject id: the signal file's name without extension.
    pub fn subject_id(&self) -> String {
        self.psg
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.psg.display().to_string())
    }
}

/// Filters, resamples, scales and epochs EDF recordings into a store.
pub fn preprocess(inputs: &[EdfInput], prep: &PrepConfig, out: &Path) -> Result<StoreSummary> {
    if inputs.is_empty() {
        return Err(Error::Config("no input recordings given".into()));
    }
    let mut m = Manifest::start("preprocess");
    m.settings = to_value(prep);
    m.inputs = inputs
        .iter()
        .flat_map(|i| std::iter::once(&i.psg).chain(&i.hypnogram))
        .map(|p| p.display().to_string())
        .collect();
    let mut epochs = Vec::new();
    let mut total = EpochReport::default();
    let mut shape: Option<(usize, usize)> = None;
    for input in inputs {
        let rec = edf::load_recording(&input.psg, input.hypnogram.as_deref(), &input.subject_id())?;
        let (mut e, report) = prep_recording(&rec, prep).map_err(|err| Error::from(err).in_file(&input.psg))?;
        log::info!("{}: kept {} epochs", input.subject_id(), report.kept);
        total.merge(&report);
        if let Some(first) = e.first() {
            let s = (first.channels, first.width());
            match shape {
                None => shape = Some(s),
                Some(prev) if prev != s => {
                    return Err(Error::Format(format!(
                        "{} gives {} × {} epochs, earlier recordings gave {} × {}",
                        input.psg.display(),
                        s.0,
                        s.1,
                        prev.0,
                        prev.1
                    )))
                }
                _ => {}
            }
        }
        epochs.append(&mut e);
    }
    let (c, t) = shape.unwrap_or((prep.channels.len().max(1), (prep.target_rate * 30.0).round() as usize));
    let store = EpochStore::new(c, t, epochs)?;
    let summary = summarize(&store, Some(total));
    write_store(&mut m, out, &store, &summary)?;
    m.finish(out)?;
    Ok(summary)
}

// ---------------------------------------------------------------- training

fn check_store(store: &EpochStore, cfg: &RunConfig, path: &Path) -> Result<()> {
    if store.channels != cfg.channels || store.samples_per_epoch != cfg.samples_per_epoch {
        return Err(Error::Config(format!(
            "{} holds {} channels × {} samples per epoch; the config expects channels = {}, samples_per_epoch = {}",
            path.display(),
            store.channels,
            store.samples_per_epoch,
            cfg.channels,
            cfg.samples_per_epoch
        )));
    }
    Ok(())
}

fn pick(epochs: &[EpochRecord], idx: &[usize]) -> Vec<EpochRecord> {
    idx.iter().map(|&i| epochs[i].clone()).collect()
}

/// Subject-wise split of `store`: fold `fold` of a `cfg.folds`-way split
/// validates, the rest trains. Both sides are packed into sequences.
pub fn split_store(store: &EpochStore, cfg: &RunConfig, fold: usize) -> Result<(Vec<EpochRecord>, Vec<EpochRecord>)> {
    let subjects: Vec<String> = store.epochs.iter().map(|e| e.subject_id.clone()).collect();
    let folds = subject_kfold_split(&subjects, cfg.folds, cfg.seed)?;
    let f = folds.get(fold).ok_or_else(|| {
        Error::Config(format!("fold {fold} does not exist (folds = {})", cfg.folds))
    })?;
    let tr = pack_sequences(&pick(&store.epochs, &f.train), cfg.sequence_length)?;
    let va = pack_sequences(&pick(&store.epochs, &f.val), cfg.sequence_length)?;
    Ok((tr, va))
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub outcome: TrainOutcome,
    pub param_count: usize,
    pub checkpoint: PathBuf,
    pub history: PathBuf,
}

fn fit(cfg: &RunConfig, train_set: &[EpochRecord], val_set: &[EpochRecord]) -> Result<TrainOutcome> {
    Ok(train::train(train_set, val_set, &cfg.model(), &cfg.train())?)
}

/// Trains on one fold of a store. On divergence the best parameters so far
/// are still written before the error is returned.
pub fn train(store_path: &Path, cfg: &RunConfig, fold: usize, out: &Path) -> Result<TrainSummary> {
    cfg.validate()?;
    let mut m = Manifest::start("train");
    m.config = Some(cfg.clone());
    m.seed = Some(cfg.seed);
    m.inputs = vec![store_path.display().to_string()];
    m.settings = serde_json::json!({ "fold": fold });
    let store = EpochStore::read(store_path)?;
    check_store(&store, cfg, store_path)?;
    let (tr, va) = split_store(&store, cfg, fold)?;
    log::info!("training on {} sequences, validating on {}", tr.len(), va.len());

    let model = cfg.model();
    let count = param_count(&model);
    let outcome = fit(cfg, &tr, &va)?;
    let metrics = outcome
        .history
        .iter()
        .find(|h| h.epoch == outcome.best_epoch)
        .cloned();
    let ckpt = Checkpoint {
        meta: CheckpointMeta {
            model,
            train: cfg.train(),
            best_epoch: outcome.best_epoch,
            metrics,
        },
        params: outcome.params.clone(),
    };
    let checkpoint = out.join(CHECKPOINT_FILE);
    ckpt.write(&checkpoint)?;
    m.output(&checkpoint);
    let history = out.join(HISTORY_FILE);
    write_text(&mut m, history.clone(), &report::history_csv(&outcome.history))?;
    m.finish(out)?;

    if outcome.status == StopReason::Diverged {
        return Err(Error::Diverged(format!(
            "{}; best checkpoint (epoch {}) kept at {}",
            outcome.failure.clone().unwrap_or_default(),
            outcome.best_epoch,
            checkpoint.display()
        )));
    }
    Ok(TrainSummary {
        outcome,
        param_count: count,
        checkpoint,
        history,
    })
}

// ---------------------------------------------------------------- evaluation

/// Evaluates a checkpoint on a store: JSON report, confusion table and one
/// TSV and SVG hypnogram per subject.
pub fn eval(checkpoint_path: &Path, store_path: &Path, out: &Path) -> Result<EvalReport> {
    let mut m = Manifest::start("eval");
    m.inputs = vec![checkpoint_path.display().to_string(), store_path.display().to_string()];
    let ckpt = Checkpoint::read(checkpoint_path)?;
    let model = ckpt.meta.model;
    m.config = Some(RunConfig::from_parts(&model, &ckpt.meta.train));
    let store = EpochStore::read(store_path)?;
    if store.channels != model.channels || store.samples_per_epoch != model.samples_per_epoch {
        return Err(Error::Config(format!(
            "checkpoint expects {} channels × {} samples, {} holds {} × {}",
            model.channels,
            model.samples_per_epoch,
            store_path.display(),
            store.channels,
            store.samples_per_epoch
        )));
    }
    let data = pack_sequences(&store.epochs, model.sequence_length)?;
    let ev = train::evaluate(&ckpt.params, &data, &model)?;

    write_text(&mut m, out.join(REPORT_FILE), &ReportJson::new(&ev.report).to_json())?;
    write_text(&mut m, out.join(CONFUSION_FILE), &report::confusion_table(&ev.report))?;
    let dir = out.join("hypnograms");
    for (subject, preds) in ev.hypnograms() {
        let stem = hypnogram::file_stem(&subject);
        write_text(&mut m, dir.join(format!("{stem}.tsv")), &hypnogram::tsv(&preds))?;
        write_text(&mut m, dir.join(format!("{stem}.svg")), &hypnogram::svg(&subject, &preds))?;
    }
    m.finish(out)?;
    Ok(ev.report)
}

// ---------------------------------------------------------------- sweeps

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    Scales,
    Scheme,
    SequenceLength,
    EncoderLayers,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Scales => "scales",
            SweepAxis::Scheme => "scheme",
            SweepAxis::SequenceLength => "sequence_length",
            SweepAxis::EncoderLayers => "encoder_layers",
        }
    }

    /// Every setting of the axis applied to `base`, with a printable value.
    pub fn settings(self, base: &RunConfig) -> Vec<(String, RunConfig)> {
        let with = |f: &dyn Fn(&mut RunConfig)| {
            let mut c = base.clone();
            f(&mut c);
            c
        };
        match self {
            SweepAxis::Scales => (1..=5).map(|p| (p.to_string(), with(&|c| c.scales = p))).collect(),
            SweepAxis::SequenceLength => {
                (1..=5).map(|s| (s.to_string(), with(&|c| c.sequence_length = s))).collect()
            }
            SweepAxis::EncoderLayers => [0, 2]
                .into_iter()
                .map(|n| (n.to_string(), with(&|c| c.encoder_layers = n)))
                .collect(),
            SweepAxis::Scheme => WeightScheme::ALL
                .into_iter()
                .map(|s| (s.name().to_string(), with(&|c| c.scheme = s)))
                .collect(),
        }
    }
}

/// Trains once per axis setting with the seed held fixed and scores each
/// model on `test_path` (or on the validation fold when absent).
pub fn sweep(
    store_path: &Path,
    test_path: Option<&Path>,
    base: &RunConfig,
    axis: SweepAxis,
    out: &Path,
) -> Result<Vec<SweepRow>> {
    let mut m = Manifest::start("sweep");
    m.config = Some(base.clone());
    m.seed = Some(base.seed);
    m.settings = serde_json::json!({ "axis": axis.name() });
    m.inputs = std::iter::once(store_path)
        .chain(test_path)
        .map(|p| p.display().to_string())
        .collect();
    let store = EpochStore::read(store_path)?;
    check_store(&store, base, store_path)?;
    let test = test_path.map(EpochStore::read).transpose()?;
    if let (Some(t), Some(p)) = (&test, test_path) {
        check_store(t, base, p)?;
    }

    let mut rows = Vec::new();
    for (value, cfg) in axis.settings(base) {
        cfg.validate()?;
        let (tr, va) = split_store(&store, &cfg, 0)?;
        log::info!("sweep {} = {value}", axis.name());
        let outcome = fit(&cfg, &tr, &va)?;
        if outcome.status == StopReason::Diverged {
            return Err(Error::Diverged(format!(
                "{} = {value}: {}",
                axis.name(),
                outcome.failure.unwrap_or_default()
            )));
        }
        let held = match &test {
            Some(t) => pack_sequences(&t.epochs, cfg.sequence_length)?,
            None => va,
        };
        let ev = train::evaluate(&outcome.params, &held, &cfg.model())?;
        rows.push(SweepRow {
            axis: axis.name().into(),
            value,
            report: ev.report,
        });
    }
    write_text(&mut m, out.join(SWEEP_FILE), &report::sweep_csv(&rows))?;
    m.finish(out)?;
    Ok(rows)
}

// ---------------------------------------------------------------- gradcheck

pub fn gradcheck(seed: u64, corrupt: Option<String>) -> Result<GradcheckReport> {
    let opts = GradcheckOptions {
        seed,
        corrupt,
        ..GradcheckOptions::default()
    };
    Ok(gradcheck::run(&opts)?)
}

pub fn gradcheck_table(r: &GradcheckReport) -> String {
    let mut s = format!("{:<28} {:>14} {:>7} {:>7}  result\n", "op", "max rel error", "points", "coords");
    for row in r.rows() {
        s.push_str(&format!(
            "{:<28} {:>14.3e} {:>7} {:>7}  {}\n",
            row.name,
            row.max_rel_error,
            row.points,
            row.coords,
            if row.passed() { "pass" } else { "FAIL" }
        ));
    }
    s.push_str(&format!("threshold {:e}\n", gradcheck::THRESHOLD));
    s
}
