//! Recording-level preprocessing: scaling, label mapping, epoching with a
//! wake-trimming policy, and many-to-one sequence packing.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::filter::bandpass;
use super::resample::resample;
use crate::error::{Error, Result};
use crate::math;
use crate::stage::Stage;
use crate::tensor::Tensor;

pub const TARGET_RATE: f64 = 100.0;
pub const EPOCH_SECONDS: f64 = 30.0;
/// Pre-sleep wake kept under [`WakePolicy::SleepEdf`]: 20 minutes.
pub const PRE_SLEEP_WAKE_EPOCHS: usize = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub name: String,
    pub samples: Vec<f64>,
    pub fs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub onset: f64,
    pub duration: f64,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recording {
    pub subject_id: String,
    pub channels: Vec<Channel>,
    pub annotations: Vec<Annotation>,
}

/// One labelled input: `channels × width` samples, row-major. `width` is
/// `T` for a single epoch and `S·T` after packing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub subject_id: String,
    pub epoch_index: u32,
    pub label: Stage,
    pub channels: usize,
    pub samples: Vec<f64>,
}

impl EpochRecord {
    pub fn width(&self) -> usize {
        self.samples.len() / self.channels.max(1)
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let w = self.width();
        &self.samples[c * w..(c + 1) * w]
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        Tensor::new(&[self.channels, self.width()], self.samples.clone())
    }
}

// ---------------------------------------------------------------- scaling

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMode {
    /// One mean/std per channel over the whole recording.
    #[default]
    Recording,
    /// One mean/std per channel per epoch.
    Epoch,
}

/// Z-scores `x` with population statistics; returns `(scaled, mean, std)`.
pub fn standard_scale(x: &[f64]) -> Result<(Vec<f64>, f64, f64)> {
    if x.is_empty() {
        return Err(Error::Empty("standard_scale: empty series"));
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = math::sqrt(var);
    if !(std > 0.0) || std <= f64::EPSILON * mean.abs().max(1.0) {
        return Err(Error::InvalidArgument(format!(
            "cannot scale a constant series (value {mean}, {} samples)",
            x.len()
        )));
    }
    Ok((x.iter().map(|v| (v - mean) / std).collect(), mean, std))
}

// ---------------------------------------------------------------- labels

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MappedLabel {
    Stage(Stage),
    /// Known non-stage label (movement, unscored).
    Excluded,
    /// Unrecognised text; dropped and counted.
    Unknown,
}

/// Maps AASM and R&K annotation text to the five stages. R&K stages 3 and 4
/// both become N3.
pub fn map_label(raw: &str) -> MappedLabel {
    let s = raw.trim().to_ascii_lowercase();
    let s = s
        .strip_prefix("sleep stage")
        .or_else(|| s.strip_prefix("stage"))
        .map(str::trim)
        .unwrap_or(&s);
    match s {
        "w" | "wake" | "0" => MappedLabel::Stage(Stage::W),
        "1" | "n1" | "s1" => MappedLabel::Stage(Stage::N1),
        "2" | "n2" | "s2" => MappedLabel::Stage(Stage::N2),
        "3" | "4" | "n3" | "s3" | "s4" | "n4" => MappedLabel::Stage(Stage::N3),
        "r" | "rem" | "5" => MappedLabel::Stage(Stage::R),
        "?" | "movement time" | "movement" | "mt" | "unknown" | "unscored" => MappedLabel::Excluded,
        _ => MappedLabel::Unknown,
    }
}

// ---------------------------------------------------------------- epoching

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WakePolicy {
    /// Keep 20 minutes of wake before the first sleep epoch, none after the last.
    #[default]
    SleepEdf,
    /// Keep only first-sleep through last-sleep.
    SleepOnly,
    /// No trimming.
    KeepAll,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochReport {
    pub kept: usize,
    pub dropped_unannotated: usize,
    pub dropped_excluded: usize,
    pub dropped_unknown_label: usize,
    pub dropped_wake_trim: usize,
    /// Annotation spans or signal tails shorter than one epoch.
    pub dropped_fragment: usize,
    pub unknown_labels: BTreeMap<String, usize>,
    pub class_counts: [usize; Stage::COUNT],
}

impl EpochReport {
    pub fn merge(&mut self, other: &EpochReport) {
        self.kept += other.kept;
        self.dropped_unannotated += other.dropped_unannotated;
        self.dropped_excluded += other.dropped_excluded;
        self.dropped_unknown_label += other.dropped_unknown_label;
        self.dropped_wake_trim += other.dropped_wake_trim;
        self.dropped_fragment += other.dropped_fragment;
        for (k, v) in &other.unknown_labels {
            *self.unknown_labels.entry(k.clone()).or_default() += v;
        }
        for (a, b) in self.class_counts.iter_mut().zip(other.class_counts) {
            *a += b;
        }
    }
}

fn epoch_samples(fs: f64) -> Result<usize> {
    let t = fs * EPOCH_SECONDS;
    if math::round(t) != t || t < 1.0 {
        return Err(Error::InvalidArgument(format!(
            "a {EPOCH_SECONDS} s epoch at {fs} Hz is not a whole number of samples"
        )));
    }
    Ok(t as usize)
}

/// Cuts a recording whose channels share one rate into 30 s epochs along the
/// annotation spans, maps labels, and applies the wake policy.
pub fn epochize(rec: &Recording, policy: WakePolicy) -> Result<(Vec<EpochRecord>, EpochReport)> {
    let first = rec
        .channels
        .first()
        .ok_or(Error::Empty("epochize: recording has no channels"))?;
    let fs = first.fs;
    if rec.channels.iter().any(|c| c.fs != fs) {
        return Err(Error::InvalidArgument(
            "epochize: channels must share one sampling rate".into(),
        ));
    }
    let t = epoch_samples(fs)?;
    let len = rec.channels.iter().map(|c| c.samples.len()).min().unwrap_or(0);
    let mut report = EpochReport::default();

    let mut spans: Vec<&Annotation> = rec.annotations.iter().filter(|a| a.duration > 0.0).collect();
    spans.sort_by(|a, b| a.onset.total_cmp(&b.onset));

    // Candidate epochs in time order: (epoch start in seconds, mapped label).
    let mut candidates: Vec<(f64, MappedLabel, &str)> = Vec::new();
    let mut cursor = 0.0f64;
    for a in spans {
        if a.onset > cursor {
            let gap = a.onset - cursor;
            if !candidates.is_empty() {
                report.dropped_unannotated += (gap / EPOCH_SECONDS) as usize;
            }
        }
        let n = (a.duration / EPOCH_SECONDS + 1e-9) as usize;
        if (a.duration - n as f64 * EPOCH_SECONDS).abs() > 1e-6 {
            report.dropped_fragment += 1;
        }
        let mapped = map_label(&a.label);
        for k in 0..n {
            candidates.push((a.onset + k as f64 * EPOCH_SECONDS, mapped, a.label.as_str()));
        }
        cursor = cursor.max(a.onset + a.duration);
    }

    // Only epochs fully backed by signal count.
    candidates.retain(|&(start, _, _)| {
        let s = math::round(start * fs) as usize;
        let ok = s + t <= len;
        if !ok {
            report.dropped_fragment += 1;
        }
        ok
    });

    let is_sleep = |m: &MappedLabel| matches!(m, MappedLabel::Stage(s) if *s != Stage::W);
    let first_sleep = candidates.iter().position(|c| is_sleep(&c.1));
    let last_sleep = candidates.iter().rposition(|c| is_sleep(&c.1));
    let (lo, hi) = match (policy, first_sleep, last_sleep) {
        (WakePolicy::KeepAll, _, _) => (0, candidates.len()),
        (_, Some(f), Some(l)) => {
            let lo = match policy {
                WakePolicy::SleepEdf => f.saturating_sub(PRE_SLEEP_WAKE_EPOCHS),
                _ => f,
            };
            (lo, l + 1)
        }
        _ => (0, 0),
    };

    let mut out = Vec::new();
    for (i, (start, mapped, raw)) in candidates.into_iter().enumerate() {
        if i < lo || i >= hi {
            report.dropped_wake_trim += 1;
            continue;
        }
        let stage = match mapped {
            MappedLabel::Stage(s) => s,
            MappedLabel::Excluded => {
                report.dropped_excluded += 1;
                continue;
            }
            MappedLabel::Unknown => {
                log::warn!("unrecognised stage label {raw:?}; epoch dropped");
                report.dropped_unknown_label += 1;
                *report.unknown_labels.entry(raw.to_string()).or_default() += 1;
                continue;
            }
        };
        let s = math::round(start * fs) as usize;
        let mut samples = Vec::with_capacity(rec.channels.len() * t);
        for c in &rec.channels {
            samples.extend_from_slice(&c.samples[s..s + t]);
        }
        report.kept += 1;
        report.class_counts[stage.index()] += 1;
        out.push(EpochRecord {
            subject_id: rec.subject_id.clone(),
            epoch_index: math::round(start / EPOCH_SECONDS) as u32,
            label: stage,
            channels: rec.channels.len(),
            samples,
        });
    }
    Ok((out, report))
}

// ---------------------------------------------------------------- packing

/// Sliding windows of `s` consecutive epochs of one subject, concatenated
/// along time per channel and labelled with the last epoch. A window never
/// spans a subject change or a gap in `epoch_index`.
pub fn pack_sequences(epochs: &[EpochRecord], s: usize) -> Result<Vec<EpochRecord>> {
    if !(1..=5).contains(&s) {
        return Err(Error::config("sequence_length", format!("must lie in 1..=5, got {s}")));
    }
    if s == 1 {
        return Ok(epochs.to_vec());
    }
    let mut out = Vec::new();
    let mut run_start = 0;
    for i in 0..epochs.len() {
        let e = &epochs[i];
        if i > 0 {
            let p = &epochs[i - 1];
            let contiguous = p.subject_id == e.subject_id && p.epoch_index + 1 == e.epoch_index;
            if !contiguous {
                if i - run_start < s {
                    log::warn!(
                        "subject {} has a run of {} epochs, shorter than {s}; it yields no samples",
                        p.subject_id,
                        i - run_start
                    );
                }
                run_start = i;
            }
        }
        if i + 1 - run_start < s {
            continue;
        }
        let window = &epochs[i + 1 - s..=i];
        let c = e.channels;
        let w = e.width();
        if window.iter().any(|x| x.channels != c || x.width() != w) {
            return Err(Error::shape("pack_sequences", "epoch", "epochs differ in shape".to_string()));
        }
        let mut samples = Vec::with_capacity(c * w * s);
        for ch in 0..c {
            for x in window {
                samples.extend_from_slice(x.channel(ch));
            }
        }
        out.push(EpochRecord {
            subject_id: e.subject_id.clone(),
            epoch_index: e.epoch_index,
            label: e.label,
            channels: c,
            samples,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------- pipeline

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrepConfig {
    pub low_hz: f64,
    pub high_hz: f64,
    pub target_rate: f64,
    pub scale: ScaleMode,
    pub wake_policy: WakePolicy,
    /// Channel names to keep, in order; all channels when empty.
    pub channels: Vec<String>,
}

impl Default for PrepConfig {
    fn default() -> Self {
        Self {
            low_hz: 0.5,
            high_hz: 30.0,
            target_rate: TARGET_RATE,
            scale: ScaleMode::Recording,
            wake_policy: WakePolicy::SleepEdf,
            channels: Vec::new(),
        }
    }
}

fn select_channels<'a>(rec: &'a Recording, names: &[String]) -> Result<Vec<&'a Channel>> {
    if names.is_empty() {
        return Ok(rec.channels.iter().collect());
    }
    names
        .iter()
        .map(|n| {
            rec.channels
                .iter()
                .find(|c| c.name.trim() == n.trim())
                .ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "recording {} has no channel named {n:?}",
                        rec.subject_id
                    ))
                })
        })
        .collect()
}

/// Band-pass, resample, scale, epoch and label one recording.
pub fn preprocess(rec: &Recording, cfg: &PrepConfig) -> Result<(Vec<EpochRecord>, EpochReport)> {
    let chans = select_channels(rec, &cfg.channels)?;
    let mut processed = Vec::with_capacity(chans.len());
    for c in chans {
        let filtered = bandpass(&c.samples, c.fs, cfg.low_hz, cfg.high_hz)?;
        let mut x = resample(&filtered, c.fs, cfg.target_rate)?;
        if cfg.scale == ScaleMode::Recording {
            x = standard_scale(&x)
                .map_err(|e| Error::InvalidArgument(format!("channel {:?}: {e}", c.name)))?
                .0;
        }
        processed.push(Channel {
            name: c.name.clone(),
            samples: x,
            fs: cfg.target_rate,
        });
    }
    let rec = Recording {
        subject_id: rec.subject_id.clone(),
        channels: processed,
        annotations: rec.annotations.clone(),
    };
    let (mut epochs, report) = epochize(&rec, cfg.wake_policy)?;
    if cfg.scale == ScaleMode::Epoch {
        for e in &mut epochs {
            scale_epoch(e)?;
        }
    }
    Ok((epochs, report))
}

/// Per-channel z-score of a single epoch in place.
pub fn scale_epoch(e: &mut EpochRecord) -> Result<()> {
    let w = e.width();
    for c in 0..e.channels {
        let (z, _, _) = standard_scale(&e.samples[c * w..(c + 1) * w])?;
        e.samples[c * w..(c + 1) * w].copy_from_slice(&z);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn rec(minutes: usize, labels: &[(&str, usize)], fs: f64) -> Recording {
        let n = (minutes as f64 * 60.0 * fs) as usize;
        let samples: Vec<f64> = (0..n).map(|i| math::sin(i as f64 * 0.37) + (i % 7) as f64 * 0.1).collect();
        let mut annotations = Vec::new();
        let mut t = 0.0;
        for &(l, epochs) in labels {
            annotations.push(Annotation {
                onset: t,
                duration: epochs as f64 * 30.0,
                label: l.to_string(),
            });
            t += epochs as f64 * 30.0;
        }
        Recording {
            subject_id: "s1".into(),
            channels: vec![Channel {
                name: "Fpz-Cz".into(),
                samples,
                fs,
            }],
            annotations,
        }
    }

    #[test]
    fn scaling_hand_values() {
        let (z, m, s) = standard_scale(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m, 2.0);
        assert!((s - math::sqrt(2.0 / 3.0)).abs() < 1e-15);
        let mean: f64 = z.iter().sum::<f64>() / 3.0;
        let var: f64 = z.iter().map(|v| v * v).sum::<f64>() / 3.0;
        assert!(mean.abs() < 1e-15 && (var - 1.0).abs() < 1e-15);
        let (again, _, _) = standard_scale(&z).unwrap();
        for (a, b) in again.iter().zip(&z) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(standard_scale(&[4.0; 10]).is_err());
    }

    #[test]
    fn labels() {
        assert_eq!(map_label("Sleep stage 4"), MappedLabel::Stage(Stage::N3));
        assert_eq!(map_label("Sleep stage 3"), MappedLabel::Stage(Stage::N3));
        assert_eq!(map_label("Sleep stage W"), MappedLabel::Stage(Stage::W));
        assert_eq!(map_label("Sleep stage R"), MappedLabel::Stage(Stage::R));
        assert_eq!(map_label("Sleep stage N2"), MappedLabel::Stage(Stage::N2));
        assert_eq!(map_label("Movement time"), MappedLabel::Excluded);
        assert_eq!(map_label("Sleep stage ?"), MappedLabel::Excluded);
        assert_eq!(map_label("Lights off"), MappedLabel::Unknown);
    }

    #[test]
    fn ten_minutes_gives_twenty_epochs() {
        let r = rec(10, &[("Sleep stage 2", 20)], 100.0);
        let (e, rep) = epochize(&r, WakePolicy::KeepAll).unwrap();
        assert_eq!(e.len(), 20);
        assert_eq!(rep.kept, 20);
        assert!(e.iter().all(|x| x.samples.len() == 3000));
        assert_eq!(e[3].epoch_index, 3);
        assert_eq!(e[1].samples[..], r.channels[0].samples[3000..6000]);
    }

    #[test]
    fn sleep_edf_keeps_forty_pre_sleep_wake_epochs() {
        let r = rec(
            60 + 30 + 20,
            &[("Sleep stage W", 120), ("Sleep stage 2", 60), ("Sleep stage W", 40)],
            100.0,
        );
        let (e, rep) = epochize(&r, WakePolicy::SleepEdf).unwrap();
        let wake_before = e.iter().take_while(|x| x.label == Stage::W).count();
        assert_eq!(wake_before, 40);
        assert_eq!(e.len(), 100);
        assert_eq!(e.last().unwrap().label, Stage::N2);
        assert_eq!(rep.dropped_wake_trim, 80 + 40);
        let (e, _) = epochize(&r, WakePolicy::SleepOnly).unwrap();
        assert_eq!(e.len(), 60);
    }

    #[test]
    fn trailing_fragment_dropped() {
        // 10 min of labels but 9 min 45 s of signal
        let mut r = rec(10, &[("Sleep stage 1", 20)], 100.0);
        r.channels[0].samples.truncate(58_500);
        let (e, rep) = epochize(&r, WakePolicy::KeepAll).unwrap();
        assert_eq!(e.len(), 19);
        assert_eq!(rep.dropped_fragment, 1);
    }

    #[test]
    fn unannotated_gap_and_unknown_labels_counted() {
        let mut r = rec(10, &[("Sleep stage 1", 5)], 100.0);
        r.annotations.push(Annotation {
            onset: 300.0,
            duration: 60.0,
            label: "Sleep stage R".into(),
        });
        r.annotations.push(Annotation {
            onset: 360.0,
            duration: 30.0,
            label: "Bathroom".into(),
        });
        let (e, rep) = epochize(&r, WakePolicy::KeepAll).unwrap();
        assert_eq!(e.len(), 7);
        assert_eq!(rep.dropped_unannotated, 5);
        assert_eq!(rep.dropped_unknown_label, 1);
        assert_eq!(rep.unknown_labels.get("Bathroom"), Some(&1));
        assert_eq!(e[5].epoch_index, 10);
    }

    fn epoch(subject: &str, idx: u32, label: Stage, value: f64) -> EpochRecord {
        EpochRecord {
            subject_id: subject.into(),
            epoch_index: idx,
            label,
            channels: 2,
            samples: vec![value, value, -value, -value],
        }
    }

    #[test]
    fn packing_counts_and_layout() {
        let es: Vec<EpochRecord> = (0..10).map(|i| epoch("a", i, Stage::ALL[i as usize % 5], i as f64)).collect();
        assert_eq!(pack_sequences(&es, 1).unwrap(), es);
        let p = pack_sequences(&es, 3).unwrap();
        assert_eq!(p.len(), 8);
        assert_eq!(p[0].label, es[2].label);
        assert_eq!(p[0].samples, vec![0.0, 0.0, 1.0, 1.0, 2.0, 2.0, -0.0, -0.0, -1.0, -1.0, -2.0, -2.0]);
    }

    #[test]
    fn packing_never_crosses_subjects_or_gaps() {
        let mut es: Vec<EpochRecord> = (0..4).map(|i| epoch("a", i, Stage::W, 1.0)).collect();
        es.extend((0..4).map(|i| epoch("b", i, Stage::N2, 2.0)));
        es.extend([epoch("c", 0, Stage::R, 3.0), epoch("c", 1, Stage::R, 3.0), epoch("c", 5, Stage::R, 3.0)]);
        let p = pack_sequences(&es, 3).unwrap();
        assert_eq!(p.len(), 4);
        for x in &p {
            let v = x.samples[0];
            assert!(x.samples[..6].iter().all(|&s| s == v), "mixed window");
        }
        assert!(pack_sequences(&es, 6).is_err());
    }

    #[test]
    fn pipeline_is_deterministic_and_shaped() {
        let mut r = rec(12, &[("Sleep stage W", 4), ("Sleep stage 3", 10), ("Sleep stage 4", 10)], 200.0);
        r.channels.push(Channel {
            name: "Pz-Oz".into(),
            samples: r.channels[0].samples.iter().map(|v| v * 0.5 + 0.1).collect(),
            fs: 200.0,
        });
        let cfg = PrepConfig::default();
        let (a, rep) = preprocess(&r, &cfg).unwrap();
        let (b, _) = preprocess(&r, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 24);
        assert_eq!(rep.class_counts, [4, 0, 0, 20, 0]);
        assert!(a.iter().all(|e| e.samples.len() == 2 * 3000));
        let only = PrepConfig {
            channels: vec!["Pz-Oz".into()],
            ..PrepConfig::default()
        };
        assert_eq!(preprocess(&r, &only).unwrap().0[0].channels, 1);
        let missing = PrepConfig {
            channels: vec!["EOG".into()],
            ..PrepConfig::default()
        };
        assert!(preprocess(&r, &missing).is_err());
    }
}
