//! Synthetic EEG epochs with a distinct spectral signature per stage.
//!
//! Each epoch and channel is a sum of band-limited tones with random
//! frequencies and phases, optionally gated into bursts, plus white Gaussian
//! noise, then z-scored.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::rng::{derive_seed, seeded, Rng};
use crate::signal::{scale_epoch, EpochRecord};
use crate::stage::Stage;

/// A frequency band contributing to a class signature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub low_hz: f64,
    pub high_hz: f64,
    pub amplitude: f64,
    /// Gate the band into short bursts (sleep spindles) instead of a
    /// continuous rhythm.
    #[serde(default)]
    pub bursts: bool,
}

impl Band {
    pub const fn new(low_hz: f64, high_hz: f64, amplitude: f64) -> Self {
        Self {
            low_hz,
            high_hz,
            amplitude,
            bursts: false,
        }
    }

    pub const fn bursts(low_hz: f64, high_hz: f64, amplitude: f64) -> Self {
        Self {
            low_hz,
            high_hz,
            amplitude,
            bursts: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    /// Signature per stage, indexed W, N1, N2, N3, R.
    pub classes: Vec<Vec<Band>>,
    /// White-noise standard deviation relative to unit tone amplitude.
    pub noise: f64,
    pub channels: usize,
    pub subjects: usize,
    pub epochs_per_subject: usize,
    /// Class shares over the whole dataset.
    pub proportions: [f64; Stage::COUNT],
    pub sampling_rate: f64,
    pub samples_per_epoch: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: vec![
                vec![Band::new(8.0, 12.0, 1.0)],
                vec![Band::new(4.0, 8.0, 1.0)],
                vec![Band::bursts(12.0, 14.0, 1.5)],
                vec![Band::new(0.5, 4.0, 1.0)],
                vec![Band::new(4.0, 8.0, 0.7), Band::new(15.0, 30.0, 0.7)],
            ],
            noise: 0.5,
            channels: 2,
            subjects: 40,
            epochs_per_subject: 50,
            proportions: [0.2; Stage::COUNT],
            sampling_rate: 100.0,
            samples_per_epoch: 3000,
            seed: 0,
        }
    }
}

impl SynthSpec {
    /// Neighbouring stages share parts of their bands and the noise is
    /// higher, so single-band power no longer separates every class.
    pub fn overlapping() -> Self {
        Self {
            classes: vec![
                vec![Band::new(7.0, 12.0, 1.0), Band::new(4.0, 7.0, 0.4)],
                vec![Band::new(4.0, 9.0, 1.0), Band::new(9.0, 12.0, 0.4)],
                vec![Band::new(4.0, 8.0, 0.6), Band::bursts(11.0, 15.0, 1.2)],
                vec![Band::new(0.5, 5.0, 1.0), Band::new(4.0, 8.0, 0.5)],
                vec![Band::new(4.0, 8.0, 0.8), Band::new(12.0, 25.0, 0.5)],
            ],
            noise: 1.0,
            ..Self::default()
        }
    }

    pub fn total_epochs(&self) -> usize {
        self.subjects * self.epochs_per_subject
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.len() != Stage::COUNT {
            return Err(Error::config(
                "classes",
                format!("need {} class signatures, got {}", Stage::COUNT, self.classes.len()),
            ));
        }
        let nyquist = self.sampling_rate / 2.0;
        for (i, bands) in self.classes.iter().enumerate() {
            if bands.is_empty() {
                return Err(Error::config("classes", format!("class {i} has no bands")));
            }
            for b in bands {
                if !(0.5 <= b.low_hz && b.low_hz < b.high_hz && b.high_hz <= 30.0 && b.high_hz < nyquist) {
                    return Err(Error::config(
                        "classes",
                        format!("class {i} band {}..{} Hz must lie within 0.5..30 Hz", b.low_hz, b.high_hz),
                    ));
                }
                if !(b.amplitude > 0.0) {
                    return Err(Error::config("classes", format!("class {i} has a non-positive amplitude")));
                }
            }
        }
        if !(self.noise >= 0.0) {
            return Err(Error::config("noise", "must be non-negative"));
        }
        if self.channels == 0 || self.subjects == 0 || self.epochs_per_subject == 0 || self.samples_per_epoch < 2 {
            return Err(Error::config(
                "channels",
                "channels, subjects, epochs_per_subject and samples_per_epoch must be positive",
            ));
        }
        let sum: f64 = self.proportions.iter().sum();
        if self.proportions.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::config(
                "proportions",
                format!("must be non-negative and sum to 1, got {sum}"),
            ));
        }
        Ok(())
    }
}

/// Largest-remainder split of `total` items by `shares`; ties go to the
/// lower class index.
pub fn allocate(total: usize, shares: &[f64]) -> Vec<usize> {
    let sum: f64 = shares.iter().sum();
    let exact: Vec<f64> = shares.iter().map(|s| s / sum * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|&e| math::floor(e + 1e-9) as usize).collect();
    let mut left = total.saturating_sub(counts.iter().sum());
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - counts[a] as f64;
        let rb = exact[b] - counts[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

fn band_signal(band: &Band, fs: f64, n: usize, rng: &mut Rng, out: &mut [f64]) {
    const TONES: usize = 3;
    let amp = band.amplitude * rng.random_range(0.8..1.2) / math::sqrt(TONES as f64);
    let mut tone = vec![0.0; n];
    for _ in 0..TONES {
        let f = rng.random_range(band.low_hz..band.high_hz);
        let phase = rng.random_range(0.0..2.0 * PI);
        for (i, v) in tone.iter_mut().enumerate() {
            *v += amp * math::sin(2.0 * PI * f * i as f64 / fs + phase);
        }
    }
    if band.bursts {
        // 2..=4 Hann-shaped bursts of 0.5..2 s
        let mut env = vec![0.0f64; n];
        for _ in 0..rng.random_range(2..=4) {
            let len = ((rng.random_range(0.5..2.0) * fs) as usize).clamp(2, n);
            let start = rng.random_range(0..=n - len);
            for k in 0..len {
                let w = 0.5 - 0.5 * math::cos(2.0 * PI * k as f64 / (len - 1) as f64);
                env[start + k] = env[start + k].max(w);
            }
        }
        tone.iter_mut().zip(&env).for_each(|(v, e)| *v *= e);
    }
    out.iter_mut().zip(&tone).for_each(|(o, t)| *o += t);
}

/// One epoch of class `stage`, deterministic in `seed`.
pub fn generate_epoch(spec: &SynthSpec, stage: Stage, seed: u64) -> Result<Vec<f64>> {
    let mut rng = seeded(seed);
    let n = spec.samples_per_epoch;
    let mut samples = vec![0.0; spec.channels * n];
    for ch in samples.chunks_mut(n) {
        for band in &spec.classes[stage.index()] {
            band_signal(band, spec.sampling_rate, n, &mut rng, ch);
        }
        for v in ch.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += spec.noise * z;
        }
    }
    Ok(samples)
}

/// Subject `s` is named `synth-{s:03}`; epochs are numbered per subject.
pub fn subject_name(s: usize) -> String {
    format!("synth-{s:03}")
}

/// Labels allocated exactly by the spec's proportions, shuffled with the
/// seed, then dealt out to subjects in order.
pub fn generate_labels(spec: &SynthSpec) -> Vec<Stage> {
    let counts = allocate(spec.total_epochs(), &spec.proportions);
    let mut labels: Vec<Stage> = counts
        .iter()
        .enumerate()
        .flat_map(|(c, &k)| core::iter::repeat_n(Stage::ALL[c], k))
        .collect();
    labels.shuffle(&mut seeded(derive_seed(spec.seed, &[0x1abe1])));
    labels
}

pub fn generate_dataset(spec: &SynthSpec) -> Result<Vec<EpochRecord>> {
    spec.validate()?;
    let labels = generate_labels(spec);
    let mut out = Vec::with_capacity(labels.len());
    for (i, &label) in labels.iter().enumerate() {
        let subject = i / spec.epochs_per_subject;
        let index = i % spec.epochs_per_subject;
        let samples = generate_epoch(spec, label, derive_seed(spec.seed, &[subject as u64, index as u64]))?;
        let mut e = EpochRecord {
            subject_id: subject_name(subject),
            epoch_index: index as u32,
            label,
            channels: spec.channels,
            samples,
        };
        scale_epoch(&mut e)?;
        out.push(e);
    }
    Ok(out)
}

// ---------------------------------------------------------------- spectra

/// Welch power spectrum: Hann-windowed segments of `segment` samples,
/// 50 % overlap, bins `0..=segment/2`. Returns `(frequencies, power)`.
pub fn welch(x: &[f64], fs: f64, segment: usize) -> (Vec<f64>, Vec<f64>) {
    let seg = segment.min(x.len()).max(2);
    let bins = seg / 2 + 1;
    let window: Vec<f64> = (0..seg)
        .map(|k| 0.5 - 0.5 * math::cos(2.0 * PI * k as f64 / seg as f64))
        .collect();
    let (cos_t, sin_t): (Vec<f64>, Vec<f64>) = (0..seg)
        .map(|k| {
            let a = 2.0 * PI * k as f64 / seg as f64;
            (math::cos(a), math::sin(a))
        })
        .unzip();
    let mut power = vec![0.0; bins];
    let mut count = 0;
    let mut start = 0;
    while start + seg <= x.len() {
        let chunk = &x[start..start + seg];
        for (b, p) in power.iter_mut().enumerate() {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, (&v, &w)) in chunk.iter().zip(&window).enumerate() {
                let idx = (b * t) % seg;
                re += v * w * cos_t[idx];
                im -= v * w * sin_t[idx];
            }
            *p += re * re + im * im;
        }
        count += 1;
        start += seg / 2;
    }
    power.iter_mut().for_each(|p| *p /= count.max(1) as f64);
    let freqs = (0..bins).map(|b| b as f64 * fs / seg as f64).collect();
    (freqs, power)
}

/// Canonical EEG bands used by the band-power baseline.
pub const EEG_BANDS: [(f64, f64); 5] = [(0.5, 4.0), (4.0, 8.0), (8.0, 12.0), (12.0, 15.0), (15.0, 30.0)];

/// Log power per [`EEG_BANDS`] entry, channels concatenated.
pub fn band_powers(e: &EpochRecord, fs: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(e.channels * EEG_BANDS.len());
    for c in 0..e.channels {
        let (f, p) = welch(e.channel(c), fs, (2.0 * fs) as usize);
        for &(lo, hi) in &EEG_BANDS {
            let s: f64 = f
                .iter()
                .zip(&p)
                .filter(|(&fr, _)| fr >= lo && fr < hi)
                .map(|(_, &v)| v)
                .sum();
            out.push(math::ln(s + 1e-12));
        }
    }
    out
}
