//! Butterworth band-pass design and zero-phase second-order-section filtering.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::math;

/// One biquad, `b0 + b1 z⁻¹ + b2 z⁻²` over `1 + a1 z⁻¹ + a2 z⁻²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

/// Default prototype order; applied forward and backward the effective
/// order doubles.
pub const BUTTERWORTH_ORDER: usize = 4;

/// Digital Butterworth band-pass as cascaded biquads: analog prototype,
/// low-pass to band-pass transform on pre-warped edges, bilinear transform.
pub fn butter_bandpass(order: usize, low: f64, high: f64, fs: f64) -> Result<Vec<Biquad>> {
    if order == 0 {
        return Err(Error::config("order", "must be positive"));
    }
    if !(low > 0.0 && low < high) {
        return Err(Error::InvalidArgument(format!(
            "band edges must satisfy 0 < low < high, got {low}..{high}"
        )));
    }
    if fs <= 2.0 * high {
        return Err(Error::InvalidArgument(format!(
            "sampling rate {fs} Hz must exceed twice the upper edge {high} Hz"
        )));
    }
    let warp = |f: f64| 2.0 * fs * math::tan(PI * f / fs);
    let (wl, wh) = (warp(low), warp(high));
    let bw = wh - wl;
    let w0_sq = wl * wh;

    // Left-half-plane prototype poles; each yields two band-pass poles.
    let mut poles = Vec::with_capacity(2 * order);
    for k in 0..order {
        let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
        let p = Complex64::new(math::cos(theta), math::sin(theta)) * (bw / 2.0);
        let root = (p * p - w0_sq).sqrt();
        poles.push(p + root);
        poles.push(p - root);
    }
    // Band-pass zeros: `order` at s = 0 and `order` at infinity.
    let fs2 = 2.0 * fs;
    let digital: Vec<Complex64> = poles.iter().map(|&p| (fs2 + p) / (fs2 - p)).collect();
    // Gain: bw^order over the bilinear denominators; zeros at s = 0 contribute fs2 each.
    let mut gain = Complex64::new(math::powi(bw, order as i32), 0.0);
    for _ in 0..order {
        gain *= fs2;
    }
    for &p in &poles {
        gain /= fs2 - p;
    }

    // Pair each upper-half-plane pole with its conjugate.
    let mut upper: Vec<Complex64> = digital.into_iter().filter(|p| p.im > 0.0).collect();
    if upper.len() != order {
        return Err(Error::Numerical(format!(
            "expected {order} complex pole pairs, found {}",
            upper.len()
        )));
    }
    upper.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
    let mut sections: Vec<Biquad> = upper
        .iter()
        .map(|p| Biquad {
            // zeros at z = +1 and z = -1
            b: [1.0, 0.0, -1.0],
            a: [1.0, -2.0 * p.re, p.norm_sqr()],
        })
        .collect();
    for v in sections[0].b.iter_mut() {
        *v *= gain.re;
    }
    Ok(sections)
}

/// Direct-form II transposed cascade, with optional initial state per section.
pub fn sosfilt(sos: &[Biquad], x: &[f64], zi: Option<&[[f64; 2]]>) -> Vec<f64> {
    let mut y = x.to_vec();
    for (s, sec) in sos.iter().enumerate() {
        let [b0, b1, b2] = sec.b;
        let [_, a1, a2] = sec.a;
        let [mut z0, mut z1] = zi.map_or([0.0, 0.0], |z| z[s]);
        for v in y.iter_mut() {
            let xin = *v;
            let out = b0 * xin + z0;
            z0 = b1 * xin - a1 * out + z1;
            z1 = b2 * xin - a2 * out;
            *v = out;
        }
    }
    y
}

/// Steady-state section states for a unit step input.
pub fn sosfilt_zi(sos: &[Biquad]) -> Vec<[f64; 2]> {
    let mut scale = 1.0;
    sos.iter()
        .map(|sec| {
            let [b0, b1, b2] = sec.b;
            let [_, a1, a2] = sec.a;
            // (I - Aᵀ) zi = b[1:] - a[1:]·b0 with the companion matrix A.
            let r0 = b1 - a1 * b0;
            let r1 = b2 - a2 * b0;
            let det = (1.0 + a1) + a2;
            let z0 = (r0 + r1) / det;
            let z1 = r1 - a2 * z0;
            let zi = [scale * z0, scale * z1];
            let asum: f64 = sec.a.iter().sum();
            scale *= sec.b.iter().sum::<f64>() / asum;
            zi
        })
        .collect()
}

/// Forward-backward filtering. The signal is mirrored (even extension) by
/// `pad` samples at each end and each pass starts from the steady state for
/// its first sample, which keeps edge transients short.
pub fn sosfiltfilt(sos: &[Biquad], x: &[f64], pad: usize) -> Result<Vec<f64>> {
    let n = x.len();
    if n < 2 || pad >= n {
        return Err(Error::InvalidArgument(format!(
            "signal of {n} samples is too short for a {pad}-sample edge extension"
        )));
    }
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| x[n - 1 - i]));

    let zi = sosfilt_zi(sos);
    let scaled = |v: f64| -> Vec<[f64; 2]> { zi.iter().map(|s| [s[0] * v, s[1] * v]).collect() };
    let fwd = sosfilt(sos, &ext, Some(&scaled(ext[0])));
    let mut rev: Vec<f64> = fwd.into_iter().rev().collect();
    let start = rev[0];
    rev = sosfilt(sos, &rev, Some(&scaled(start)));
    rev.reverse();
    Ok(rev[pad..pad + n].to_vec())
}

/// Edge extension for a band-pass: three periods of the lower edge, at
/// least the classic `3·(2·sections + 1)`, and never the whole signal.
pub fn edge_pad(fs: f64, low: f64, sections: usize, n: usize) -> usize {
    let settle = math::ceil(3.0 * fs / low) as usize;
    settle.max(3 * (2 * sections + 1)).min(n.saturating_sub(1))
}

/// Zero-phase 4th-order Butterworth band-pass; output length equals input.
pub fn bandpass(x: &[f64], fs: f64, low: f64, high: f64) -> Result<Vec<f64>> {
    let sos = butter_bandpass(BUTTERWORTH_ORDER, low, high, fs)?;
    sosfiltfilt(&sos, x, edge_pad(fs, low, sos.len(), x.len()))
}

/// Magnitude response of a cascade at `freq`.
pub fn magnitude(sos: &[Biquad], freq: f64, fs: f64) -> f64 {
    let w = 2.0 * PI * freq / fs;
    let z1 = Complex64::new(math::cos(w), -math::sin(w));
    let z2 = z1 * z1;
    sos.iter()
        .map(|s| {
            let num = s.b[0] + z1 * s.b[1] + z2 * s.b[2];
            let den = s.a[0] + z1 * s.a[1] + z2 * s.a[2];
            (num / den).norm()
        })
        .product()
}

#[cfg(test)]
pub(crate) fn rms(x: &[f64]) -> f64 {
    math::sqrt(x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64)
}

#[cfg(test)]
pub(crate) fn tone(freq: f64, fs: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| math::sin(2.0 * PI * freq * i as f64 / fs)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn db(ratio: f64) -> f64 {
        20.0 * math::log10(ratio)
    }

    #[test]
    fn design_is_stable_and_unit_gain_in_band() {
        let sos = butter_bandpass(4, 0.5, 30.0, 200.0).unwrap();
        assert_eq!(sos.len(), 4);
        for s in &sos {
            // poles inside the unit circle
            assert!(s.a[2] < 1.0 && s.a[2] > 0.0);
        }
        let centre = math::sqrt(0.5 * 30.0);
        assert!((magnitude(&sos, centre, 200.0) - 1.0).abs() < 0.05);
        // -3 dB at the edges of a Butterworth band-pass
        for edge in [0.5, 30.0] {
            let m = magnitude(&sos, edge, 200.0);
            assert!((m - core::f64::consts::FRAC_1_SQRT_2).abs() < 1e-6, "{edge}: {m}");
        }
    }

    #[test]
    fn ten_hertz_passes() {
        let x = tone(10.0, 200.0, 2000);
        let y = bandpass(&x, 200.0, 0.5, 30.0).unwrap();
        assert_eq!(y.len(), x.len());
        let change = db(rms(&y) / rms(&x));
        assert!(change.abs() <= 1.0, "{change} dB");
    }

    #[test]
    fn sixty_hertz_and_dc_are_rejected() {
        // Stopband attenuation is a steady-state figure: measure it once the
        // low-edge transient (about one second) has settled.
        let x = tone(60.0, 200.0, 2000);
        let y = bandpass(&x, 200.0, 0.5, 30.0).unwrap();
        let settled = db(rms(&y[200..1800]) / rms(&x[200..1800]));
        assert!(settled <= -40.0, "{settled} dB");
        let dc = vec![1.0; 2000];
        let y = bandpass(&dc, 200.0, 0.5, 30.0).unwrap();
        assert!(db(rms(&y)) <= -40.0, "{}", db(rms(&y)));
    }

    #[test]
    fn rejects_low_sampling_rate() {
        assert!(bandpass(&[0.0; 100], 60.0, 0.5, 30.0).is_err());
        assert!(bandpass(&[0.0; 1], 200.0, 0.5, 30.0).is_err());
    }

    #[test]
    fn output_is_zero_phase() {
        // a band-centre tone comes out in phase with the input
        let x = tone(4.0, 100.0, 3000);
        let y = bandpass(&x, 100.0, 0.5, 30.0).unwrap();
        let lag0: f64 = x[500..2500].iter().zip(&y[500..2500]).map(|(a, b)| a * b).sum();
        for lag in 1..5 {
            let l: f64 = x[500..2500].iter().zip(&y[500 + lag..2500 + lag]).map(|(a, b)| a * b).sum();
            assert!(l < lag0);
        }
        for (a, b) in x[500..2500].iter().zip(&y[500..2500]) {
            assert!((a - b).abs() < 0.01);
        }
    }

    #[test]
    fn zi_is_steady_state_for_a_step() {
        let sos = butter_bandpass(2, 1.0, 10.0, 100.0).unwrap();
        let zi = sosfilt_zi(&sos);
        let y = sosfilt(&sos, &[1.0; 50], Some(&zi));
        // a band-pass settles a step at zero immediately from steady state
        assert!(y.iter().all(|v| v.abs() < 1e-12), "{y:?}");
    }
}
