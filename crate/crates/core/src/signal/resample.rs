//! Rational-ratio polyphase down-sampling with a Kaiser-windowed sinc
//! anti-alias filter.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};
use crate::math;

const KAISER_BETA: f64 = 5.0;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Zeroth-order modified Bessel function of the first kind, by power series.
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        math::sin(PI * x) / (PI * x)
    }
}

/// Low-pass FIR of `taps` coefficients with cutoff `cutoff` (fraction of
/// Nyquist), Kaiser window, normalised to unit DC gain.
pub fn kaiser_lowpass(taps: usize, cutoff: f64, beta: f64) -> Vec<f64> {
    let m = (taps - 1) as f64;
    let norm = bessel_i0(beta);
    let mut h: Vec<f64> = (0..taps)
        .map(|n| {
            let t = n as f64 - m / 2.0;
            let r = if m == 0.0 { 0.0 } else { 2.0 * n as f64 / m - 1.0 };
            let w = bessel_i0(beta * math::sqrt((1.0 - r * r).max(0.0))) / norm;
            cutoff * sinc(cutoff * t) * w
        })
        .collect();
    let sum: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= sum);
    h
}

/// Reduced `(up, down)` for integral rates.
pub fn ratio(fs_in: f64, fs_out: f64) -> Result<(u64, u64)> {
    let integral = |f: f64| f > 0.0 && math::round(f) == f && f < 1e9;
    if !integral(fs_in) || !integral(fs_out) {
        return Err(Error::InvalidArgument(format!(
            "resampling needs positive integral rates, got {fs_in} -> {fs_out} Hz"
        )));
    }
    let (i, o) = (fs_in as u64, fs_out as u64);
    let g = gcd(i, o);
    Ok((o / g, i / g))
}

/// Output length `round(n · up / down)`.
pub fn output_len(n: usize, up: u64, down: u64) -> usize {
    ((n as u128 * up as u128 * 2 + down as u128) / (2 * down as u128)) as usize
}

/// Resamples `x` from `fs_in` to `fs_out ≤ fs_in`.
pub fn resample(x: &[f64], fs_in: f64, fs_out: f64) -> Result<Vec<f64>> {
    if fs_out > fs_in {
        return Err(Error::InvalidArgument(format!(
            "upsampling {fs_in} -> {fs_out} Hz is not supported"
        )));
    }
    let (up, down) = ratio(fs_in, fs_out)?;
    if up == down {
        return Ok(x.to_vec());
    }
    resample_poly(x, up as usize, down as usize)
}

/// Zero-stuff by `up`, filter, keep every `down`-th sample; the filter's
/// group delay is compensated so output sample `m` sits at input time
/// `m · down / up`.
pub fn resample_poly(x: &[f64], up: usize, down: usize) -> Result<Vec<f64>> {
    if up == 0 || down == 0 {
        return Err(Error::InvalidArgument("resampling factors must be positive".into()));
    }
    let max_rate = up.max(down);
    let half = 10 * max_rate;
    let mut h = kaiser_lowpass(2 * half + 1, 1.0 / max_rate as f64, KAISER_BETA);
    h.iter_mut().for_each(|v| *v *= up as f64);

    let n_out = output_len(x.len(), up as u64, down as u64);
    let mut y = Vec::with_capacity(n_out);
    for m in 0..n_out {
        // upsampled position of this output sample
        let centre = (m * down) as isize;
        let lo = centre - half as isize;
        let hi = centre + half as isize;
        // input samples i with i·up in [lo, hi]
        let i_lo = if lo <= 0 { 0 } else { (lo as usize).div_ceil(up) };
        let i_hi = ((hi.max(0) as usize) / up).min(x.len().saturating_sub(1));
        let mut acc = 0.0;
        if !x.is_empty() {
            for (i, &xi) in x.iter().enumerate().take(i_hi + 1).skip(i_lo) {
                let tap = (centre - (i * up) as isize + half as isize) as usize;
                acc += h[tap] * xi;
            }
        }
        y.push(acc);
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::filter::tone;

    /// Frequency of the largest DFT magnitude bin, by direct summation.
    fn dft_peak(x: &[f64], fs: f64) -> f64 {
        let n = x.len();
        let mut best = (0, 0.0);
        for k in 1..n / 2 {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, &v) in x.iter().enumerate() {
                let a = 2.0 * PI * (k * t) as f64 / n as f64;
                re += v * math::cos(a);
                im -= v * math::sin(a);
            }
            let mag = re * re + im * im;
            if mag > best.1 {
                best = (k, mag);
            }
        }
        best.0 as f64 * fs / n as f64
    }

    #[test]
    fn ratios_reduce() {
        assert_eq!(ratio(256.0, 100.0).unwrap(), (25, 64));
        assert_eq!(ratio(200.0, 100.0).unwrap(), (1, 2));
        assert_eq!(ratio(125.0, 100.0).unwrap(), (4, 5));
    }

    #[test]
    fn lengths() {
        assert_eq!(resample(&[0.0; 12500], 125.0, 100.0).unwrap().len(), 10000);
        assert_eq!(resample(&[0.0; 1001], 200.0, 100.0).unwrap().len(), 501);
        assert_eq!(resample(&[0.0; 2560], 256.0, 100.0).unwrap().len(), 1000);
    }

    #[test]
    fn same_rate_is_identity() {
        let x = tone(3.0, 100.0, 300);
        assert_eq!(resample(&x, 100.0, 100.0).unwrap(), x);
    }

    #[test]
    fn upsampling_rejected() {
        assert!(resample(&[1.0; 10], 100.0, 200.0).is_err());
    }

    #[test]
    fn tone_peak_survives() {
        for fs in [256.0, 125.0] {
            let x = tone(5.0, fs, (fs * 10.0) as usize);
            let y = resample(&x, fs, 100.0).unwrap();
            assert_eq!(y.len(), 1000);
            let peak = dft_peak(&y, 100.0);
            assert!((peak - 5.0).abs() < 1e-9, "{fs}: {peak}");
            // amplitude preserved away from the edges
            let mid = &y[200..800];
            let amp = mid.iter().fold(0f64, |m, v| m.max(v.abs()));
            assert!((amp - 1.0).abs() < 0.01, "{amp}");
        }
    }

    #[test]
    fn aliasing_tone_is_suppressed() {
        // 70 Hz at 256 Hz would alias to 30 Hz after naive decimation
        let x = tone(70.0, 256.0, 2560);
        let y = resample(&x, 256.0, 100.0).unwrap();
        assert!(crate::signal::filter::rms(&y[100..900]) < 0.01);
    }

    #[test]
    fn bessel_reference_values() {
        assert!((bessel_i0(0.0) - 1.0).abs() < 1e-15);
        assert!((bessel_i0(5.0) - 27.239871823604442).abs() < 1e-10);
    }
}
