//! Welch power spectral density and FFT-based resampling.

use num_complex::Complex64;
use rustfft::FftPlanner;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::Recording;

/// One-sided PSD estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Psd {
    pub freqs: Vec<f64>,
    pub power: Vec<f64>,
}

impl Psd {
    pub fn resolution(&self) -> f64 {
        self.freqs.get(1).copied().unwrap_or(0.0)
    }

    pub fn argmax(&self) -> usize {
        self.power
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map_or(0, |(i, _)| i)
    }
}

/// Periodic Hann window.
fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

/// Welch's method: Hann-windowed, mean-detrended segments, averaged
/// periodograms scaled to a density so that `Σ power · df` approximates the
/// signal variance.
pub fn welch_psd(x: &[f64], sfreq: f64, seg_len: usize, overlap: f64) -> Result<Psd> {
    if seg_len == 0 || seg_len > x.len() {
        return Err(Error::invalid(format!(
            "segment length {seg_len} must be in 1..={}",
            x.len()
        )));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::invalid(format!("overlap {overlap} must be in [0, 1)")));
    }
    let step = ((seg_len as f64 * (1.0 - overlap)).round() as usize).max(1);
    let window = hann(seg_len);
    let win_power: f64 = window.iter().map(|w| w * w).sum();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(seg_len);
    let n_bins = seg_len / 2 + 1;
    let mut acc = vec![0.0; n_bins];
    let mut n_segments = 0usize;
    let mut buf = vec![Complex64::new(0.0, 0.0); seg_len];
    let mut start = 0;
    while start + seg_len <= x.len() {
        let seg = &x[start..start + seg_len];
        let mean = seg.iter().sum::<f64>() / seg_len as f64;
        for ((b, &v), &w) in buf.iter_mut().zip(seg).zip(&window) {
            *b = Complex64::new((v - mean) * w, 0.0);
        }
        fft.process(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
        n_segments += 1;
        start += step;
    }
    let scale = 1.0 / (sfreq * win_power * n_segments as f64);
    let power = acc
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let one_sided = if k == 0 || (seg_len % 2 == 0 && k == seg_len / 2) { 1.0 } else { 2.0 };
            p * scale * one_sided
        })
        .collect();
    let freqs = (0..n_bins).map(|k| k as f64 * sfreq / seg_len as f64).collect();
    Ok(Psd { freqs, power })
}

/// Reduced ratio `p/q` of two integral rates, if both are integral.
fn integral_ratio(from: f64, to: f64) -> Option<(u64, u64)> {
    if from.fract() != 0.0 || to.fract() != 0.0 || from > 1e9 || to > 1e9 {
        return None;
    }
    let (a, b) = (to as u64, from as u64);
    let g = gcd(a, b);
    Some((a / g, b / g))
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Band-limited resampling of one channel to `n_out` samples over the same
/// duration: the spectrum is truncated (ideal anti-alias lowpass) or
/// zero-extended, with the shared Nyquist bin split evenly.
fn fft_resample(x: &[f64], n_out: usize, planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let n_in = x.len();
    if n_in == n_out {
        return x.to_vec();
    }
    let mut spec: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    planner.plan_fft_forward(n_in).process(&mut spec);
    let mut out = vec![Complex64::new(0.0, 0.0); n_out];
    let n_min = n_in.min(n_out);
    let half = n_min / 2;
    out[..=half.min(n_out - 1)].copy_from_slice(&spec[..=half.min(n_in - 1)]);
    for k in 1..(n_min - half) {
        out[n_out - k] = spec[n_in - k];
    }
    if n_min % 2 == 0 && half > 0 {
        // The bin at n_min/2 is shared between positive and negative halves.
        if n_out > n_in {
            let v = spec[half] * 0.5;
            out[half] = v;
            out[n_out - half] = v;
        } else {
            out[half] = Complex64::new(2.0 * spec[half].re, 0.0);
        }
    }
    planner.plan_fft_inverse(n_out).process(&mut out);
    let scale = 1.0 / n_in as f64;
    out.iter().map(|c| c.re * scale).collect()
}

/// Resamples every channel to `target_sfreq`.
///
/// When both rates are integers, channels are extended by odd reflection
/// before the FFT to suppress wrap-around discontinuities, using a pad that
/// maps to a whole number of output samples.
pub fn resample(rec: &Recording, target_sfreq: f64) -> Result<Recording> {
    if !(target_sfreq > 0.0 && target_sfreq.is_finite()) {
        return Err(Error::invalid(format!("target rate must be positive, got {target_sfreq}")));
    }
    rec.check_finite()?;
    if target_sfreq == rec.sfreq {
        return Ok(rec.clone());
    }
    let n_in = rec.n_samples();
    let ratio = target_sfreq / rec.sfreq;
    let n_out = ((n_in as f64 * ratio).round() as usize).max(1);
    let pad_in = match integral_ratio(rec.sfreq, target_sfreq) {
        Some((_, q)) if n_in > 1 => {
            let want = (n_in - 1).min((rec.sfreq as usize).max(1));
            (want / q as usize) * q as usize
        }
        _ => 0,
    };
    let pad_out = (pad_in as f64 * ratio).round() as usize;
    let mut planner = FftPlanner::new();
    let samples = rec
        .samples
        .iter()
        .map(|x| {
            if pad_in == 0 {
                return fft_resample(x, n_out, &mut planner);
            }
            let mut ext = Vec::with_capacity(n_in + 2 * pad_in);
            ext.extend((1..=pad_in).rev().map(|i| 2.0 * x[0] - x[i]));
            ext.extend_from_slice(x);
            ext.extend((1..=pad_in).map(|i| 2.0 * x[n_in - 1] - x[n_in - 1 - i]));
            let ext_out = n_out + 2 * pad_out;
            let y = fft_resample(&ext, ext_out, &mut planner);
            y[pad_out..pad_out + n_out].to_vec()
        })
        .collect();
    Ok(rec.with_samples(samples, target_sfreq))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ChannelGeometry;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_channel(x: Vec<f64>, sfreq: f64) -> Recording {
        let g = ChannelGeometry::new(vec!["A".into()], vec![[0.0, 0.0, 0.09]]).unwrap();
        Recording::new(vec![x], sfreq, g).unwrap()
    }

    fn tone(f: f64, sfreq: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * f * i as f64 / sfreq).sin()).collect()
    }

    #[test]
    fn welch_single_tone_peak() {
        let x = tone(60.0, 256.0, 256 * 8);
        let psd = welch_psd(&x, 256.0, 256, 0.5).unwrap();
        assert_eq!(psd.resolution(), 1.0);
        assert_eq!(psd.freqs[psd.argmax()], 60.0);
        assert!(psd.power.iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn welch_zero_signal() {
        let psd = welch_psd(&vec![0.0; 1024], 256.0, 256, 0.5).unwrap();
        assert!(psd.power.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn welch_parseval_on_white_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x: Vec<f64> = (0..256 * 60).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.len() as f64;
        let psd = welch_psd(&x, 256.0, 256, 0.5).unwrap();
        let total: f64 = psd.power.iter().sum::<f64>() * psd.resolution();
        assert!((total / var - 1.0).abs() < 0.1, "total {total} vs var {var}");
    }

    #[test]
    fn welch_rejects_long_segment() {
        assert!(welch_psd(&[0.0; 10], 256.0, 11, 0.5).is_err());
    }

    #[test]
    fn resample_halves_length() {
        let rec = one_channel(tone(3.0, 512.0, 5120), 512.0);
        let out = resample(&rec, 256.0).unwrap();
        assert_eq!(out.n_samples(), 2560);
        assert_eq!(out.sfreq, 256.0);
    }

    #[test]
    fn resample_identity_is_bit_exact() {
        let x = tone(7.0, 256.0, 3000);
        let rec = one_channel(x, 256.0);
        assert_eq!(resample(&rec, 256.0).unwrap(), rec);
    }

    #[test]
    fn resample_matches_resynthesized_tone() {
        let rec = one_channel(tone(10.0, 1024.0, 1024 * 10), 1024.0);
        let out = resample(&rec, 256.0).unwrap();
        let expected = tone(10.0, 256.0, 2560);
        let trim = 256;
        let err = out.samples[0][trim..2560 - trim]
            .iter()
            .zip(&expected[trim..2560 - trim])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-3, "max error {err}");
        let psd = welch_psd(&out.samples[0], 256.0, 256, 0.5).unwrap();
        assert!((psd.freqs[psd.argmax()] - 10.0).abs() <= psd.resolution());
    }

    #[test]
    fn resample_upsamples() {
        let rec = one_channel(tone(5.0, 128.0, 1280), 128.0);
        let out = resample(&rec, 256.0).unwrap();
        assert_eq!(out.n_samples(), 2560);
        let expected = tone(5.0, 256.0, 2560);
        let err = out.samples[0][256..2304]
            .iter()
            .zip(&expected[256..2304])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-3, "max error {err}");
    }

    #[test]
    fn resample_rejects_non_finite() {
        let mut rec = one_channel(vec![0.0; 100], 512.0);
        rec.samples[0][50] = f64::NAN;
        assert!(matches!(resample(&rec, 256.0), Err(Error::NonFinite { channel: 0, index: 50 })));
    }
}
