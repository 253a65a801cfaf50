use super::filter::Sos;
use super::spectral::welch_psd;
use super::{mean_sd, median_mad, Epoch, EPOCH_LEN, TARGET_SFREQ};
use crate::error::{Error, Result};
use crate::geometry::Recording;

/// Data standard deviation used for training and sampling.
pub const DATA_SCALE: f64 = 0.1;

pub const DEFAULT_NOTCH_BW: f64 = 2.0;

const HIGHPASS_ORDER: usize = 4;
const NOTCH_ORDER: usize = 2;
const LINE_BAND_LOW: f64 = 45.0;
const LINE_PEAK_MADS: f64 = 10.0;
const LINE_BASELINE_HZ: f64 = 2.0;
const LINE_LOBE_HZ: f64 = 0.5;
const MIN_RECORDING_SECS: f64 = 10.0;
const ZSCORE_SEGMENT_SECS: f64 = 600.0;

/// Zero-phase order-4 Butterworth highpass on every channel.
pub fn highpass(rec: &Recording, cutoff: f64) -> Result<Recording> {
    if cutoff >= rec.nyquist() {
        return Err(Error::invalid(format!(
            "highpass cutoff {cutoff} Hz is not below Nyquist ({} Hz)",
            rec.nyquist()
        )));
    }
    let sos = Sos::butter_highpass(HIGHPASS_ORDER, cutoff, rec.sfreq)?;
    let samples = rec.samples.iter().map(|x| sos.filtfilt(x)).collect();
    Ok(rec.with_samples(samples, rec.sfreq))
}

pub fn common_average_reference(rec: &Recording) -> Result<Recording> {
    common_average_reference_masked(rec, &vec![false; rec.n_channels()])
}

/// Subtracts, at every sample, the mean over channels not flagged in `exclude`.
/// Excluded channels are re-referenced too.
pub fn common_average_reference_masked(rec: &Recording, exclude: &[bool]) -> Result<Recording> {
    let good: Vec<usize> = (0..rec.n_channels()).filter(|&c| !exclude[c]).collect();
    if good.len() < 2 {
        return Err(Error::InsufficientChannels { needed: 2, got: good.len() });
    }
    let n = rec.n_samples();
    let mut mean = vec![0.0; n];
    for &c in &good {
        for (m, v) in mean.iter_mut().zip(&rec.samples[c]) {
            *m += v;
        }
    }
    let inv = 1.0 / good.len() as f64;
    mean.iter_mut().for_each(|m| *m *= inv);
    let samples = rec
        .samples
        .iter()
        .map(|row| row.iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();
    Ok(rec.with_samples(samples, rec.sfreq))
}

/// Narrowband peaks in `(45 Hz, Nyquist)` of the channel-averaged Welch PSD.
///
/// A bin is reported when it is the maximum within ±0.5 Hz and its log power
/// exceeds the median of the surrounding ±2 Hz (main lobe excluded) by more
/// than ten (Gaussian-scaled) median absolute deviations. Every peak, harmonics included, is
/// tested on its own.
pub fn detect_line_noise(rec: &Recording) -> Vec<f64> {
    detect_line_noise_masked(rec, &vec![false; rec.n_channels()])
}

pub(crate) fn detect_line_noise_masked(rec: &Recording, exclude: &[bool]) -> Vec<f64> {
    if rec.duration() < MIN_RECORDING_SECS {
        return Vec::new();
    }
    let seg_len = ((8.0 * rec.sfreq).round() as usize).min(rec.n_samples());
    let mut mean_power: Option<Vec<f64>> = None;
    let mut freqs = Vec::new();
    let mut used = 0usize;
    for (c, x) in rec.samples.iter().enumerate() {
        if exclude[c] {
            continue;
        }
        let psd = welch_psd(x, rec.sfreq, seg_len, 0.5).expect("segment length bounded by signal");
        match mean_power.as_mut() {
            None => mean_power = Some(psd.power),
            Some(acc) => acc.iter_mut().zip(&psd.power).for_each(|(a, p)| *a += p),
        }
        freqs = psd.freqs;
        used += 1;
    }
    let Some(power) = mean_power else { return Vec::new() };
    let tiny = f64::MIN_POSITIVE;
    let logp: Vec<f64> = power.iter().map(|p| (p / used as f64).max(tiny).log10()).collect();
    let df = freqs[1];
    let nyquist = rec.nyquist();
    let lobe = (LINE_LOBE_HZ / df).round() as usize;
    let reach = (LINE_BASELINE_HZ / df).round() as usize;
    let mut peaks = Vec::new();
    for k in 0..logp.len() {
        let f = freqs[k];
        if f <= LINE_BAND_LOW || f >= nyquist {
            continue;
        }
        let lo = k.saturating_sub(lobe);
        let hi = (k + lobe).min(logp.len() - 1);
        let is_max = (lo..=hi).all(|j| logp[j] < logp[k] || (logp[j] == logp[k] && j >= k));
        if !is_max {
            continue;
        }
        let baseline: Vec<f64> = (k.saturating_sub(reach)..=(k + reach).min(logp.len() - 1))
            .filter(|&j| j.abs_diff(k) > lobe)
            .map(|j| logp[j])
            .collect();
        if baseline.len() < 4 {
            continue;
        }
        let (med, mad) = median_mad(&baseline);
        if logp[k] > med + LINE_PEAK_MADS * mad && logp[k] - med > 1e-9 {
            peaks.push(f);
        }
    }
    peaks
}

/// Zero-phase Butterworth bandstop of width `bw` at each frequency.
/// Frequencies whose stop band does not fit below Nyquist are skipped.
pub fn notch_filter(rec: &Recording, freqs: &[f64], bw: f64) -> Result<Recording> {
    if !(bw > 0.0) {
        return Err(Error::invalid(format!("notch bandwidth must be positive, got {bw}")));
    }
    let mut samples = rec.samples.clone();
    for &f in freqs {
        if f + bw / 2.0 >= rec.nyquist() || f - bw / 2.0 <= 0.0 {
            log::warn!("skipping notch at {f} Hz: outside (0, {}) Hz", rec.nyquist());
            continue;
        }
        let sos = Sos::butter_bandstop(NOTCH_ORDER, f - bw / 2.0, f + bw / 2.0, rec.sfreq)?;
        samples = samples.iter().map(|x| sos.filtfilt(x)).collect();
    }
    Ok(rec.with_samples(samples, rec.sfreq))
}

/// Non-overlapping 5 s epochs; the trailing remainder is dropped and
/// recordings shorter than 10 s yield no epochs.
pub fn epoch_segment(rec: &Recording) -> Result<Vec<Epoch>> {
    if rec.sfreq != TARGET_SFREQ {
        return Err(Error::invalid(format!(
            "epoching requires {TARGET_SFREQ} Hz data, got {} Hz; resample first",
            rec.sfreq
        )));
    }
    if rec.duration() < MIN_RECORDING_SECS {
        log::info!("discarding recording of {:.2} s (< {MIN_RECORDING_SECS} s)", rec.duration());
        return Ok(Vec::new());
    }
    let n_epochs = rec.n_samples() / EPOCH_LEN;
    Ok((0..n_epochs)
        .map(|e| {
            let offset = e * EPOCH_LEN;
            Epoch {
                samples: rec.samples.iter().map(|row| row[offset..offset + EPOCH_LEN].to_vec()).collect(),
                geometry: rec.geometry.clone(),
                bad_channels: vec![false; rec.n_channels()],
                source_offset: offset,
            }
        })
        .collect())
}

pub fn zscore_normalize(rec: &Recording) -> Result<Recording> {
    zscore_normalize_masked(rec, &vec![false; rec.n_channels()])
}

/// One affine map per contiguous 10-minute segment, with mean and SD pooled
/// over all samples of the channels not in `exclude`. The final shorter
/// segment uses its own statistics.
pub fn zscore_normalize_masked(rec: &Recording, exclude: &[bool]) -> Result<Recording> {
    let seg = ((ZSCORE_SEGMENT_SECS * rec.sfreq).round() as usize).max(1);
    let n = rec.n_samples();
    let mut samples = rec.samples.clone();
    let mut start = 0;
    while start < n {
        let end = (start + seg).min(n);
        let pooled: Vec<f64> = rec
            .samples
            .iter()
            .enumerate()
            .filter(|(c, _)| !exclude[*c])
            .flat_map(|(_, row)| row[start..end].iter().copied())
            .collect();
        if pooled.is_empty() {
            return Err(Error::invalid("no channels left to normalize"));
        }
        let (mean, sd) = mean_sd(&pooled);
        if !(sd > 0.0) {
            return Err(Error::invalid(format!(
                "segment [{start}, {end}) has zero variance; cannot z-score"
            )));
        }
        for row in samples.iter_mut() {
            for v in &mut row[start..end] {
                *v = (*v - mean) / sd;
            }
        }
        start = end;
    }
    Ok(rec.with_samples(samples, rec.sfreq))
}

pub fn rescale_for_training(epochs: &[Epoch]) -> Vec<Epoch> {
    scale_epochs(epochs, DATA_SCALE)
}

pub fn unscale_from_training(epochs: &[Epoch]) -> Vec<Epoch> {
    scale_epochs(epochs, 1.0 / DATA_SCALE)
}

fn scale_epochs(epochs: &[Epoch], factor: f64) -> Vec<Epoch> {
    epochs
        .iter()
        .map(|e| Epoch {
            samples: e.samples.iter().map(|row| row.iter().map(|v| v * factor).collect()).collect(),
            ..e.clone()
        })
        .collect()
}
