use std::fmt;

use super::{mean_sd, median_mad, Epoch};
use crate::error::{Error, Result};
use crate::geometry::Recording;

const FLAT_MADS: f64 = 5.0;
const FLAT_FLOOR: f64 = 1e-12;
const CLIP_FRACTION: f64 = 0.005;
const CLIP_TOL: f64 = 1e-6;
const VARIABILITY_Z: f64 = 3.0;
const MAX_BAD_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct QcReport {
    pub labels: Vec<String>,
    pub flat_channels: Vec<bool>,
    pub clipped_channels: Vec<bool>,
    pub high_variance_channels: Vec<bool>,
    pub dropped_epochs: Vec<usize>,
    pub notch_freqs: Vec<f64>,
    pub n_epochs_in: usize,
    pub n_epochs_out: usize,
    pub notes: Vec<String>,
}

impl QcReport {
    pub fn empty(labels: &[String]) -> Self {
        let c = labels.len();
        Self {
            labels: labels.to_vec(),
            flat_channels: vec![false; c],
            clipped_channels: vec![false; c],
            high_variance_channels: vec![false; c],
            ..Self::default()
        }
    }

    /// Channels flagged flat or clipped.
    pub fn static_bad(&self) -> Vec<bool> {
        self.flat_channels.iter().zip(&self.clipped_channels).map(|(f, c)| *f || *c).collect()
    }

    fn flagged(&self, flags: &[bool]) -> String {
        let names: Vec<&str> = flags
            .iter()
            .zip(&self.labels)
            .filter(|(f, _)| **f)
            .map(|(_, l)| l.as_str())
            .collect();
        if names.is_empty() {
            "-".to_string()
        } else {
            names.join(",")
        }
    }
}

impl fmt::Display for QcReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "channels: {}", self.labels.len())?;
        writeln!(f, "flat: {}", self.flagged(&self.flat_channels))?;
        writeln!(f, "clipped: {}", self.flagged(&self.clipped_channels))?;
        writeln!(f, "high_variance: {}", self.flagged(&self.high_variance_channels))?;
        let notch: Vec<String> = self.notch_freqs.iter().map(|v| format!("{v}")).collect();
        writeln!(f, "notch_hz: {}", if notch.is_empty() { "-".into() } else { notch.join(",") })?;
        writeln!(f, "epochs_in: {}", self.n_epochs_in)?;
        writeln!(f, "epochs_out: {}", self.n_epochs_out)?;
        let dropped: Vec<String> = self.dropped_epochs.iter().map(|v| v.to_string()).collect();
        writeln!(f, "dropped_epochs: {}", if dropped.is_empty() { "-".into() } else { dropped.join(",") })?;
        for note in &self.notes {
            writeln!(f, "note: {note}")?;
        }
        Ok(())
    }
}

/// Flags near-flat and clipped channels over the whole recording.
///
/// Flat: SD below `median − 5·MAD` of the channel SDs (MAD scaled to a
/// Gaussian SD), or below 1e-12.
/// Clipped: at least 0.5% of samples within `1e-6·(max − min)` of the
/// channel maximum or of its minimum.
pub fn detect_bad_channels(rec: &Recording) -> Result<QcReport> {
    if rec.n_channels() < 2 {
        return Err(Error::InsufficientChannels { needed: 2, got: rec.n_channels() });
    }
    let mut report = QcReport::empty(rec.geometry.labels());
    let sds: Vec<f64> = rec.samples.iter().map(|x| mean_sd(x).1).collect();
    let (med, mad) = median_mad(&sds);
    let n = rec.n_samples() as f64;
    for (c, x) in rec.samples.iter().enumerate() {
        report.flat_channels[c] = sds[c] < FLAT_FLOOR || sds[c] < med - FLAT_MADS * mad;
        let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if hi > lo {
            let tol = CLIP_TOL * (hi - lo);
            let at_hi = x.iter().filter(|&&v| v >= hi - tol).count() as f64;
            let at_lo = x.iter().filter(|&&v| v <= lo + tol).count() as f64;
            report.clipped_channels[c] = at_hi / n >= CLIP_FRACTION || at_lo / n >= CLIP_FRACTION;
        }
    }
    Ok(report)
}

/// Robust z-scores of `values`; falls back to mean/SD when the MAD vanishes.
fn robust_z(values: &[f64]) -> Vec<f64> {
    if values.len() < 2 {
        return vec![0.0; values.len()];
    }
    let (med, mad) = median_mad(values);
    let (center, scale) = if mad > 0.0 {
        (med, mad)
    } else {
        mean_sd(values)
    };
    if !(scale > 0.0) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - center) / scale).collect()
}

/// Per-epoch channel and epoch variability screening.
///
/// Channel SDs of all (epoch, channel) pairs are log-transformed and robustly
/// standardized; pairs above 3 are flagged. Epoch SDs, computed over the
/// channels still good in each epoch, are screened the same way across
/// epochs and flagged epochs are removed, as are epochs with more than half
/// of their channels bad. Bad channels of surviving epochs are zero-filled.
pub fn qc_epochs(epochs: &[Epoch]) -> (Vec<Epoch>, QcReport) {
    let Some(first) = epochs.first() else {
        return (Vec::new(), QcReport::default());
    };
    let c = first.n_channels();
    let mut report = QcReport::empty(first.geometry.labels());
    report.n_epochs_in = epochs.len();

    let mut pairs = Vec::new();
    let mut log_sd = Vec::new();
    for (e, epoch) in epochs.iter().enumerate() {
        for ch in 0..c {
            if epoch.bad_channels[ch] {
                continue;
            }
            let sd = mean_sd(&epoch.samples[ch]).1;
            if sd > 0.0 {
                pairs.push((e, ch));
                log_sd.push(sd.ln());
            }
        }
    }
    let mut bad: Vec<Vec<bool>> = epochs.iter().map(|e| e.bad_channels.clone()).collect();
    for (&(e, ch), z) in pairs.iter().zip(robust_z(&log_sd)) {
        if z > VARIABILITY_Z {
            bad[e][ch] = true;
            report.high_variance_channels[ch] = true;
        }
    }

    let epoch_log_sd: Vec<f64> = epochs
        .iter()
        .zip(&bad)
        .map(|(epoch, flags)| {
            let pooled: Vec<f64> = (0..c)
                .filter(|&ch| !flags[ch])
                .flat_map(|ch| epoch.samples[ch].iter().copied())
                .collect();
            if pooled.is_empty() {
                f64::NAN
            } else {
                mean_sd(&pooled).1.max(f64::MIN_POSITIVE).ln()
            }
        })
        .collect();
    let finite: Vec<(usize, f64)> =
        epoch_log_sd.iter().copied().enumerate().filter(|(_, v)| v.is_finite()).collect();
    let zs = robust_z(&finite.iter().map(|(_, v)| *v).collect::<Vec<_>>());
    let mut epoch_flag = vec![false; epochs.len()];
    for ((e, _), z) in finite.iter().zip(zs) {
        epoch_flag[*e] = z > VARIABILITY_Z;
    }

    let mut kept = Vec::new();
    for (e, epoch) in epochs.iter().enumerate() {
        let n_bad = bad[e].iter().filter(|b| **b).count();
        let too_many = n_bad as f64 > MAX_BAD_FRACTION * c as f64;
        if epoch_flag[e] || too_many || n_bad == c {
            report.dropped_epochs.push(e);
            continue;
        }
        let mut out = epoch.clone();
        for ch in 0..c {
            if bad[e][ch] {
                out.samples[ch].iter_mut().for_each(|v| *v = 0.0);
            }
        }
        out.bad_channels = bad[e].clone();
        kept.push(out);
    }
    report.n_epochs_out = kept.len();
    (kept, report)
}
