//! Ordered preprocessing driver.

use super::preprocess::{
    common_average_reference_masked, detect_line_noise_masked, epoch_segment, highpass, notch_filter,
    zscore_normalize_masked, DEFAULT_NOTCH_BW,
};
use super::qc::{detect_bad_channels, qc_epochs, QcReport};
use super::spectral::resample;
use super::{Epoch, TARGET_SFREQ};
use crate::error::Result;
use crate::geometry::Recording;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Resample,
    BadChannels,
    Highpass,
    Reference,
    LineNoise,
    Notch,
    Normalize,
    Epoch,
    EpochQc,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub highpass_hz: f64,
    pub notch_bw: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { highpass_hz: 0.5, notch_bw: DEFAULT_NOTCH_BW }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed {
    pub epochs: Vec<Epoch>,
    pub report: QcReport,
    pub stages: Vec<Stage>,
}

/// resample → flat/clip screening → highpass → CAR → line-noise detection →
/// notch → z-score → epoching → epoch QC.
///
/// Flat and clipped channels are left out of the reference, line-noise and
/// normalization statistics and are zero-filled in every epoch.
pub fn preprocess(rec: &Recording, cfg: &PipelineConfig) -> Result<Preprocessed> {
    let mut stages = Vec::new();
    let rec = resample(rec, TARGET_SFREQ)?;
    stages.push(Stage::Resample);

    let mut report = detect_bad_channels(&rec)?;
    stages.push(Stage::BadChannels);
    let static_bad = report.static_bad();
    if static_bad.iter().all(|b| *b) {
        report.notes.push("every channel is flat or clipped".into());
        return Ok(Preprocessed { epochs: Vec::new(), report, stages });
    }

    let rec = highpass(&rec, cfg.highpass_hz)?;
    stages.push(Stage::Highpass);
    let rec = common_average_reference_masked(&rec, &static_bad)?;
    stages.push(Stage::Reference);
    let freqs = detect_line_noise_masked(&rec, &static_bad);
    stages.push(Stage::LineNoise);
    let rec = notch_filter(&rec, &freqs, cfg.notch_bw)?;
    stages.push(Stage::Notch);
    report.notch_freqs = freqs;
    let rec = zscore_normalize_masked(&rec, &static_bad)?;
    stages.push(Stage::Normalize);

    let mut epochs = epoch_segment(&rec)?;
    stages.push(Stage::Epoch);
    if epochs.is_empty() {
        report.notes.push(format!("recording of {:.2} s discarded", rec.duration()));
    }
    for epoch in &mut epochs {
        epoch.bad_channels = static_bad.clone();
        for (row, bad) in epoch.samples.iter_mut().zip(&static_bad) {
            if *bad {
                row.iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }
    let (epochs, epoch_report) = qc_epochs(&epochs);
    stages.push(Stage::EpochQc);
    report.high_variance_channels = if epoch_report.high_variance_channels.is_empty() {
        vec![false; rec.n_channels()]
    } else {
        epoch_report.high_variance_channels
    };
    report.dropped_epochs = epoch_report.dropped_epochs;
    report.n_epochs_in = epoch_report.n_epochs_in;
    report.n_epochs_out = epoch_report.n_epochs_out;
    Ok(Preprocessed { epochs, report, stages })
}
