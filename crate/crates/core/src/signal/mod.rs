//! Preprocessing of continuous recordings into normalized 5 s epochs.

mod filter;
mod pipeline;
mod preprocess;
mod qc;
mod spectral;

pub use filter::{Biquad, Sos};
pub use pipeline::{preprocess, PipelineConfig, Preprocessed, Stage};
pub use preprocess::{
    common_average_reference, common_average_reference_masked, detect_line_noise, epoch_segment,
    highpass, notch_filter, rescale_for_training, unscale_from_training, zscore_normalize,
    zscore_normalize_masked, DATA_SCALE, DEFAULT_NOTCH_BW,
};
pub use qc::{detect_bad_channels, qc_epochs, QcReport};
pub use spectral::{resample, welch_psd, Psd};

use crate::geometry::ChannelGeometry;

pub const TARGET_SFREQ: f64 = 256.0;
pub const EPOCH_LEN: usize = 1280;

/// One 5 s segment at 256 Hz. `samples[c]` always has [`EPOCH_LEN`] entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Epoch {
    pub samples: Vec<Vec<f64>>,
    pub geometry: ChannelGeometry,
    pub bad_channels: Vec<bool>,
    pub source_offset: usize,
}

impl Epoch {
    pub fn n_channels(&self) -> usize {
        self.samples.len()
    }
}

pub(crate) fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Converts a median absolute deviation into a Gaussian-consistent SD.
pub(crate) const MAD_TO_SD: f64 = 1.4826;

/// Median and Gaussian-consistent median absolute deviation.
pub(crate) fn median_mad(values: &[f64]) -> (f64, f64) {
    let m = median(values);
    let dev: Vec<f64> = values.iter().map(|v| (v - m).abs()).collect();
    (m, MAD_TO_SD * median(&dev))
}

pub(crate) fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
