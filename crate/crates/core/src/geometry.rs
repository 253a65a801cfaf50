//! Channel geometry and continuous recordings.

use std::collections::HashSet;

use crate::error::{Error, Result};

/// Labels and 3D scalp positions for a set of channels, in a head frame
/// with x to the right, y towards the nose and z up (meters).
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelGeometry {
    labels: Vec<String>,
    positions: Vec<[f64; 3]>,
}

impl ChannelGeometry {
    pub fn new(labels: Vec<String>, positions: Vec<[f64; 3]>) -> Result<Self> {
        if labels.len() != positions.len() {
            return Err(Error::invalid(format!(
                "{} labels but {} positions",
                labels.len(),
                positions.len()
            )));
        }
        let mut seen = HashSet::with_capacity(labels.len());
        for label in &labels {
            if !seen.insert(label.as_str()) {
                return Err(Error::invalid(format!("duplicate channel label {label:?}")));
            }
        }
        if let Some(i) = positions.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::invalid(format!(
                "channel {:?} has a non-finite position",
                labels[i]
            )));
        }
        Ok(Self { labels, positions })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Geometry restricted to `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> ChannelGeometry {
        ChannelGeometry {
            labels: indices.iter().map(|&i| self.labels[i].clone()).collect(),
            positions: indices.iter().map(|&i| self.positions[i]).collect(),
        }
    }
}

/// A multichannel continuous signal. `samples[c]` holds channel `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub samples: Vec<Vec<f64>>,
    pub sfreq: f64,
    pub geometry: ChannelGeometry,
}

impl Recording {
    /// Validates shape, sampling rate and finiteness.
    pub fn new(samples: Vec<Vec<f64>>, sfreq: f64, geometry: ChannelGeometry) -> Result<Self> {
        if !(sfreq > 0.0 && sfreq.is_finite()) {
            return Err(Error::invalid(format!("sampling rate must be positive, got {sfreq}")));
        }
        if samples.len() != geometry.len() {
            return Err(Error::invalid(format!(
                "{} signal rows but {} channels in geometry",
                samples.len(),
                geometry.len()
            )));
        }
        let n = samples.first().map_or(0, Vec::len);
        if n == 0 {
            return Err(Error::invalid("recording has no samples"));
        }
        if samples.iter().any(|row| row.len() != n) {
            return Err(Error::invalid("channels have unequal lengths"));
        }
        let rec = Self { samples, sfreq, geometry };
        rec.check_finite()?;
        Ok(rec)
    }

    pub fn n_channels(&self) -> usize {
        self.samples.len()
    }

    pub fn n_samples(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn duration(&self) -> f64 {
        self.n_samples() as f64 / self.sfreq
    }

    pub fn nyquist(&self) -> f64 {
        self.sfreq / 2.0
    }

    pub fn check_finite(&self) -> Result<()> {
        for (channel, row) in self.samples.iter().enumerate() {
            if let Some(index) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { channel, index });
            }
        }
        Ok(())
    }

    pub(crate) fn with_samples(&self, samples: Vec<Vec<f64>>, sfreq: f64) -> Recording {
        Recording { samples, sfreq, geometry: self.geometry.clone() }
    }
}

/// Projects a position onto the unit sphere. Zero vectors map to +z.
pub fn unit(p: [f64; 3]) -> [f64; 3] {
    let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
    if n == 0.0 {
        [0.0, 0.0, 1.0]
    } else {
        [p[0] / n, p[1] / n, p[2] / n]
    }
}

pub fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
