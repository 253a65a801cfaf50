//! Synthetic EEG-like corpora: a few smooth spatial bumps driven by
//! band-limited sources, plus pink sensor noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{dot, unit, ChannelGeometry, Recording};
use crate::montage::spread_subset;
use crate::noise::pink_noise;
use crate::train::config::Section;

/// Physical amplitude of a unit source at the bump centre, volts.
pub const SOURCE_AMPLITUDE: f64 = 20e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_channels: usize,
    pub n_recordings: usize,
    pub duration_s: f64,
    pub sfreq: f64,
    pub n_sources: usize,
    /// Bump concentration `κ` in `exp(κ(e·u − 1))`.
    pub kappa: f64,
    /// Pink-noise level relative to a unit-variance source.
    pub sigma: f64,
    pub band: (f64, f64),
    pub n_sinusoids: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_channels: 16,
            n_recordings: 10,
            duration_s: 60.0,
            sfreq: 256.0,
            n_sources: 2,
            kappa: 2.0,
            sigma: 0.1,
            band: (4.0, 30.0),
            n_sinusoids: 5,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_channels < 1 || self.n_channels > 64 {
            return Err(Error::invalid("channel count must be within the 64-position layout"));
        }
        if self.n_sources < 1 || self.n_sinusoids < 1 || self.n_recordings < 1 {
            return Err(Error::invalid("need at least one source, sinusoid and recording"));
        }
        if !(self.duration_s > 0.0 && self.sfreq > 0.0 && self.kappa >= 0.0 && self.sigma >= 0.0) {
            return Err(Error::invalid("duration, sfreq, kappa and sigma must be non-negative"));
        }
        if !(0.0 < self.band.0 && self.band.0 < self.band.1 && self.band.1 < self.sfreq / 2.0) {
            return Err(Error::invalid("source band must lie inside (0, Nyquist)"));
        }
        Ok(())
    }

    /// Reads the corpus keys from `kv`, taking absent ones from `d`.
    pub fn from_kv(kv: &mut Section<'_>, d: &Self) -> Result<Self> {
        let spec = Self {
            n_channels: kv.take("channels", d.n_channels)?,
            n_recordings: kv.take("recordings", d.n_recordings)?,
            duration_s: kv.take("duration_s", d.duration_s)?,
            sfreq: kv.take("sfreq", d.sfreq)?,
            n_sources: kv.take("sources", d.n_sources)?,
            kappa: kv.take("kappa", d.kappa)?,
            sigma: kv.take("sigma", d.sigma)?,
            band: (kv.take("band_lo", d.band.0)?, kv.take("band_hi", d.band.1)?),
            n_sinusoids: kv.take("sinusoids", d.n_sinusoids)?,
            seed: kv.take("seed", d.seed)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn geometry(&self) -> Result<ChannelGeometry> {
        spread_subset(self.n_channels)
    }
}

/// Uniform direction on the upper hemisphere (`z ≥ 0`), where the layout lives.
fn upper_hemisphere<R: Rng>(rng: &mut R) -> [f64; 3] {
    let z: f64 = rng.gen_range(0.0..1.0);
    let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let r = (1.0 - z * z).sqrt();
    [r * phi.cos(), r * phi.sin(), z]
}

/// Generates `n_recordings` recordings; recording `i` depends only on `(seed, i)`.
pub fn synth_generate(spec: &SynthSpec) -> Result<Vec<Recording>> {
    (0..spec.n_recordings).map(|i| synth_recording_at(spec, i)).collect()
}

/// Recording `i` of the corpus described by `spec` (independent of `n_recordings`).
pub fn synth_recording_at(spec: &SynthSpec, i: usize) -> Result<Recording> {
    spec.validate()?;
    let geometry = spec.geometry()?;
    let n = (spec.duration_s * spec.sfreq).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(i as u64 + 1);
    synth_recording(spec, &geometry, n, &mut rng)
}

fn synth_recording(spec: &SynthSpec, geometry: &ChannelGeometry, n: usize, rng: &mut ChaCha8Rng) -> Result<Recording> {
    let dirs: Vec<[f64; 3]> = geometry.positions().iter().map(|p| unit(*p)).collect();
    let mut samples = vec![vec![0.0; n]; geometry.len()];
    let amp = (2.0 / spec.n_sinusoids as f64).sqrt();
    for _ in 0..spec.n_sources {
        let u = upper_hemisphere(rng);
        let comps: Vec<(f64, f64)> = (0..spec.n_sinusoids)
            .map(|_| (rng.gen_range(spec.band.0..spec.band.1), rng.gen_range(0.0..std::f64::consts::TAU)))
            .collect();
        let source: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / spec.sfreq;
                comps.iter().map(|(f, ph)| amp * (std::f64::consts::TAU * f * t + ph).sin()).sum()
            })
            .collect();
        for (row, e) in samples.iter_mut().zip(&dirs) {
            let w = (spec.kappa * (dot(*e, u) - 1.0)).exp();
            row.iter_mut().zip(&source).for_each(|(x, s)| *x += w * s);
        }
    }
    for row in &mut samples {
        if spec.sigma > 0.0 {
            let noise = pink_noise(n, rng);
            row.iter_mut().zip(&noise).for_each(|(x, z)| *x += spec.sigma * z);
        }
        row.iter_mut().for_each(|x| *x *= SOURCE_AMPLITUDE);
    }
    Recording::new(samples, spec.sfreq, geometry.clone())
}
