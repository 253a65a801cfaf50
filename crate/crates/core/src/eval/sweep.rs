//! Dropout sweeps comparing the flow model with spherical-spline interpolation.

use std::fmt;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{Model, Real};
use crate::sampler::{nmse, reconstruct_grids, SamplerConfig};
use crate::signal::{rescale_for_training, Epoch};
use crate::spline::{self, SplineConfig};
use crate::tokens::window_tokens;
use crate::train::DropoutPlan;

/// Fewest observed channels the spline baseline accepts.
pub const SPLINE_MIN_OBSERVED: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Method {
    Model,
    Spline,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Model => "model",
            Method::Spline => "spline",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub rates: Vec<f64>,
    /// Independent dropout-selection seeds; the epochs are split evenly among them.
    pub n_seeds: usize,
    pub methods: Vec<Method>,
    pub seed: u64,
    pub sampler: SamplerConfig,
    /// Epochs reconstructed per model call.
    pub batch: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            rates: vec![0.2, 0.5, 0.75, 0.9],
            n_seeds: 20,
            methods: vec![Method::Model, Method::Spline],
            seed: 0,
            sampler: SamplerConfig::default(),
            batch: 8,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.rates.is_empty() || self.rates.iter().any(|r| !(*r > 0.0 && *r < 1.0)) {
            return Err(Error::invalid("dropout rates must lie in (0, 1)"));
        }
        if self.methods.is_empty() || self.n_seeds == 0 || self.batch == 0 {
            return Err(Error::invalid("need at least one method, seed and batch slot"));
        }
        Ok(())
    }
}

/// Channels dropped at `rate` out of `c`.
pub fn n_dropped(rate: f64, c: usize) -> usize {
    (rate * c as f64).round() as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub method: Method,
    pub rate: f64,
    pub mean_nmse: f64,
    pub sd_nmse: f64,
    pub n: usize,
    /// False when the method cannot run at this rate (e.g. too few observed channels).
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// Per-seed mean NMSE, indexed like `rows`.
    pub seed_means: Vec<Vec<f64>>,
}

impl SweepResult {
    pub fn row(&self, method: Method, rate: f64) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.method == method && r.rate == rate)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["method", "rate", "mean_nmse", "sd_nmse", "n"])?;
        for r in &self.rows {
            let (mean, sd) = if r.feasible {
                (r.mean_nmse.to_string(), r.sd_nmse.to_string())
            } else {
                ("infeasible".to_string(), "infeasible".to_string())
            };
            out.write_record([r.method.to_string(), r.rate.to_string(), mean, sd, r.n.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = if v.len() > 1 { v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64 } else { 0.0 };
    (m, var.sqrt())
}

/// For each rate and seed, draws a uniform dropped subset of `round(rate·C)`
/// channels for each of that seed's epochs and reconstructs it with every
/// requested method. Epochs with QC-zeroed channels are skipped.
pub fn run_sweep<T: Real>(corpus: &[Epoch], model: Option<&Model<T>>, spec: &SweepSpec) -> Result<SweepResult> {
    spec.validate()?;
    if spec.methods.contains(&Method::Model) && model.is_none() {
        return Err(Error::invalid("the model method needs a checkpoint"));
    }
    let epochs: Vec<&Epoch> = corpus.iter().filter(|e| !e.bad_channels.iter().any(|b| *b)).collect();
    if epochs.len() < corpus.len() {
        log::warn!("skipping {} epochs with zero-filled bad channels", corpus.len() - epochs.len());
    }
    if epochs.is_empty() {
        return Err(Error::invalid("no clean epochs to evaluate"));
    }
    let mut rows = Vec::new();
    let mut seed_means = Vec::new();
    for (ri, &rate) in spec.rates.iter().enumerate() {
        let mut per_method: Vec<(Method, Vec<Vec<f64>>, bool)> =
            spec.methods.iter().map(|&m| (m, vec![Vec::new(); spec.n_seeds], true)).collect();
        for seed in 0..spec.n_seeds {
            let mine: Vec<&Epoch> = epochs.iter().copied().skip(seed).step_by(spec.n_seeds).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream((ri * spec.n_seeds + seed) as u64 + 1);
            let plans = mine
                .iter()
                .map(|e| {
                    let c = e.n_channels();
                    DropoutPlan::random_subset(c, n_dropped(rate, c), &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            for (method, scores, feasible) in &mut per_method {
                match method {
                    Method::Spline => {
                        for (e, p) in mine.iter().zip(&plans) {
                            if p.mask.len() - p.k_dropped < SPLINE_MIN_OBSERVED {
                                *feasible = false;
                                continue;
                            }
                            let recon = spline::reconstruct(e.geometry.positions(), &e.samples, &p.mask, &SplineConfig::default())?;
                            scores[seed].push(nmse(&recon, &e.samples, p)?);
                        }
                    }
                    Method::Model => {
                        let model = model.expect("checked above");
                        for (chunk, chunk_plans) in mine.chunks(spec.batch).zip(plans.chunks(spec.batch)) {
                            let scaled = rescale_for_training(&chunk.iter().map(|e| (*e).clone()).collect::<Vec<_>>());
                            let grids = scaled.iter().map(window_tokens).collect::<Result<Vec<_>>>()?;
                            let sampler = SamplerConfig { seed: spec.sampler.seed ^ ((ri * spec.n_seeds + seed) as u64), ..spec.sampler.clone() };
                            let recon = reconstruct_grids(model, &grids, chunk_plans, &sampler)?;
                            for ((r, g), p) in recon.iter().zip(&grids).zip(chunk_plans) {
                                scores[seed].push(nmse(&r.to_rows(), &g.to_rows(), p)?);
                            }
                        }
                    }
                }
            }
        }
        for (method, scores, feasible) in per_method {
            let all: Vec<f64> = scores.iter().flatten().copied().collect();
            let (mean, sd) = mean_sd(&all);
            let feasible = feasible && !all.is_empty();
            rows.push(SweepRow { method, rate, mean_nmse: mean, sd_nmse: sd, n: all.len(), feasible });
            seed_means.push(scores.iter().map(|s| mean_sd(s).0).collect());
        }
    }
    Ok(SweepResult { rows, seed_means })
}
