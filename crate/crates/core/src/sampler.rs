//! Reconstruction of dropped channels by integrating the learned velocity
//! field from noise (t = 1) to data (t = 0).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{Mat, Model, Real};
use crate::signal::{rescale_for_training, unscale_from_training, Epoch};
use crate::tokens::{window_tokens, TokenGrid};
use crate::train::loss::gaussian;
use crate::train::DropoutPlan;

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub n_steps: usize,
    pub seed: u64,
    /// Return observed channels as their known values.
    pub overwrite_observed: bool,
    /// Standard deviation of the initial noise, matched to the data scale.
    pub noise_sd: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { n_steps: 50, seed: 0, overwrite_observed: true, noise_sd: 0.1 }
    }
}

/// Euler integration `x ← x − Δt·v(x, t)` from `t = 1` down to `t = 0`.
pub fn euler_integrate<T: Real, F>(mut x: Mat<T>, n_steps: usize, mut velocity: F) -> Result<Mat<T>>
where
    F: FnMut(&Mat<T>, f64) -> Result<Mat<T>>,
{
    if n_steps == 0 {
        return Err(Error::invalid("the sampler needs at least one step"));
    }
    let dt = 1.0 / n_steps as f64;
    for i in 0..n_steps {
        let t = 1.0 - i as f64 * dt;
        let v = velocity(&x, t)?;
        let step = T::c(dt);
        x.data.iter_mut().zip(&v.data).for_each(|(a, b)| *a -= step * *b);
    }
    Ok(x)
}

/// Reconstructs a batch of grids in the training scale. Each grid's channels
/// flagged in the matching plan are hidden from the encoder; the returned
/// grids hold synthesized values for every channel.
pub fn reconstruct_grids<T: Real>(
    model: &Model<T>, grids: &[TokenGrid], plans: &[DropoutPlan], cfg: &SamplerConfig,
) -> Result<Vec<TokenGrid>> {
    model.params.check_finite()?;
    if grids.len() != plans.len() {
        return Err(Error::invalid("one dropout plan per grid is required"));
    }
    for (g, p) in grids.iter().zip(plans) {
        if p.mask.len() != g.n_channels() {
            return Err(Error::invalid("dropout mask length differs from the channel count"));
        }
        if p.k_dropped >= g.n_channels() {
            return Err(Error::invalid("cannot reconstruct with every channel dropped"));
        }
    }
    let masked: Vec<TokenGrid> = grids.iter().zip(plans).map(|(g, p)| g.with_dropout(&p.mask)).collect();
    let layout = crate::model::Layout::new(&masked, model.cfg.register_stride)?;
    let (latent, _) = model.encode(&layout, &layout.encoder_tokens(&masked)?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let x1 = gaussian(layout.dec_len(), crate::tokens::WINDOW, cfg.noise_sd, &mut rng);
    let x0 = euler_integrate(x1, cfg.n_steps, |x, t| {
        let ts = vec![t; layout.n_samples()];
        model.decode(&layout, x, &ts, &latent).map(|(v, _)| v)
    })?;
    let mut out = layout.to_grids(&x0, grids)?;
    for ((o, g), p) in out.iter_mut().zip(grids).zip(plans) {
        o.dropout_mask = p.mask.clone();
        if cfg.overwrite_observed {
            for c in p.observed() {
                for m in 0..g.n_windows() {
                    o.window_mut(c, m).copy_from_slice(g.window(c, m));
                }
            }
        }
    }
    Ok(out)
}

/// Reconstructs the dropped channels of a preprocessed (z-scored) epoch.
pub fn reconstruct<T: Real>(model: &Model<T>, epoch: &Epoch, plan: &DropoutPlan, cfg: &SamplerConfig) -> Result<Epoch> {
    let scaled = rescale_for_training(std::slice::from_ref(epoch)).remove(0);
    let grid = window_tokens(&scaled)?;
    let out = reconstruct_grids(model, &[grid], std::slice::from_ref(plan), cfg)?;
    let synthesized = Epoch { samples: out[0].to_rows(), ..epoch.clone() };
    let mut result = unscale_from_training(std::slice::from_ref(&synthesized)).remove(0);
    if cfg.overwrite_observed {
        for c in plan.observed() {
            result.samples[c].clone_from(&epoch.samples[c]);
        }
    }
    Ok(result)
}

/// `Σ_dropped (x̂ − x)² / Σ_dropped x²`.
pub fn nmse(recon: &[Vec<f64>], truth: &[Vec<f64>], plan: &DropoutPlan) -> Result<f64> {
    if recon.len() != truth.len() || plan.mask.len() != truth.len() {
        return Err(Error::invalid("reconstruction, truth and mask shapes differ"));
    }
    if plan.k_dropped == 0 {
        return Err(Error::invalid("NMSE needs at least one dropped channel"));
    }
    let (mut err, mut power) = (0.0, 0.0);
    for c in plan.dropped() {
        if recon[c].len() != truth[c].len() {
            return Err(Error::invalid("channel lengths differ"));
        }
        for (a, b) in recon[c].iter().zip(&truth[c]) {
            err += (a - b) * (a - b);
            power += b * b;
        }
    }
    if power <= 0.0 {
        return Err(Error::invalid("dropped channels carry zero power in the ground truth"));
    }
    Ok(err / power)
}
