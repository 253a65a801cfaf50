//! The training step and loop.

use std::path::PathBuf;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::Section;
use super::dropout::{sample_dropout, DropoutPlan};
use super::loss::{gaussian, mmd_squared, AdaptiveWeights};
use super::optim::{lr_at, AdamW};
use crate::error::{Error, Result};
use crate::model::checkpoint::save_checkpoint;
use crate::model::{Grads, Layout, Mat, Model, Real};
use crate::tokens::TokenGrid;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr_max: f64,
    pub lr_min: f64,
    pub warmup_frac: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub total_steps: usize,
    pub batch_size: usize,
    pub grad_accum: usize,
    pub mmd_weight: f64,
    /// Latent vectors subsampled per micro-batch for the MMD term.
    pub mmd_samples: usize,
    pub alw_bins: usize,
    pub alw_decay: f64,
    /// Noise standard deviation, matched to the 0.1 data scale.
    pub noise_sd: f64,
    pub seed: u64,
    /// Checkpoint interval in steps; 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
    /// Abort when the loss exceeds this multiple of the first step's loss.
    pub divergence_factor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_max: 1e-4,
            lr_min: 1e-6,
            warmup_frac: 0.01,
            beta1: 0.9,
            beta2: 0.95,
            weight_decay: 0.01,
            total_steps: 1000,
            batch_size: 4,
            grad_accum: 1,
            mmd_weight: 0.1,
            mmd_samples: 128,
            alw_bins: 64,
            alw_decay: 0.99,
            noise_sd: 0.1,
            seed: 0,
            checkpoint_every: 0,
            divergence_factor: 1e3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr_min < self.lr_max
            && self.lr_min >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && self.beta1 > 0.0
            && (0.0..1.0).contains(&self.beta2)
            && self.beta2 > 0.0
            && (0.0..1.0).contains(&self.warmup_frac)
            && self.weight_decay >= 0.0
            && self.total_steps > 0
            && self.batch_size > 0
            && self.grad_accum > 0
            && self.mmd_weight >= 0.0
            && self.mmd_samples >= 2
            && self.alw_bins > 0
            && (0.0..1.0).contains(&self.alw_decay)
            && self.noise_sd > 0.0
            && self.divergence_factor > 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("training configuration out of range"))
        }
    }

    /// Reads the training keys from `kv`, taking absent ones from `d`.
    pub fn from_kv(kv: &mut Section<'_>, d: &Self) -> Result<Self> {
        let cfg = Self {
            lr_max: kv.take("lr_max", d.lr_max)?,
            lr_min: kv.take("lr_min", d.lr_min)?,
            warmup_frac: kv.take("warmup_frac", d.warmup_frac)?,
            beta1: kv.take("beta1", d.beta1)?,
            beta2: kv.take("beta2", d.beta2)?,
            weight_decay: kv.take("weight_decay", d.weight_decay)?,
            total_steps: kv.take("total_steps", d.total_steps)?,
            batch_size: kv.take("batch_size", d.batch_size)?,
            grad_accum: kv.take("grad_accum", d.grad_accum)?,
            mmd_weight: kv.take("mmd_weight", d.mmd_weight)?,
            mmd_samples: kv.take("mmd_samples", d.mmd_samples)?,
            alw_bins: kv.take("alw_bins", d.alw_bins)?,
            alw_decay: kv.take("alw_decay", d.alw_decay)?,
            noise_sd: kv.take("noise_sd", d.noise_sd)?,
            seed: kv.take("seed", d.seed)?,
            checkpoint_every: kv.take("checkpoint_every", d.checkpoint_every)?,
            divergence_factor: kv.take("divergence_factor", d.divergence_factor)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Everything random about one micro-batch, fixed up front so the loss is a
/// deterministic function of the parameters.
#[derive(Debug, Clone)]
pub struct StepBatch<T> {
    pub layout: Layout,
    pub enc_tokens: Mat<T>,
    pub x0: Mat<T>,
    pub eps: Mat<T>,
    pub t: Vec<f64>,
    /// Adaptive loss weight per sample.
    pub weights: Vec<f64>,
    pub mmd_rows: Vec<usize>,
    pub mmd_reference: Mat<T>,
    pub mmd_weight: f64,
}

impl<T: Real> StepBatch<T> {
    /// Clean grids go to the decoder target; `plans` zero channels in the encoder input.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        grids: &[TokenGrid], plans: &[DropoutPlan], register_stride: usize, d_model: usize,
        noise_sd: f64, mmd_samples: usize, mmd_weight: f64, rng: &mut R,
    ) -> Result<Self> {
        let layout = Layout::new(grids, register_stride)?;
        let masked: Vec<TokenGrid> = grids.iter().zip(plans).map(|(g, p)| g.with_dropout(&p.mask)).collect();
        let enc_tokens = layout.encoder_tokens(&masked)?;
        let x0 = layout.decoder_tokens(grids)?;
        let eps = gaussian(x0.rows, x0.cols, noise_sd, rng);
        let t = (0..grids.len()).map(|_| rng.gen::<f64>()).collect();
        let n = mmd_samples.min(layout.enc_len());
        let mut mmd_rows = sample(rng, layout.enc_len(), n).into_vec();
        mmd_rows.sort_unstable();
        let mmd_reference = gaussian(n, d_model, 1.0, rng);
        Ok(Self {
            weights: vec![1.0; grids.len()],
            layout,
            enc_tokens,
            x0,
            eps,
            t,
            mmd_rows,
            mmd_reference,
            mmd_weight,
        })
    }

    pub fn x_t(&self) -> Mat<T> {
        let mut x = self.x0.clone();
        for (r, &s) in self.layout.dec_sample.iter().enumerate() {
            let t = self.t[s];
            let (a, b) = (T::c(1.0 - t), T::c(t));
            x.row_mut(r).iter_mut().zip(self.eps.row(r)).for_each(|(v, e)| *v = a * *v + b * *e);
        }
        x
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepLoss {
    /// Unweighted mean over tokens of `‖v̂ − v‖²`.
    pub flow: f64,
    pub per_sample: Vec<f64>,
    pub mmd: f64,
    /// `mean_tokens(w·‖v̂ − v‖²) + mmd_weight·MMD²`.
    pub total: f64,
}

/// Loss of one micro-batch; gradients are accumulated into `grads` when given.
pub fn loss_and_grads<T: Real>(model: &Model<T>, batch: &StepBatch<T>, grads: Option<&mut Grads<T>>) -> Result<StepLoss> {
    let layout = &batch.layout;
    let (latent, enc_cache) = model.encode(layout, &batch.enc_tokens)?;
    let x_t = batch.x_t();
    let (v_hat, dec_cache) = model.decode(layout, &x_t, &batch.t, &latent)?;
    let n_tok = layout.dec_len() as f64;
    let mut per_sample = vec![0.0; layout.n_samples()];
    let mut dv = Mat::<T>::zeros(v_hat.rows, v_hat.cols);
    let mut weighted = 0.0;
    for (r, &s) in layout.dec_sample.iter().enumerate() {
        let w = batch.weights[s];
        let mut sq = 0.0;
        for (j, d) in dv.row_mut(r).iter_mut().enumerate() {
            let diff = v_hat.at(r, j).f64() - (batch.eps.at(r, j).f64() - batch.x0.at(r, j).f64());
            sq += diff * diff;
            *d = T::c(2.0 * w * diff / n_tok);
        }
        per_sample[s] += sq;
        weighted += w * sq;
    }
    let flow = per_sample.iter().sum::<f64>() / n_tok;
    for (s, seg) in layout.dec_segments.iter().enumerate() {
        per_sample[s] /= seg.len() as f64;
    }
    let sub = latent.gather_rows(&batch.mmd_rows);
    let (mmd, dsub) = if batch.mmd_weight > 0.0 {
        mmd_squared(&sub, &batch.mmd_reference)?
    } else {
        (0.0, Mat::zeros(sub.rows, sub.cols))
    };
    let total = weighted / n_tok + batch.mmd_weight * mmd;
    if !total.is_finite() {
        return Err(Error::Numerical { stage: "loss".into(), detail: format!("flow {flow}, mmd {mmd}") });
    }
    if let Some(g) = grads {
        let mut dlatent = model.decode_backward(layout, &dec_cache, &dv, g);
        let mw = T::c(batch.mmd_weight);
        for (k, &r) in batch.mmd_rows.iter().enumerate() {
            dlatent.row_mut(r).iter_mut().zip(dsub.row(k)).for_each(|(a, v)| *a += mw * *v);
        }
        model.encode_backward(layout, &enc_cache, &dlatent, g);
    }
    Ok(StepLoss { flow, per_sample, mmd, total })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossRecord {
    pub step: usize,
    pub lr: f64,
    pub flow_loss: f64,
    pub mmd: f64,
    pub weighted_total: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOutputs {
    pub checkpoint: Option<PathBuf>,
    pub trace_csv: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model<f32>,
    pub trace: Vec<LossRecord>,
}

pub fn write_trace(path: &std::path::Path, trace: &[LossRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in trace {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

// Independent random streams so that, e.g., changing the batch size does not
// shift the noise draws of the dropout sampler.
const STREAM_BATCH: u64 = 1;
const STREAM_DROPOUT: u64 = 2;
const STREAM_NOISE: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Trains `model` on `corpus` (grids already scaled to the training convention).
pub fn train(mut model: Model<f32>, corpus: &[TokenGrid], cfg: &TrainConfig, out: &TrainOutputs) -> Result<TrainOutcome> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::invalid("empty training corpus"));
    }
    model.params.check_finite()?;
    let mut batch_rng = stream(cfg.seed, STREAM_BATCH);
    let mut drop_rng = stream(cfg.seed, STREAM_DROPOUT);
    let mut noise_rng = stream(cfg.seed, STREAM_NOISE);
    let mut opt = AdamW::new(&model.params, cfg.beta1, cfg.beta2, cfg.weight_decay);
    let mut alw = AdaptiveWeights::new(cfg.alw_bins, cfg.alw_decay);
    let mut grads = model.params.zero_grads();
    let mut trace = Vec::with_capacity(cfg.total_steps);
    let mut initial = None;
    let finish_trace = |trace: &[LossRecord]| match &out.trace_csv {
        Some(p) => write_trace(p, trace),
        None => Ok(()),
    };
    for step in 0..cfg.total_steps {
        let lr = lr_at(step, cfg.total_steps, cfg.lr_max, cfg.lr_min, cfg.warmup_frac);
        grads.zero();
        let (mut flow, mut mmd, mut total) = (0.0, 0.0, 0.0);
        for _ in 0..cfg.grad_accum {
            let picks: Vec<usize> = (0..cfg.batch_size).map(|_| batch_rng.gen_range(0..corpus.len())).collect();
            let grids: Vec<TokenGrid> = picks.iter().map(|&i| corpus[i].clone()).collect();
            let plans: Vec<DropoutPlan> = grids.iter().map(|g| sample_dropout(g.n_channels(), &mut drop_rng)).collect();
            let mut batch = StepBatch::new(
                &grids, &plans, model.cfg.register_stride, model.cfg.d_model,
                cfg.noise_sd, cfg.mmd_samples, cfg.mmd_weight, &mut noise_rng,
            )?;
            batch.weights = batch.t.iter().map(|&t| alw.weight(t)).collect();
            let loss = match loss_and_grads(&model, &batch, Some(&mut grads)) {
                Ok(l) => l,
                Err(e) => {
                    finish_trace(&trace)?;
                    return Err(e);
                }
            };
            for (&t, &l) in batch.t.iter().zip(&loss.per_sample) {
                alw.update(t, l);
            }
            flow += loss.flow;
            mmd += loss.mmd;
            total += loss.total;
        }
        let k = cfg.grad_accum as f64;
        let record = LossRecord { step, lr, flow_loss: flow / k, mmd: mmd / k, weighted_total: total / k };
        let first = *initial.get_or_insert(record.weighted_total);
        let limit = cfg.divergence_factor * first;
        let diverged = !record.weighted_total.is_finite() || record.weighted_total > limit || !grads.is_finite();
        trace.push(record.clone());
        if diverged {
            finish_trace(&trace)?;
            return Err(Error::Diverged { step, loss: record.weighted_total, limit });
        }
        grads.scale(1.0 / cfg.grad_accum as f32);
        opt.step(&mut model.params, &grads, lr);
        if step % 50 == 0 || step + 1 == cfg.total_steps {
            log::info!(
                "step {step}: lr {lr:.3e} flow {:.4} mmd {:.4} total {:.4}",
                record.flow_loss,
                record.mmd,
                record.weighted_total
            );
        }
        if let Some(path) = &out.checkpoint {
            let last = step + 1 == cfg.total_steps;
            if last || (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0) {
                let history: Vec<f64> = trace.iter().map(|r| r.flow_loss).collect();
                save_checkpoint(path, &model, step + 1, &history)?;
            }
        }
    }
    finish_trace(&trace)?;
    Ok(TrainOutcome { model, trace })
}
