//! The desk-scale experiment: synthetic corpus → preprocessing → training,
//! with a disjoint held-out corpus for evaluation.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Recording;
use crate::model::{Model, ModelConfig};
use crate::signal::{preprocess, rescale_for_training, Epoch, PipelineConfig};
use crate::tokens::{window_tokens, TokenGrid};
use crate::train::config::Section;
use crate::train::{train, KeyValues, TrainConfig, TrainOutcome, TrainOutputs};

use super::synth::{synth_generate, synth_recording_at, SynthSpec};

/// Seed offset separating the held-out corpus from the training corpus.
pub const HOLDOUT_SEED_OFFSET: u64 = 0x5eed_0ff5;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyConfig {
    pub synth: SynthSpec,
    /// Training epochs drawn from the synthetic corpus.
    pub train_epochs: usize,
    pub holdout_epochs: usize,
    pub model: ModelConfig,
    pub model_seed: u64,
    pub train: TrainConfig,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            synth: SynthSpec::default(),
            train_epochs: 2000,
            holdout_epochs: 200,
            model: ModelConfig {
                d_model: 64,
                n_heads: 4,
                head_dim: 16,
                n_layers_enc: 2,
                n_layers_dec: 2,
                mlp_ratio: 4,
                register_stride: 16,
                ..ModelConfig::default()
            },
            model_seed: 0,
            train: TrainConfig { total_steps: 5000, batch_size: 4, lr_max: 2e-3, lr_min: 1e-5, ..TrainConfig::default() },
        }
    }
}

pub fn model_config_from_kv(kv: &mut Section<'_>, d: &ModelConfig) -> Result<ModelConfig> {
    let bases = kv.take_list("rope_base", d.rope_base.to_vec())?;
    let rope_base: [f64; 4] = bases.try_into().map_err(|_| Error::invalid("rope_base needs four values"))?;
    let cfg = ModelConfig {
        d_model: kv.take("d_model", d.d_model)?,
        n_heads: kv.take("n_heads", d.n_heads)?,
        head_dim: kv.take("head_dim", d.head_dim)?,
        n_layers_enc: kv.take("n_layers_enc", d.n_layers_enc)?,
        n_layers_dec: kv.take("n_layers_dec", d.n_layers_dec)?,
        mlp_ratio: kv.take("mlp_ratio", d.mlp_ratio)?,
        register_stride: kv.take("register_stride", d.register_stride)?,
        rope_base,
        window: d.window,
    };
    cfg.validate()?;
    Ok(cfg)
}

impl ToyConfig {
    /// Reads `synth.*`, `model.*`, `train.*` and top-level corpus keys.
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KeyValues::parse(text)?;
        let d = Self::default();
        let cfg = Self {
            synth: SynthSpec::from_kv(&mut kv.section("synth"), &d.synth)?,
            train_epochs: kv.take("train_epochs", d.train_epochs)?,
            holdout_epochs: kv.take("holdout_epochs", d.holdout_epochs)?,
            model: model_config_from_kv(&mut kv.section("model"), &d.model)?,
            model_seed: kv.take("model_seed", d.model_seed)?,
            train: TrainConfig::from_kv(&mut kv.section("train"), &d.train)?,
        };
        kv.finish()?;
        Ok(cfg)
    }

    fn recordings_for(&self, epochs: usize) -> usize {
        let per = (self.synth.duration_s / 5.0).floor().max(1.0) as usize;
        epochs.div_ceil(per).max(1)
    }

    pub fn train_spec(&self) -> SynthSpec {
        SynthSpec { n_recordings: self.recordings_for(self.train_epochs), ..self.synth.clone() }
    }

    pub fn holdout_spec(&self) -> SynthSpec {
        SynthSpec {
            n_recordings: self.recordings_for(self.holdout_epochs),
            seed: self.synth.seed.wrapping_add(HOLDOUT_SEED_OFFSET),
            ..self.synth.clone()
        }
    }
}

/// Runs every recording through the preprocessing pipeline and keeps at most
/// `limit` epochs.
pub fn preprocess_corpus(recordings: &[Recording], limit: usize) -> Result<Vec<Epoch>> {
    let cfg = PipelineConfig::default();
    let mut epochs = Vec::new();
    for rec in recordings {
        if epochs.len() >= limit {
            break;
        }
        epochs.extend(preprocess(rec, &cfg)?.epochs);
    }
    epochs.truncate(limit);
    Ok(epochs)
}

/// Token grids in the training scale.
pub fn training_grids(epochs: &[Epoch]) -> Result<Vec<TokenGrid>> {
    rescale_for_training(epochs).iter().map(window_tokens).collect()
}

/// Held-out epochs without QC-flagged channels, generating recordings until
/// `count` are available.
pub fn clean_holdout(cfg: &ToyConfig, count: usize) -> Result<Vec<Epoch>> {
    let spec = cfg.holdout_spec();
    let limit = 20 * cfg.recordings_for(count) + 20;
    let pipeline = PipelineConfig::default();
    let mut epochs = Vec::with_capacity(count);
    for i in 0..limit {
        if epochs.len() >= count {
            break;
        }
        let rec = synth_recording_at(&spec, i)?;
        epochs.extend(preprocess(&rec, &pipeline)?.epochs.into_iter().filter(|e| !e.bad_channels.iter().any(|b| *b)));
    }
    if epochs.len() < count {
        return Err(Error::invalid(format!("only {} clean held-out epochs after {limit} recordings", epochs.len())));
    }
    epochs.truncate(count);
    Ok(epochs)
}

pub fn build_corpora(cfg: &ToyConfig) -> Result<(Vec<Epoch>, Vec<Epoch>)> {
    let train = preprocess_corpus(&synth_generate(&cfg.train_spec())?, cfg.train_epochs)?;
    Ok((train, clean_holdout(cfg, cfg.holdout_epochs)?))
}

/// Trains the toy model, writing the checkpoint and loss trace when paths are given.
pub fn train_toy(cfg: &ToyConfig, checkpoint: Option<&Path>, trace: Option<&Path>) -> Result<(TrainOutcome, Vec<Epoch>)> {
    let (train_epochs, holdout) = build_corpora(cfg)?;
    log::info!("training on {} epochs, {} held out", train_epochs.len(), holdout.len());
    let grids = training_grids(&train_epochs)?;
    let model = Model::<f32>::new(cfg.model.clone(), cfg.model_seed)?;
    log::info!("model has {} parameters", model.params.n_scalars());
    let outputs = TrainOutputs { checkpoint: checkpoint.map(Path::to_path_buf), trace_csv: trace.map(Path::to_path_buf) };
    Ok((train(model, &grids, &cfg.train, &outputs)?, holdout))
}
