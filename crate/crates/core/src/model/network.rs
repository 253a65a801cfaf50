//! Encoder/decoder transformer over packed, register-interleaved token sequences.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::attention::{AttnCache, AttnContext, Attention};
use super::layers::{AdaNormCache, AdaRmsNorm, Linear, Mlp, MlpCache, NormCache, RmsNorm};
use super::params::{Grads, ParamId, ParamStore};
use super::rope::RopeTable;
use super::tensor::{Mat, Real};
use crate::error::{Error, Result};
use crate::tokens::{self, Coord4, TokenGrid, ATTENTION_WINDOW, WINDOW};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub head_dim: usize,
    pub n_layers_enc: usize,
    pub n_layers_dec: usize,
    pub mlp_ratio: usize,
    pub register_stride: usize,
    /// RoPE base for the `(bx, by, bz, m)` axes.
    pub rope_base: [f64; 4],
    pub window: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            n_heads: 4,
            head_dim: 32,
            n_layers_enc: 4,
            n_layers_dec: 4,
            mlp_ratio: 4,
            register_stride: 1,
            rope_base: [100.0, 100.0, 100.0, 10000.0],
            window: WINDOW,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.head_dim == 0 || self.head_dim % 8 != 0 {
            return Err(Error::invalid(format!("head_dim {} is not a positive multiple of 8", self.head_dim)));
        }
        if self.d_model != self.n_heads * self.head_dim {
            return Err(Error::invalid(format!(
                "d_model {} differs from n_heads·head_dim = {}",
                self.d_model,
                self.n_heads * self.head_dim
            )));
        }
        if self.d_model % 2 != 0 || self.mlp_ratio == 0 || self.register_stride == 0 {
            return Err(Error::invalid("d_model must be even; mlp_ratio and register_stride positive"));
        }
        if self.window != WINDOW {
            return Err(Error::invalid(format!("token window must be {WINDOW} samples")));
        }
        if self.rope_base.iter().any(|b| !(b.is_finite() && *b > 1.0)) {
            return Err(Error::invalid("rope bases must be finite and greater than 1"));
        }
        Ok(())
    }
}

/// Token layout of a packed batch of grids: the register-interleaved encoder
/// sequence, the plain raster decoder sequence, and how they align.
#[derive(Debug, Clone)]
pub struct Layout {
    pub shapes: Vec<(usize, usize)>,
    pub enc_coords: Vec<Coord4>,
    pub enc_is_register: Vec<bool>,
    pub enc_segments: Vec<Range<usize>>,
    pub dec_coords: Vec<Coord4>,
    pub dec_segments: Vec<Range<usize>>,
    /// Encoder index of the latent token aligned with each decoder token.
    pub data_pos: Vec<usize>,
    /// Encoder index of the register heading each decoder token's group.
    pub reg_pos: Vec<usize>,
    /// Sample index of each decoder token.
    pub dec_sample: Vec<usize>,
    pub window: usize,
    pub register_stride: usize,
}

impl Layout {
    pub fn new(grids: &[TokenGrid], register_stride: usize) -> Result<Self> {
        if grids.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let dec: Vec<_> = grids.iter().map(tokens::raster_serialize).collect();
        let enc = dec.iter().map(|s| tokens::interleave_registers(s, register_stride)).collect::<Result<Vec<_>>>()?;
        let members: Vec<usize> = (0..grids.len()).collect();
        let enc_pack = tokens::concat(&enc, &members);
        let dec_pack = tokens::concat(&dec, &members);
        let d = register_stride;
        let mut data_pos = Vec::with_capacity(dec_pack.len());
        let mut reg_pos = Vec::with_capacity(dec_pack.len());
        for (s, seg) in dec_pack.segments.iter().enumerate() {
            let base = enc_pack.segments[s].start;
            for k in 0..seg.len() {
                data_pos.push(base + k + k / d + 1);
                reg_pos.push(base + (k / d) * (d + 1));
            }
        }
        Ok(Self {
            shapes: grids.iter().map(|g| (g.n_channels(), g.n_windows())).collect(),
            enc_coords: enc_pack.coords,
            enc_is_register: enc_pack.is_register,
            enc_segments: enc_pack.segments,
            dec_coords: dec_pack.coords,
            dec_segments: dec_pack.segments,
            data_pos,
            reg_pos,
            dec_sample: dec_pack.sample_id,
            window: ATTENTION_WINDOW,
            register_stride,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.shapes.len()
    }

    pub fn enc_len(&self) -> usize {
        self.enc_coords.len()
    }

    pub fn dec_len(&self) -> usize {
        self.dec_coords.len()
    }

    fn check_grids(&self, grids: &[TokenGrid]) -> Result<()> {
        let shapes: Vec<_> = grids.iter().map(|g| (g.n_channels(), g.n_windows())).collect();
        if shapes != self.shapes {
            return Err(Error::invalid("grids do not match the batch layout"));
        }
        Ok(())
    }

    /// Encoder input rows (`enc_len × W`): grid windows in raster order with
    /// zero rows at register slots. Dropped channels are already zero in the grid.
    pub fn encoder_tokens<T: Real>(&self, grids: &[TokenGrid]) -> Result<Mat<T>> {
        self.check_grids(grids)?;
        let mut out = Mat::zeros(self.enc_len(), WINDOW);
        let mut k = 0;
        for g in grids {
            for m in 0..g.n_windows() {
                for c in 0..g.n_channels() {
                    fill_row(&mut out, self.data_pos[k], g.window(c, m));
                    k += 1;
                }
            }
        }
        Ok(out)
    }

    /// Decoder rows (`dec_len × W`) in raster order.
    pub fn decoder_tokens<T: Real>(&self, grids: &[TokenGrid]) -> Result<Mat<T>> {
        self.check_grids(grids)?;
        let mut out = Mat::zeros(self.dec_len(), WINDOW);
        let mut k = 0;
        for g in grids {
            for m in 0..g.n_windows() {
                for c in 0..g.n_channels() {
                    fill_row(&mut out, k, g.window(c, m));
                    k += 1;
                }
            }
        }
        Ok(out)
    }

    /// Writes decoder-ordered rows back into copies of `templates`.
    pub fn to_grids<T: Real>(&self, rows: &Mat<T>, templates: &[TokenGrid]) -> Result<Vec<TokenGrid>> {
        self.check_grids(templates)?;
        if rows.rows != self.dec_len() || rows.cols != WINDOW {
            return Err(Error::invalid("row matrix does not match the decoder layout"));
        }
        let mut k = 0;
        let mut out = Vec::with_capacity(templates.len());
        for t in templates {
            let mut g = t.clone();
            for m in 0..g.n_windows() {
                for c in 0..g.n_channels() {
                    g.window_mut(c, m).iter_mut().zip(rows.row(k)).for_each(|(d, s)| *d = s.f64());
                    k += 1;
                }
            }
            out.push(g);
        }
        Ok(out)
    }
}

fn fill_row<T: Real>(m: &mut Mat<T>, r: usize, src: &[f64]) {
    m.row_mut(r).iter_mut().zip(src).for_each(|(d, s)| *d = T::c(*s));
}

#[derive(Debug, Clone)]
enum Norm {
    Plain(RmsNorm),
    Ada(AdaRmsNorm),
}

enum NormState<T> {
    Plain(NormCache<T>),
    Ada(AdaNormCache<T>),
}

impl Norm {
    fn forward<T: Real>(&self, p: &ParamStore<T>, x: &Mat<T>, cond: Option<&Mat<T>>) -> (Mat<T>, NormState<T>) {
        match self {
            Norm::Plain(n) => {
                let (y, c) = n.forward(p, x);
                (y, NormState::Plain(c))
            }
            Norm::Ada(n) => {
                let (y, c) = n.forward(p, x, cond.expect("adaptive norm needs a condition"));
                (y, NormState::Ada(c))
            }
        }
    }

    fn backward<T: Real>(
        &self, p: &ParamStore<T>, g: &mut Grads<T>, state: &NormState<T>, cond: Option<&Mat<T>>,
        dcond: &mut Option<Mat<T>>, dy: &Mat<T>,
    ) -> Mat<T> {
        match (self, state) {
            (Norm::Plain(n), NormState::Plain(c)) => n.backward(p, g, c, dy),
            (Norm::Ada(n), NormState::Ada(c)) => {
                let (dx, dc) = n.backward(p, g, c, cond.expect("adaptive norm needs a condition"), dy);
                match dcond {
                    Some(acc) => acc.add_assign(&dc),
                    None => *dcond = Some(dc),
                }
                dx
            }
            _ => unreachable!("norm cache kind matches the norm"),
        }
    }
}

/// Pre-norm residual block: `h + Attn(N(h))`, then `+ MLP(N(·))`.
#[derive(Debug, Clone)]
struct Block {
    norm1: Norm,
    attn: Attention,
    norm2: Norm,
    mlp: Mlp,
}

struct BlockCache<T> {
    n1: NormState<T>,
    attn: AttnCache<T>,
    n2: NormState<T>,
    mlp: MlpCache<T>,
}

impl Block {
    fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, name: &str, cfg: &ModelConfig, ada: bool) -> Self {
        let d = cfg.d_model;
        let norm = |store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, n: &str| {
            if ada {
                Norm::Ada(AdaRmsNorm::new(store, rng, &format!("{name}.{n}"), d))
            } else {
                Norm::Plain(RmsNorm::new(store, &format!("{name}.{n}"), d))
            }
        };
        let norm1 = norm(store, rng, "norm1");
        let attn = Attention::new(store, rng, &format!("{name}.attn"), cfg.n_heads, cfg.head_dim);
        let norm2 = norm(store, rng, "norm2");
        let mlp = Mlp::new(store, rng, &format!("{name}.mlp"), d, d * cfg.mlp_ratio, d, false);
        Self { norm1, attn, norm2, mlp }
    }

    fn forward<T: Real>(
        &self, p: &ParamStore<T>, h: &Mat<T>, ctx: &AttnContext<T>, cond: Option<&Mat<T>>,
    ) -> (Mat<T>, BlockCache<T>) {
        let (a, n1) = self.norm1.forward(p, h, cond);
        let (att, attn) = self.attn.forward(p, &a, ctx);
        let mut h1 = h.clone();
        h1.add_assign(&att);
        let (b, n2) = self.norm2.forward(p, &h1, cond);
        let (m, mlp) = self.mlp.forward(p, &b);
        h1.add_assign(&m);
        (h1, BlockCache { n1, attn, n2, mlp })
    }

    fn backward<T: Real>(
        &self, p: &ParamStore<T>, g: &mut Grads<T>, c: &BlockCache<T>, ctx: &AttnContext<T>,
        cond: Option<&Mat<T>>, dcond: &mut Option<Mat<T>>, dh: &Mat<T>,
    ) -> Mat<T> {
        let db = self.mlp.backward(p, g, &c.mlp, dh);
        let mut dh1 = self.norm2.backward(p, g, &c.n2, cond, dcond, &db);
        dh1.add_assign(dh);
        let da = self.attn.backward(p, g, &c.attn, ctx, &dh1);
        let mut dh0 = self.norm1.backward(p, g, &c.n1, cond, dcond, &da);
        dh0.add_assign(&dh1);
        dh0
    }
}

fn check_activations<T: Real>(h: &Mat<T>, stage: impl FnOnce() -> String) -> Result<()> {
    if h.is_finite() {
        Ok(())
    } else {
        Err(Error::Numerical { stage: stage(), detail: "non-finite activations".into() })
    }
}

#[derive(Debug, Clone)]
struct Encoder {
    embed: Mlp,
    register: ParamId,
    blocks: Vec<Block>,
    norm: RmsNorm,
}

#[derive(Debug, Clone)]
struct Decoder {
    embed: Mlp,
    time_mlp: Mlp,
    latent_proj: Linear,
    register_proj: Linear,
    blocks: Vec<Block>,
    norm: AdaRmsNorm,
    head: Mlp,
}

pub struct EncoderCache<T> {
    ctx: AttnContext<T>,
    embed: MlpCache<T>,
    blocks: Vec<BlockCache<T>>,
    norm: NormCache<T>,
}

pub struct DecoderCache<T> {
    ctx: AttnContext<T>,
    embed: MlpCache<T>,
    time: MlpCache<T>,
    lat_data: Mat<T>,
    lat_reg: Mat<T>,
    cond: Mat<T>,
    blocks: Vec<BlockCache<T>>,
    norm: AdaNormCache<T>,
    head: MlpCache<T>,
}

/// The diffusion autoencoder: parameters plus the layer structure over them.
#[derive(Debug, Clone)]
pub struct Model<T> {
    pub cfg: ModelConfig,
    pub params: ParamStore<T>,
    enc: Encoder,
    dec: Decoder,
}

/// Sinusoidal features of `1000·t`, `dim` wide (cosines then sines).
pub fn timestep_features(t: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let freqs = (0..half).map(|k| (-(10000f64).ln() * k as f64 / half as f64).exp());
    let args: Vec<f64> = freqs.map(|f| 1000.0 * t * f).collect();
    args.iter().map(|a| a.cos()).chain(args.iter().map(|a| a.sin())).collect()
}

impl<T: Real> Model<T> {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new(seed);
        let d = cfg.d_model;
        let enc = Encoder {
            embed: Mlp::new(&mut store, &mut rng, "encoder.embed", WINDOW, 4 * d, d, false),
            register: store.add("encoder.register", super::params::truncated_normal(1, d, super::params::INIT_SD, &mut rng)),
            blocks: (0..cfg.n_layers_enc)
                .map(|i| Block::new(&mut store, &mut rng, &format!("encoder.block{i}"), &cfg, false))
                .collect(),
            norm: RmsNorm::new(&mut store, "encoder.norm", d),
        };
        let dec = Decoder {
            embed: Mlp::new(&mut store, &mut rng, "decoder.embed", WINDOW, 4 * d, d, false),
            time_mlp: Mlp::new(&mut store, &mut rng, "decoder.time", d, d, d, false),
            latent_proj: Linear::new(&mut store, &mut rng, "decoder.latent_proj", d, d, true, false),
            register_proj: Linear::new(&mut store, &mut rng, "decoder.register_proj", d, d, false, false),
            blocks: (0..cfg.n_layers_dec)
                .map(|i| Block::new(&mut store, &mut rng, &format!("decoder.block{i}"), &cfg, true))
                .collect(),
            norm: AdaRmsNorm::new(&mut store, &mut rng, "decoder.norm", d),
            head: Mlp::new(&mut store, &mut rng, "decoder.head", d, d, WINDOW, true),
        };
        Ok(Self { cfg, params: store, enc, dec })
    }

    /// Same architecture with parameters converted to another precision.
    pub fn cast<U: Real>(&self) -> Model<U> {
        Model { cfg: self.cfg.clone(), params: self.params.cast(), enc: self.enc.clone(), dec: self.dec.clone() }
    }

    /// Builds a model of this architecture around an existing parameter store.
    pub fn with_params(cfg: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        let template = Self::new(cfg, params.seed)?;
        if template.params.names() != params.names()
            || template.params.tensors().iter().zip(params.tensors()).any(|(a, b)| (a.rows, a.cols) != (b.rows, b.cols))
        {
            return Err(Error::Format("parameter names or shapes do not match the configuration".into()));
        }
        Ok(Self { params, ..template })
    }

    fn context(&self, coords: &[Coord4], segments: &[Range<usize>], window: usize) -> AttnContext<T> {
        AttnContext {
            segments: segments.to_vec(),
            window,
            rope: RopeTable::new(coords, self.cfg.head_dim, self.cfg.rope_base),
        }
    }

    /// Hidden sequence over the interleaved encoder tokens (registers included).
    pub fn encode(&self, layout: &Layout, tokens: &Mat<T>) -> Result<(Mat<T>, EncoderCache<T>)> {
        if tokens.rows != layout.enc_len() || tokens.cols != WINDOW {
            return Err(Error::invalid(format!(
                "encoder input is {}×{}, layout expects {}×{WINDOW}",
                tokens.rows,
                tokens.cols,
                layout.enc_len()
            )));
        }
        let p = &self.params;
        let ctx = self.context(&layout.enc_coords, &layout.enc_segments, layout.window);
        let (mut h, embed) = self.enc.embed.forward(p, tokens);
        let reg = p.get(self.enc.register);
        for (r, _) in layout.enc_is_register.iter().enumerate().filter(|(_, &is)| is) {
            h.row_mut(r).copy_from_slice(&reg.data);
        }
        check_activations(&h, || "encoder embedding".into())?;
        let mut blocks = Vec::with_capacity(self.enc.blocks.len());
        for (i, b) in self.enc.blocks.iter().enumerate() {
            let (next, c) = b.forward(p, &h, &ctx, None);
            check_activations(&next, || format!("encoder layer {i}"))?;
            h = next;
            blocks.push(c);
        }
        let (latent, norm) = self.enc.norm.forward(p, &h);
        Ok((latent, EncoderCache { ctx, embed, blocks, norm }))
    }

    pub fn encode_backward(&self, layout: &Layout, cache: &EncoderCache<T>, dlatent: &Mat<T>, g: &mut Grads<T>) {
        let p = &self.params;
        let mut dh = self.enc.norm.backward(p, g, &cache.norm, dlatent);
        for (b, c) in self.enc.blocks.iter().zip(&cache.blocks).rev() {
            dh = b.backward(p, g, c, &cache.ctx, None, &mut None, &dh);
        }
        let greg = g.get_mut(self.enc.register);
        for (r, _) in layout.enc_is_register.iter().enumerate().filter(|(_, &is)| is) {
            greg.data.iter_mut().zip(dh.row(r)).for_each(|(a, v)| *a += *v);
            dh.row_mut(r).iter_mut().for_each(|v| *v = T::zero());
        }
        self.enc.embed.backward(p, g, &cache.embed, &dh);
    }

    /// Velocity predictions (`dec_len × W`) for noisy tokens `x_t` at per-sample times `t`.
    pub fn decode(&self, layout: &Layout, x_t: &Mat<T>, t: &[f64], latent: &Mat<T>) -> Result<(Mat<T>, DecoderCache<T>)> {
        if x_t.rows != layout.dec_len() || x_t.cols != WINDOW {
            return Err(Error::invalid("decoder input does not match the layout"));
        }
        if latent.rows != layout.enc_len() || latent.cols != self.cfg.d_model {
            return Err(Error::invalid("latent does not match the layout"));
        }
        if t.len() != layout.n_samples() {
            return Err(Error::invalid("one time value per sample is required"));
        }
        if let Some(bad) = t.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("diffusion time {bad} outside [0, 1]")));
        }
        let p = &self.params;
        let d = self.cfg.d_model;
        let ctx = self.context(&layout.dec_coords, &layout.dec_segments, layout.window);
        let feats: Vec<T> = t.iter().flat_map(|&v| timestep_features(v, d)).map(T::c).collect();
        let (temb, time) = self.dec.time_mlp.forward(p, &Mat::from_vec(t.len(), d, feats));
        let lat_data = latent.gather_rows(&layout.data_pos);
        let lat_reg = latent.gather_rows(&layout.reg_pos);
        let mut cond = self.dec.latent_proj.forward(p, &lat_data);
        cond.add_assign(&self.dec.register_proj.forward(p, &lat_reg));
        for (r, &s) in layout.dec_sample.iter().enumerate() {
            cond.row_mut(r).iter_mut().zip(temb.row(s)).for_each(|(a, v)| *a += *v);
        }
        let (mut h, embed) = self.dec.embed.forward(p, x_t);
        check_activations(&h, || "decoder embedding".into())?;
        let mut blocks = Vec::with_capacity(self.dec.blocks.len());
        for (i, b) in self.dec.blocks.iter().enumerate() {
            let (next, c) = b.forward(p, &h, &ctx, Some(&cond));
            check_activations(&next, || format!("decoder layer {i}"))?;
            h = next;
            blocks.push(c);
        }
        let (hn, norm) = self.dec.norm.forward(p, &h, &cond);
        let (v, head) = self.dec.head.forward(p, &hn);
        check_activations(&v, || "decoder head".into())?;
        Ok((v, DecoderCache { ctx, embed, time, lat_data, lat_reg, cond, blocks, norm, head }))
    }

    /// Accumulates decoder gradients and returns `∂L/∂latent`.
    pub fn decode_backward(&self, layout: &Layout, cache: &DecoderCache<T>, dv: &Mat<T>, g: &mut Grads<T>) -> Mat<T> {
        let p = &self.params;
        let cond = Some(&cache.cond);
        let dhn = self.dec.head.backward(p, g, &cache.head, dv);
        let (mut dh, dc) = self.dec.norm.backward(p, g, &cache.norm, &cache.cond, &dhn);
        let mut dcond = Some(dc);
        for (b, c) in self.dec.blocks.iter().zip(&cache.blocks).rev() {
            dh = b.backward(p, g, c, &cache.ctx, cond, &mut dcond, &dh);
        }
        self.dec.embed.backward(p, g, &cache.embed, &dh);
        let dcond = dcond.expect("decoder condition gradient");
        let mut dtemb = Mat::zeros(layout.n_samples(), self.cfg.d_model);
        for (r, &s) in layout.dec_sample.iter().enumerate() {
            dtemb.row_mut(s).iter_mut().zip(dcond.row(r)).for_each(|(a, v)| *a += *v);
        }
        self.dec.time_mlp.backward(p, g, &cache.time, &dtemb);
        let dl = self.dec.latent_proj.backward(p, g, &cache.lat_data, &dcond);
        let dr = self.dec.register_proj.backward(p, g, &cache.lat_reg, &dcond);
        let mut dlatent = Mat::zeros(layout.enc_len(), self.cfg.d_model);
        for (r, (&i, &j)) in layout.data_pos.iter().zip(&layout.reg_pos).enumerate() {
            dlatent.row_mut(i).iter_mut().zip(dl.row(r)).for_each(|(a, v)| *a += *v);
            dlatent.row_mut(j).iter_mut().zip(dr.row(r)).for_each(|(a, v)| *a += *v);
        }
        dlatent
    }
}
