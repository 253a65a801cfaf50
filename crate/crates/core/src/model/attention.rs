//! Multi-head self-attention restricted to packed segments and a sliding window.

use std::ops::Range;

use rand_chacha::ChaCha8Rng;

use super::layers::Linear;
use super::params::{Grads, ParamStore};
use super::rope::RopeTable;
use super::tensor::{gemm, Mat, Real};

/// Visibility structure shared by every layer of one forward pass: tokens
/// attend only within their own segment and within `window` positions.
pub struct AttnContext<T> {
    pub segments: Vec<Range<usize>>,
    pub window: usize,
    pub rope: RopeTable<T>,
}

#[derive(Debug, Clone)]
pub struct Attention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub n_heads: usize,
    pub head_dim: usize,
}

pub struct AttnCache<T> {
    x: Mat<T>,
    q: Mat<T>,
    k: Mat<T>,
    v: Mat<T>,
    o: Mat<T>,
    /// Softmax weights per (segment, head), row-major `n × n`.
    probs: Vec<Mat<T>>,
}

impl Attention {
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, name: &str, n_heads: usize, head_dim: usize) -> Self {
        let d = n_heads * head_dim;
        Self {
            wq: Linear::new(store, rng, &format!("{name}.q"), d, d, false, false),
            wk: Linear::new(store, rng, &format!("{name}.k"), d, d, false, false),
            wv: Linear::new(store, rng, &format!("{name}.v"), d, d, false, false),
            wo: Linear::new(store, rng, &format!("{name}.out"), d, d, true, false),
            n_heads,
            head_dim,
        }
    }

    pub fn forward<T: Real>(&self, p: &ParamStore<T>, x: &Mat<T>, ctx: &AttnContext<T>) -> (Mat<T>, AttnCache<T>) {
        let mut q = self.wq.forward(p, x);
        let mut k = self.wk.forward(p, x);
        let v = self.wv.forward(p, x);
        ctx.rope.apply(&mut q, false);
        ctx.rope.apply(&mut k, false);
        let scale = T::c(1.0 / (self.head_dim as f64).sqrt());
        let hd = self.head_dim;
        let mut o = Mat::zeros(x.rows, x.cols);
        let mut probs = Vec::with_capacity(ctx.segments.len() * self.n_heads);
        for seg in &ctx.segments {
            let n = seg.len();
            for h in 0..self.n_heads {
                let mut s = Mat::zeros(n, n);
                gemm(scale, q.block(seg.start, n, h * hd, hd), k.block(seg.start, n, h * hd, hd).t(), T::zero(), s.view_mut());
                softmax_rows(&mut s, ctx.window);
                gemm(T::one(), s.view(), v.block(seg.start, n, h * hd, hd), T::zero(), o.block_mut(seg.start, n, h * hd, hd));
                probs.push(s);
            }
        }
        let y = self.wo.forward(p, &o);
        (y, AttnCache { x: x.clone(), q, k, v, o, probs })
    }

    pub fn backward<T: Real>(
        &self, p: &ParamStore<T>, g: &mut Grads<T>, cache: &AttnCache<T>, ctx: &AttnContext<T>, dy: &Mat<T>,
    ) -> Mat<T> {
        let d_o = self.wo.backward(p, g, &cache.o, dy);
        let scale = T::c(1.0 / (self.head_dim as f64).sqrt());
        let hd = self.head_dim;
        let (rows, cols) = (cache.x.rows, cache.x.cols);
        let mut dq = Mat::zeros(rows, cols);
        let mut dk = Mat::zeros(rows, cols);
        let mut dv = Mat::zeros(rows, cols);
        let mut probs = cache.probs.iter();
        for seg in &ctx.segments {
            let n = seg.len();
            for h in 0..self.n_heads {
                let pm = probs.next().expect("cached probabilities per segment and head");
                let mut dp = Mat::zeros(n, n);
                gemm(T::one(), d_o.block(seg.start, n, h * hd, hd), cache.v.block(seg.start, n, h * hd, hd).t(), T::zero(), dp.view_mut());
                gemm(T::one(), pm.view().t(), d_o.block(seg.start, n, h * hd, hd), T::zero(), dv.block_mut(seg.start, n, h * hd, hd));
                for r in 0..n {
                    let pr = pm.row(r);
                    let dr = dp.row_mut(r);
                    let dot: T = pr.iter().zip(dr.iter()).map(|(a, b)| *a * *b).sum();
                    dr.iter_mut().zip(pr).for_each(|(dv, &pv)| *dv = pv * (*dv - dot) * scale);
                }
                gemm(T::one(), dp.view(), cache.k.block(seg.start, n, h * hd, hd), T::zero(), dq.block_mut(seg.start, n, h * hd, hd));
                gemm(T::one(), dp.view().t(), cache.q.block(seg.start, n, h * hd, hd), T::zero(), dk.block_mut(seg.start, n, h * hd, hd));
            }
        }
        ctx.rope.apply(&mut dq, true);
        ctx.rope.apply(&mut dk, true);
        let mut dx = self.wq.backward(p, g, &cache.x, &dq);
        dx.add_assign(&self.wk.backward(p, g, &cache.x, &dk));
        dx.add_assign(&self.wv.backward(p, g, &cache.x, &dv));
        dx
    }
}

/// Row softmax with positions at distance `≥ window` masked out.
fn softmax_rows<T: Real>(s: &mut Mat<T>, window: usize) {
    let n = s.cols;
    for r in 0..s.rows {
        let lo = (r + 1).saturating_sub(window);
        let hi = (r + window).min(n);
        let row = s.row_mut(r);
        let max = row[lo..hi].iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in &mut row[lo..hi] {
            *v = (*v - max).exp();
            total += *v;
        }
        let inv = total.recip();
        row[lo..hi].iter_mut().for_each(|v| *v *= inv);
        row[..lo].fill(T::zero());
        row[hi..].fill(T::zero());
    }
}
