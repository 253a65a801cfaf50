//! Linear maps, GELU MLPs and RMS normalization with explicit backward passes.

use rand_chacha::ChaCha8Rng;

use super::params::{truncated_normal, Grads, ParamId, ParamStore, INIT_SD};
use super::tensor::{gemm, matmul, Mat, Real};

pub const NORM_EPS: f64 = 1e-6;

/// `y = x·W + b` with `W` stored as `in × out`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, name: &str,
        d_in: usize, d_out: usize, bias: bool, zero_init: bool,
    ) -> Self {
        let w = if zero_init { Mat::zeros(d_in, d_out) } else { truncated_normal(d_in, d_out, INIT_SD, rng) };
        let w = store.add(format!("{name}.weight"), w);
        let b = bias.then(|| store.add(format!("{name}.bias"), Mat::zeros(1, d_out)));
        Self { w, b }
    }

    pub fn forward<T: Real>(&self, p: &ParamStore<T>, x: &Mat<T>) -> Mat<T> {
        let mut y = matmul(x, p.get(self.w));
        if let Some(b) = self.b {
            let b = &p.get(b).data;
            for r in 0..y.rows {
                y.row_mut(r).iter_mut().zip(b).for_each(|(v, bb)| *v += *bb);
            }
        }
        y
    }

    /// Accumulates parameter gradients and returns `∂L/∂x`.
    pub fn backward<T: Real>(&self, p: &ParamStore<T>, g: &mut Grads<T>, x: &Mat<T>, dy: &Mat<T>) -> Mat<T> {
        gemm(T::one(), x.view().t(), dy.view(), T::one(), g.get_mut(self.w).view_mut());
        if let Some(b) = self.b {
            let gb = g.get_mut(b);
            for r in 0..dy.rows {
                gb.data.iter_mut().zip(dy.row(r)).for_each(|(a, v)| *a += *v);
            }
        }
        let w = p.get(self.w);
        let mut dx = Mat::zeros(dy.rows, w.rows);
        gemm(T::one(), dy.view(), w.view().t(), T::zero(), dx.view_mut());
        dx
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

/// Tanh-approximated GELU.
pub fn gelu<T: Real>(x: T) -> T {
    let (c, a, half) = (T::c(GELU_C), T::c(GELU_A), T::c(0.5));
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

pub fn gelu_grad<T: Real>(x: T) -> T {
    let (c, a, half) = (T::c(GELU_C), T::c(GELU_A), T::c(0.5));
    let u = c * (x + a * x * x * x);
    let th = u.tanh();
    let du = c * (T::one() + T::c(3.0) * a * x * x);
    half * (T::one() + th) + half * x * (T::one() - th * th) * du
}

/// Two-layer perceptron with a GELU between the layers.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

pub struct MlpCache<T> {
    x: Mat<T>,
    pre: Mat<T>,
    act: Mat<T>,
}

impl Mlp {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, name: &str,
        d_in: usize, d_hidden: usize, d_out: usize, zero_out: bool,
    ) -> Self {
        Self {
            fc1: Linear::new(store, rng, &format!("{name}.fc1"), d_in, d_hidden, true, false),
            fc2: Linear::new(store, rng, &format!("{name}.fc2"), d_hidden, d_out, true, zero_out),
        }
    }

    pub fn forward<T: Real>(&self, p: &ParamStore<T>, x: &Mat<T>) -> (Mat<T>, MlpCache<T>) {
        let pre = self.fc1.forward(p, x);
        let act = Mat::from_vec(pre.rows, pre.cols, pre.data.iter().map(|&v| gelu(v)).collect());
        let y = self.fc2.forward(p, &act);
        (y, MlpCache { x: x.clone(), pre, act })
    }

    pub fn backward<T: Real>(&self, p: &ParamStore<T>, g: &mut Grads<T>, cache: &MlpCache<T>, dy: &Mat<T>) -> Mat<T> {
        let mut da = self.fc2.backward(p, g, &cache.act, dy);
        da.data.iter_mut().zip(&cache.pre.data).for_each(|(d, &x)| *d *= gelu_grad(x));
        self.fc1.backward(p, g, &cache.x, &da)
    }
}

/// Row-wise `x / rms(x)` and the inverse RMS per row.
fn normalize<T: Real>(x: &Mat<T>) -> (Mat<T>, Vec<T>) {
    let d = T::c(x.cols as f64);
    let mut xhat = x.clone();
    let mut inv = Vec::with_capacity(x.rows);
    for r in 0..x.rows {
        let row = xhat.row_mut(r);
        let ms = row.iter().map(|v| *v * *v).sum::<T>() / d;
        let s = (ms + T::c(NORM_EPS)).sqrt().recip();
        row.iter_mut().for_each(|v| *v *= s);
        inv.push(s);
    }
    (xhat, inv)
}

/// Backward through `xhat = x / rms(x)` given `∂L/∂xhat`.
fn normalize_backward<T: Real>(xhat: &Mat<T>, inv: &[T], dxhat: &Mat<T>) -> Mat<T> {
    let d = T::c(xhat.cols as f64);
    let mut dx = dxhat.clone();
    for r in 0..xhat.rows {
        let xr = xhat.row(r);
        let dot = dxhat.row(r).iter().zip(xr).map(|(a, b)| *a * *b).sum::<T>() / d;
        dx.row_mut(r).iter_mut().zip(xr).for_each(|(v, &xh)| *v = inv[r] * (*v - xh * dot));
    }
    dx
}

/// RMS normalization with a learned per-feature gain.
#[derive(Debug, Clone)]
pub struct RmsNorm {
    pub gain: ParamId,
}

pub struct NormCache<T> {
    xhat: Mat<T>,
    inv: Vec<T>,
}

impl RmsNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, d: usize) -> Self {
        let mut ones = Mat::zeros(1, d);
        ones.fill(T::one());
        Self { gain: store.add(format!("{name}.gain"), ones) }
    }

    pub fn forward<T: Real>(&self, p: &ParamStore<T>, x: &Mat<T>) -> (Mat<T>, NormCache<T>) {
        let (xhat, inv) = normalize(x);
        let gain = &p.get(self.gain).data;
        let mut y = xhat.clone();
        for r in 0..y.rows {
            y.row_mut(r).iter_mut().zip(gain).for_each(|(v, g)| *v *= *g);
        }
        (y, NormCache { xhat, inv })
    }

    pub fn backward<T: Real>(&self, p: &ParamStore<T>, g: &mut Grads<T>, cache: &NormCache<T>, dy: &Mat<T>) -> Mat<T> {
        let gain = &p.get(self.gain).data;
        let gg = g.get_mut(self.gain);
        let mut dxhat = dy.clone();
        for r in 0..dy.rows {
            let xr = cache.xhat.row(r);
            for (j, v) in dxhat.row_mut(r).iter_mut().enumerate() {
                gg.data[j] += *v * xr[j];
                *v *= gain[j];
            }
        }
        normalize_backward(&cache.xhat, &cache.inv, &dxhat)
    }
}

/// `(x / rms(x)) ⊙ (1 + γ(cond))` with `γ` a zero-initialized linear map.
#[derive(Debug, Clone)]
pub struct AdaRmsNorm {
    pub gamma: Linear,
}

pub struct AdaNormCache<T> {
    norm: NormCache<T>,
    scale: Mat<T>,
}

impl AdaRmsNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, name: &str, d: usize) -> Self {
        Self { gamma: Linear::new(store, rng, &format!("{name}.gamma"), d, d, true, true) }
    }

    pub fn forward<T: Real>(&self, p: &ParamStore<T>, x: &Mat<T>, cond: &Mat<T>) -> (Mat<T>, AdaNormCache<T>) {
        let (xhat, inv) = normalize(x);
        let mut scale = self.gamma.forward(p, cond);
        scale.data.iter_mut().for_each(|v| *v += T::one());
        let mut y = xhat.clone();
        y.data.iter_mut().zip(&scale.data).for_each(|(v, s)| *v *= *s);
        (y, AdaNormCache { norm: NormCache { xhat, inv }, scale })
    }

    /// Returns `(∂L/∂x, ∂L/∂cond)`.
    pub fn backward<T: Real>(
        &self, p: &ParamStore<T>, g: &mut Grads<T>, cache: &AdaNormCache<T>, cond: &Mat<T>, dy: &Mat<T>,
    ) -> (Mat<T>, Mat<T>) {
        let mut dscale = dy.clone();
        dscale.data.iter_mut().zip(&cache.norm.xhat.data).for_each(|(v, x)| *v *= *x);
        let dcond = self.gamma.backward(p, g, cond, &dscale);
        let mut dxhat = dy.clone();
        dxhat.data.iter_mut().zip(&cache.scale.data).for_each(|(v, s)| *v *= *s);
        (normalize_backward(&cache.norm.xhat, &cache.norm.inv, &dxhat), dcond)
    }
}
