//! Rectified-flow interpolation, the MMD latent regularizer and adaptive loss weighting.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{Mat, Real};

/// One noisy training pair on the linear path between data and noise.
#[derive(Debug, Clone)]
pub struct FlowSample<T> {
    pub x0: Mat<T>,
    pub eps: Mat<T>,
    pub t: f64,
    pub x_t: Mat<T>,
    pub v_target: Mat<T>,
}

impl<T: Real> FlowSample<T> {
    /// `x_t = (1−t)·x0 + t·ε`, `v = ε − x0`. The endpoints are exact.
    pub fn new(x0: Mat<T>, eps: Mat<T>, t: f64) -> Self {
        let x_t = interpolate(&x0, &eps, t);
        let v_target = Mat::from_vec(x0.rows, x0.cols, eps.data.iter().zip(&x0.data).map(|(e, x)| *e - *x).collect());
        Self { x0, eps, t, x_t, v_target }
    }
}

pub fn interpolate<T: Real>(x0: &Mat<T>, eps: &Mat<T>, t: f64) -> Mat<T> {
    let data = if t == 0.0 {
        x0.data.clone()
    } else if t == 1.0 {
        eps.data.clone()
    } else {
        let (a, b) = (T::c(1.0 - t), T::c(t));
        x0.data.iter().zip(&eps.data).map(|(x, e)| a * *x + b * *e).collect()
    };
    Mat::from_vec(x0.rows, x0.cols, data)
}

/// Gaussian noise with standard deviation `sd`.
pub fn gaussian<T: Real, R: Rng>(rows: usize, cols: usize, sd: f64, rng: &mut R) -> Mat<T> {
    let data = (0..rows * cols).map(|_| T::c(sd * rng.sample::<f64, _>(StandardNormal))).collect();
    Mat::from_vec(rows, cols, data)
}

/// Biased squared MMD between the rows of `x` and `y` with an RBF kernel
/// whose bandwidth is the median pairwise distance of the joint sample.
/// Returns the value and its exact gradient with respect to `x`, including
/// the dependence of the bandwidth on `x`.
pub fn mmd_squared<T: Real>(x: &Mat<T>, y: &Mat<T>) -> Result<(f64, Mat<T>)> {
    let n = x.rows;
    if n < 2 || y.rows != n || x.cols != y.cols {
        return Err(Error::invalid("MMD needs two equal-size samples of at least 2 vectors"));
    }
    let d = x.cols;
    let z: Vec<f64> = x.data.iter().chain(&y.data).map(|v| v.f64()).collect();
    let m = 2 * n;
    let row = |i: usize| &z[i * d..(i + 1) * d];
    let mut d2 = vec![0.0; m * m];
    for i in 0..m {
        for j in i + 1..m {
            let s: f64 = row(i).iter().zip(row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            d2[i * m + j] = s;
            d2[j * m + i] = s;
        }
    }
    let mut pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))).collect();
    let mid = pairs.len() / 2;
    let key = |p: &(usize, usize)| d2[p.0 * m + p.1];
    let mut median_pairs = Vec::new();
    let (_, upper, _) = pairs.select_nth_unstable_by(mid, |a, b| key(a).total_cmp(&key(b)));
    let upper = *upper;
    let h = if pairs.len() % 2 == 1 {
        median_pairs.push((upper, 1.0));
        key(&upper).sqrt()
    } else {
        let lower = *pairs[..mid].iter().max_by(|a, b| key(a).total_cmp(&key(b))).expect("non-empty");
        median_pairs.push((upper, 0.5));
        median_pairs.push((lower, 0.5));
        0.5 * (key(&upper).sqrt() + key(&lower).sqrt())
    };
    let mut grad = Mat::zeros(n, d);
    if h < 1e-12 {
        return Ok((0.0, grad));
    }
    let inv_n2 = 1.0 / (n * n) as f64;
    let coef = |i: usize, j: usize| if (i < n) == (j < n) { inv_n2 } else { -inv_n2 };
    let h2 = h * h;
    let mut value = 0.0;
    let mut dh = 0.0;
    let mut gz = vec![0.0; n * d];
    for i in 0..m {
        for j in 0..m {
            let k = (-d2[i * m + j] / (2.0 * h2)).exp();
            let ck = coef(i, j) * k;
            value += ck;
            dh += ck * d2[i * m + j] / (h2 * h);
            if i < n && i != j {
                let w = -2.0 * ck / h2;
                for c in 0..d {
                    gz[i * d + c] += w * (z[i * d + c] - z[j * d + c]);
                }
            }
        }
    }
    for ((p, q), omega) in median_pairs {
        let dist = key(&(p, q)).sqrt();
        if dist == 0.0 {
            continue;
        }
        for c in 0..d {
            let u = omega * dh * (z[p * d + c] - z[q * d + c]) / dist;
            if p < n {
                gz[p * d + c] += u;
            }
            if q < n {
                gz[q * d + c] -= u;
            }
        }
    }
    grad.data.iter_mut().zip(&gz).for_each(|(g, v)| *g = T::c(*v));
    Ok((value.max(0.0), grad))
}

/// Squared MMD of `latents` against an equal-size standard Gaussian reference.
pub fn mmd_loss<T: Real, R: Rng>(latents: &Mat<T>, rng: &mut R) -> Result<(f64, Mat<T>)> {
    if latents.rows < 2 {
        return Err(Error::invalid("MMD needs a batch of at least 2 latent vectors"));
    }
    let reference = gaussian(latents.rows, latents.cols, 1.0, rng);
    mmd_squared(latents, &reference)
}

pub const ALW_MIN: f64 = 0.1;
pub const ALW_MAX: f64 = 10.0;

/// Per-timestep-bin loss EMA used to equalize the loss scale across `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveWeights {
    ema: Vec<Option<f64>>,
    decay: f64,
}

impl AdaptiveWeights {
    pub fn new(bins: usize, decay: f64) -> Self {
        assert!(bins > 0 && (0.0..1.0).contains(&decay));
        Self { ema: vec![None; bins], decay }
    }

    pub fn from_ema(ema: Vec<f64>, decay: f64) -> Self {
        Self { ema: ema.into_iter().map(Some).collect(), decay }
    }

    pub fn bin(&self, t: f64) -> usize {
        ((t * self.ema.len() as f64).floor().max(0.0) as usize).min(self.ema.len() - 1)
    }

    /// `mean(EMA) / EMA(bin(t))` clamped to `[0.1, 10]`; 1 while the bin is unobserved.
    pub fn weight(&self, t: f64) -> f64 {
        let seen: Vec<f64> = self.ema.iter().flatten().copied().collect();
        match self.ema[self.bin(t)] {
            Some(e) if e > 0.0 => {
                let mean = seen.iter().sum::<f64>() / seen.len() as f64;
                (mean / e).clamp(ALW_MIN, ALW_MAX)
            }
            _ => 1.0,
        }
    }

    pub fn update(&mut self, t: f64, loss: f64) {
        if !loss.is_finite() {
            return;
        }
        let b = self.bin(t);
        self.ema[b] = Some(match self.ema[b] {
            Some(e) => self.decay * e + (1.0 - self.decay) * loss,
            None => loss,
        });
    }
}
