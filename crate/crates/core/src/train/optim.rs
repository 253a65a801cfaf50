//! AdamW with decoupled weight decay and the cosine learning-rate schedule.

use crate::model::{Grads, Mat, ParamStore, Real};

#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Mat<T>>,
    v: Vec<Mat<T>>,
}

impl<T: Real> AdamW<T> {
    pub fn new(params: &ParamStore<T>, beta1: f64, beta2: f64, weight_decay: f64) -> Self {
        let zeros = || params.tensors().iter().map(|t| Mat::zeros(t.rows, t.cols)).collect();
        Self { beta1, beta2, eps: 1e-8, weight_decay, step: 0, m: zeros(), v: zeros() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &Grads<T>, lr: f64) {
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for (i, p) in params.tensors_mut().iter_mut().enumerate() {
            let g = &grads.tensors[i].data;
            let m = &mut self.m[i].data;
            let v = &mut self.v[i].data;
            for j in 0..p.data.len() {
                let gj = g[j].f64();
                let mj = b1 * m[j].f64() + (1.0 - b1) * gj;
                let vj = b2 * v[j].f64() + (1.0 - b2) * gj * gj;
                m[j] = T::c(mj);
                v[j] = T::c(vj);
                let pj = p.data[j].f64();
                let update = (mj / c1) / ((vj / c2).sqrt() + self.eps) + self.weight_decay * pj;
                p.data[j] = T::c(pj - lr * update);
            }
        }
    }
}

/// Cosine annealing from `lr_max` at step 0 to `lr_min` at `total_steps`.
pub fn cosine_lr(step: usize, total_steps: usize, lr_max: f64, lr_min: f64) -> f64 {
    let frac = (step.min(total_steps) as f64) / total_steps.max(1) as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * frac).cos())
}

/// Cosine schedule with a linear warmup over the first `warmup_frac` of steps.
pub fn lr_at(step: usize, total_steps: usize, lr_max: f64, lr_min: f64, warmup_frac: f64) -> f64 {
    let warmup = (warmup_frac * total_steps as f64).ceil() as usize;
    if step < warmup {
        lr_max * (step + 1) as f64 / warmup as f64
    } else {
        cosine_lr(step, total_steps, lr_max, lr_min)
    }
}
