//! Small models, grids and a central-difference gradient checker.

use eeg_infill::model::{Model, ModelConfig, Real};
use eeg_infill::tokens::{TokenGrid, WINDOW};
use eeg_infill::train::{loss_and_grads, DropoutPlan, StepBatch};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn toy_config() -> ModelConfig {
    ModelConfig {
        d_model: 32,
        n_heads: 4,
        head_dim: 8,
        n_layers_enc: 2,
        n_layers_dec: 2,
        mlp_ratio: 2,
        ..ModelConfig::default()
    }
}

/// Random `c`-channel, `m`-window grid at scalp-like positions.
pub fn random_grid(c: usize, m: usize, seed: u64) -> TokenGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..c)
        .map(|_| (0..m * WINDOW).map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let positions = (0..c)
        .map(|_| {
            let th: f64 = rng.gen_range(0.0..1.4);
            let ph: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            [0.09 * th.sin() * ph.cos(), 0.09 * th.sin() * ph.sin(), 0.09 * th.cos()]
        })
        .collect();
    TokenGrid::from_rows(&rows, positions, vec![false; c]).unwrap()
}

/// Adds N(0, sd²) to every parameter so zero-initialized maps carry gradient signal.
pub fn randomize<T: Real>(model: &mut Model<T>, sd: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in model.params.tensors_mut() {
        for v in &mut t.data {
            *v += T::c(sd * rng.sample::<f64, _>(StandardNormal));
        }
    }
}

pub struct GradCheck {
    pub checked: usize,
    pub worst_rel: f64,
    pub worst_name: String,
}

/// Compares analytic gradients of the full training loss with central
/// differences on `per_tensor` random coordinates of every tensor.
pub fn grad_check(model: &mut Model<f64>, batch: &StepBatch<f64>, per_tensor: usize, h: f64, seed: u64) -> GradCheck {
    let mut grads = model.params.zero_grads();
    loss_and_grads(model, batch, Some(&mut grads)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = GradCheck { checked: 0, worst_rel: 0.0, worst_name: String::new() };
    let names: Vec<String> = model.params.names().to_vec();
    for (ti, name) in names.iter().enumerate() {
        let len = model.params.tensors()[ti].data.len();
        for _ in 0..per_tensor.min(len) {
            let j = rng.gen_range(0..len);
            let orig = model.params.tensors()[ti].data[j];
            model.params.tensors_mut()[ti].data[j] = orig + h;
            let plus = loss_and_grads(model, batch, None).unwrap().total;
            model.params.tensors_mut()[ti].data[j] = orig - h;
            let minus = loss_and_grads(model, batch, None).unwrap().total;
            model.params.tensors_mut()[ti].data[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let analytic = grads.tensors[ti].data[j];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-7);
            out.checked += 1;
            if rel > out.worst_rel {
                out.worst_rel = rel;
                out.worst_name = format!("{name}[{j}] analytic {analytic:.6e} numeric {numeric:.6e}");
            }
        }
    }
    out
}

/// The toy gradient-check problem: C = 2, M = 2, one channel dropped.
pub fn grad_check_problem(seed: u64) -> (Model<f64>, StepBatch<f64>) {
    let cfg = toy_config();
    let mut model = Model::<f64>::new(cfg.clone(), seed).unwrap();
    randomize(&mut model, 0.2, seed + 1);
    let grids = vec![random_grid(2, 2, seed + 2), random_grid(2, 2, seed + 3)];
    let plans = vec![DropoutPlan::from_mask(vec![false, true]).unwrap(), DropoutPlan::none(2)];
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 4);
    let mut batch = StepBatch::new(&grids, &plans, cfg.register_stride, cfg.d_model, 0.1, 8, 0.1, &mut rng).unwrap();
    batch.weights = vec![0.7, 1.3];
    (model, batch)
}
