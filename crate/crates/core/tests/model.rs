mod support;

use eeg_infill::model::attention::{AttnContext, Attention};
use eeg_infill::model::checkpoint::{decode_checkpoint, encode_checkpoint};
use eeg_infill::model::layers::{AdaRmsNorm, Mlp, RmsNorm};
use eeg_infill::model::{rope4d, Layout, Mat, Model, ParamStore, RopeTable};
use eeg_infill::tokens::{Coord4, TokenGrid, ATTENTION_WINDOW, WINDOW};
use eeg_infill::train::{loss_and_grads, AdamW, DropoutPlan, StepBatch};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use support::toy::{grad_check, grad_check_problem, random_grid, randomize, toy_config};

const BASES: [f64; 4] = [100.0, 100.0, 100.0, 10000.0];

fn rand_mat(rows: usize, cols: usize, sd: f64, rng: &mut ChaCha8Rng) -> Mat<f64> {
    Mat::from_vec(rows, cols, (0..rows * cols).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect())
}

fn rand_coord(rng: &mut ChaCha8Rng) -> Coord4 {
    Coord4 { bx: rng.gen_range(0..50), by: rng.gen_range(0..50), bz: rng.gen_range(0..50), m: rng.gen_range(0..40) }
}

fn perturb_all(store: &mut ParamStore<f64>, sd: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in store.tensors_mut() {
        t.data.iter_mut().for_each(|v| *v += sd * rng.sample::<f64, _>(StandardNormal));
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn rope_at_origin_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let q: Vec<f64> = (0..32).map(|_| rng.sample(StandardNormal)).collect();
    assert_eq!(rope4d(&q, Coord4::default(), BASES), q);
}

#[test]
fn rope_is_an_isometry() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let q: Vec<f64> = (0..32).map(|_| rng.sample(StandardNormal)).collect();
        let r = rope4d(&q, rand_coord(&mut rng), BASES);
        assert!((dot(&r, &r).sqrt() - dot(&q, &q).sqrt()).abs() < 1e-6);
    }
}

#[test]
fn rope_scores_depend_only_on_relative_position() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let q: Vec<f64> = (0..16).map(|_| rng.sample(StandardNormal)).collect();
        let k: Vec<f64> = (0..16).map(|_| rng.sample(StandardNormal)).collect();
        let (pi, pj) = (rand_coord(&mut rng), rand_coord(&mut rng));
        let delta: [u16; 4] = [rng.gen_range(0..30), rng.gen_range(0..30), rng.gen_range(0..30), rng.gen_range(0..30)];
        let shift = |p: Coord4| Coord4 { bx: p.bx + delta[0], by: p.by + delta[1], bz: p.bz + delta[2], m: p.m + delta[3] };
        let before = dot(&rope4d(&q, pi, BASES), &rope4d(&k, pj, BASES));
        let after = dot(&rope4d(&q, shift(pi), BASES), &rope4d(&k, shift(pj), BASES));
        assert!((before - after).abs() < 1e-5, "{before} vs {after}");
    }
}

#[test]
fn rope_axes_occupy_contiguous_groups() {
    let mut q = vec![0.0; 16];
    q[4] = 1.0; // first pair of the `by` group (dims 4..8)
    let moved = rope4d(&q, Coord4 { bx: 7, by: 0, bz: 3, m: 5 }, BASES);
    assert_eq!(moved, q, "other axes must not rotate the by group");
    let turned = rope4d(&q, Coord4 { by: 1, ..Coord4::default() }, BASES);
    assert!((turned[4] - 1f64.cos()).abs() < 1e-15 && (turned[5] - 1f64.sin()).abs() < 1e-15);
}

#[test]
fn token_encoder_maps_zero_windows_to_one_vector_and_matches_jacobian() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::<f64>::new(4);
    let d = 16;
    let mlp = Mlp::new(&mut store, &mut rng, "embed", WINDOW, 4 * d, d, false);
    perturb_all(&mut store, 0.3, 5);
    let zeros = Mat::zeros(3, WINDOW);
    let (y, _) = mlp.forward(&store, &zeros);
    assert_eq!((y.rows, y.cols), (3, d));
    assert_eq!(y.row(0), y.row(2));

    let x = rand_mat(1, WINDOW, 1.0, &mut rng);
    let (_, cache) = mlp.forward(&store, &x);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for j in 0..d {
        let mut dy = Mat::zeros(1, d);
        dy.data[j] = 1.0;
        let mut g = store.zero_grads();
        let analytic = mlp.backward(&store, &mut g, &cache, &dy);
        for i in 0..WINDOW {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp.data[i] += h;
            xm.data[i] -= h;
            let numeric = (mlp.forward(&store, &xp).0.data[j] - mlp.forward(&store, &xm).0.data[j]) / (2.0 * h);
            let a = analytic.data[i];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8));
        }
    }
    assert!(worst < 1e-4, "worst relative Jacobian error {worst}");
}

#[test]
fn ada_rmsnorm_starts_as_plain_rmsnorm_and_handles_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut store = ParamStore::<f64>::new(6);
    let ada = AdaRmsNorm::new(&mut store, &mut rng, "ada", 8);
    let plain = RmsNorm::new(&mut store, "plain", 8);
    let x = rand_mat(4, 8, 2.0, &mut rng);
    let cond = rand_mat(4, 8, 1.0, &mut rng);
    assert_eq!(ada.forward(&store, &x, &cond).0, plain.forward(&store, &x).0);
    let (zero_out, _) = ada.forward(&store, &Mat::zeros(2, 8), &rand_mat(2, 8, 1.0, &mut rng));
    assert!(zero_out.data.iter().all(|v| v.abs() < 1e-3));
}

#[test]
fn ada_rmsnorm_condition_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store = ParamStore::<f64>::new(7);
    let ada = AdaRmsNorm::new(&mut store, &mut rng, "ada", 8);
    perturb_all(&mut store, 0.5, 8);
    let x = rand_mat(3, 8, 1.0, &mut rng);
    let cond = rand_mat(3, 8, 1.0, &mut rng);
    let w = rand_mat(3, 8, 1.0, &mut rng);
    let loss = |c: &Mat<f64>| dot(&ada.forward(&store, &x, c).0.data, &w.data);
    let (_, cache) = ada.forward(&store, &x, &cond);
    let mut g = store.zero_grads();
    let (_, dcond) = ada.backward(&store, &mut g, &cache, &cond, &w);
    for i in 0..cond.data.len() {
        let (mut p, mut m) = (cond.clone(), cond.clone());
        p.data[i] += 1e-5;
        m.data[i] -= 1e-5;
        let numeric = (loss(&p) - loss(&m)) / 2e-5;
        let rel = (dcond.data[i] - numeric).abs() / numeric.abs().max(1e-8);
        assert!(rel < 1e-4, "coordinate {i}: {} vs {numeric}", dcond.data[i]);
    }
}

#[test]
fn single_token_attention_returns_the_projected_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut store = ParamStore::<f64>::new(9);
    let attn = Attention::new(&mut store, &mut rng, "attn", 2, 8);
    perturb_all(&mut store, 0.2, 10);
    let x = rand_mat(1, 16, 1.0, &mut rng);
    let ctx = AttnContext { segments: vec![0..1], window: ATTENTION_WINDOW, rope: RopeTable::new(&[Coord4 { bx: 3, by: 9, bz: 20, m: 2 }], 8, BASES) };
    let (y, _) = attn.forward(&store, &x, &ctx);
    let expected = attn.wo.forward(&store, &attn.wv.forward(&store, &x));
    for (a, b) in y.data.iter().zip(&expected.data) {
        assert!((a - b).abs() < 1e-12);
    }
}

fn active_model(seed: u64) -> Model<f64> {
    let mut m = Model::<f64>::new(toy_config(), seed).unwrap();
    randomize(&mut m, 0.1, seed + 100);
    m
}

/// Velocity predictions per grid for a fixed decoder input, time and masks.
fn predict(model: &Model<f64>, grids: &[TokenGrid], masks: &[Vec<bool>], t: f64) -> Vec<TokenGrid> {
    let masked: Vec<TokenGrid> = grids.iter().zip(masks).map(|(g, m)| g.with_dropout(m)).collect();
    let layout = Layout::new(&masked, model.cfg.register_stride).unwrap();
    let (latent, _) = model.encode(&layout, &layout.encoder_tokens(&masked).unwrap()).unwrap();
    let x_t = layout.decoder_tokens::<f64>(grids).unwrap();
    let (v, _) = model.decode(&layout, &x_t, &vec![t; grids.len()], &latent).unwrap();
    layout.to_grids(&v, grids).unwrap()
}

#[test]
fn encoder_output_covers_the_interleaved_sequence() {
    let model = active_model(11);
    let g = random_grid(3, 2, 12);
    let layout = Layout::new(std::slice::from_ref(&g), 1).unwrap();
    let (latent, _) = model.encode(&layout, &layout.encoder_tokens(&[g]).unwrap()).unwrap();
    assert_eq!((latent.rows, latent.cols), (12, 32));
    assert!(model.encode(&layout, &Mat::zeros(11, WINDOW)).is_err());
}

#[test]
fn dropped_channel_positions_still_reach_the_latent() {
    let model = active_model(13);
    let g = random_grid(4, 2, 14);
    let mask = [false, true, false, false];
    let encode = |grid: &TokenGrid| {
        let masked = grid.with_dropout(&mask);
        let layout = Layout::new(std::slice::from_ref(&masked), 1).unwrap();
        model.encode(&layout, &layout.encoder_tokens(&[masked]).unwrap()).unwrap().0
    };
    let base = encode(&g);
    let mut other_data = g.clone();
    other_data.window_mut(1, 0).iter_mut().for_each(|v| *v += 1.0);
    assert_eq!(encode(&other_data), base, "hidden data must not leak");
    let mut moved = g.clone();
    moved.positions[1] = [0.05, -0.06, 0.02];
    let diff: f64 = encode(&moved).data.iter().zip(&base.data).map(|(a, b)| (a - b).abs()).sum();
    assert!(diff > 0.0);
}

#[test]
fn decoder_shape_time_range_and_latent_sensitivity() {
    let model = active_model(15);
    let g = random_grid(3, 2, 16);
    let layout = Layout::new(std::slice::from_ref(&g), 1).unwrap();
    let x_t = layout.decoder_tokens::<f64>(std::slice::from_ref(&g)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let lat_a = rand_mat(layout.enc_len(), 32, 1.0, &mut rng);
    let lat_b = rand_mat(layout.enc_len(), 32, 1.0, &mut rng);
    let (va, _) = model.decode(&layout, &x_t, &[0.3], &lat_a).unwrap();
    let (vb, _) = model.decode(&layout, &x_t, &[0.3], &lat_b).unwrap();
    assert_eq!((va.rows, va.cols), (6, WINDOW));
    assert!(va.data.iter().zip(&vb.data).map(|(a, b)| (a - b).abs()).sum::<f64>() > 0.0);
    assert!(model.decode(&layout, &x_t, &[1.5], &lat_a).is_err());
    assert!(model.decode(&layout, &x_t, &[-0.1], &lat_a).is_err());
}

#[test]
fn zero_initialized_head_predicts_zero_velocity() {
    let model = Model::<f64>::new(toy_config(), 18).unwrap();
    let g = random_grid(2, 2, 19);
    let v = predict(&model, &[g], &[vec![false, true]], 0.5);
    assert!(v[0].to_rows().iter().flatten().all(|x| *x == 0.0));
}

#[test]
fn channel_permutation_permutes_outputs() {
    let model = active_model(20);
    let g = random_grid(6, 3, 21);
    let mask = vec![false, true, false, false, true, false];
    let perm = [4usize, 0, 5, 2, 1, 3];
    let rows = g.to_rows();
    let permuted = TokenGrid::from_rows(
        &perm.iter().map(|&p| rows[p].clone()).collect::<Vec<_>>(),
        perm.iter().map(|&p| g.positions[p]).collect(),
        vec![false; 6],
    )
    .unwrap();
    let pmask: Vec<bool> = perm.iter().map(|&p| mask[p]).collect();
    let base = predict(&model, &[g], &[mask], 0.4).remove(0);
    let out = predict(&model, &[permuted], &[pmask], 0.4).remove(0);
    let mut worst: f64 = 0.0;
    for (c, &p) in perm.iter().enumerate() {
        for (a, b) in out.channel(c).iter().zip(base.channel(p)) {
            worst = worst.max((a - b).abs());
        }
    }
    assert!(worst < 1e-5, "max deviation {worst}");
}

#[test]
fn packed_samples_do_not_interact() {
    let model = active_model(22);
    let a = random_grid(3, 2, 23);
    let b = random_grid(4, 2, 24);
    let masks = vec![vec![false, true, false], vec![true, false, false, false]];
    let before = predict(&model, &[a.clone(), b.clone()], &masks, 0.6);
    let mut a2 = a.clone();
    a2.window_mut(0, 1).iter_mut().for_each(|v| *v *= -3.0);
    a2.positions[2] = [0.0, 0.08, 0.03];
    let after = predict(&model, &[a2, b], &masks, 0.6);
    assert_eq!(after[1], before[1], "sample B must be bit-identical");
    assert_ne!(after[0], before[0]);
}

#[test]
fn forward_is_deterministic_for_a_seed() {
    let a = active_model(25);
    let b = active_model(25);
    assert_eq!(a.params, b.params);
    let g = random_grid(3, 2, 26);
    let m = vec![vec![false, false, true]];
    assert_eq!(predict(&a, &[g.clone()], &m, 0.2), predict(&b, &[g], &m, 0.2));
    assert_ne!(Model::<f64>::new(toy_config(), 1).unwrap().params, Model::<f64>::new(toy_config(), 2).unwrap().params);
}

#[test]
fn non_finite_activations_name_the_layer() {
    let mut model = active_model(27);
    let id = model.params.id_of("encoder.block1.attn.v.weight").unwrap();
    model.params.get_mut(id).data[0] = f64::NAN;
    let g = random_grid(2, 2, 28);
    let layout = Layout::new(std::slice::from_ref(&g), 1).unwrap();
    let err = match model.encode(&layout, &layout.encoder_tokens(&[g]).unwrap()) {
        Err(e) => e,
        Ok(_) => panic!("NaN parameters must fail the forward pass"),
    };
    assert!(err.to_string().contains("encoder layer 1"), "{err}");
}

#[test]
fn one_training_step_leaves_everything_finite() {
    let mut model = Model::<f32>::new(toy_config(), 29).unwrap();
    let grids = vec![random_grid(5, 4, 30), random_grid(3, 4, 31)];
    let plans = vec![DropoutPlan::from_mask(vec![false, true, false, true, false]).unwrap(), DropoutPlan::none(3)];
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let batch = StepBatch::<f32>::new(&grids, &plans, 1, 32, 0.1, 16, 0.1, &mut rng).unwrap();
    let mut grads = model.params.zero_grads();
    loss_and_grads(&model, &batch, Some(&mut grads)).unwrap();
    assert!(grads.is_finite());
    let mut opt = AdamW::new(&model.params, 0.9, 0.95, 0.01);
    opt.step(&mut model.params, &grads, 1e-3);
    assert!(model.params.first_non_finite().is_none());
}

#[test]
fn full_model_gradients_match_finite_differences() {
    let (mut model, batch) = grad_check_problem(11);
    let report = grad_check(&mut model, &batch, 10, 1e-5, 5);
    assert!(report.worst_rel < 1e-3, "worst relative error {:.3e} at {}", report.worst_rel, report.worst_name);
}

#[test]
fn checkpoints_round_trip_and_reject_bad_magic() {
    let model = active_model(33).cast::<f32>();
    let bytes = encode_checkpoint(&model, 17, &[0.5, 0.25]).unwrap();
    let ck = decode_checkpoint(&bytes).unwrap();
    assert_eq!(ck.model.params, model.params);
    assert_eq!(ck.model.cfg, model.cfg);
    assert_eq!((ck.step, ck.loss_history.clone()), (17, vec![0.5, 0.25]));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(decode_checkpoint(&bad).is_err());
    assert!(decode_checkpoint(&bytes[..bytes.len() - 4]).is_err());
}
