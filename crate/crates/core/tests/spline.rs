mod support;

use eeg_infill::geometry::unit;
use eeg_infill::montage::standard_64;
use eeg_infill::spline::{fit, interpolate, legendre_g, reconstruct, SplineConfig};
use eeg_infill::Error;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use support::dd::{self, Dd};

fn random_direction(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample::<f64, _>(StandardNormal).abs()];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-6 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// Field of three broad bumps with sinusoidal time courses.
fn smooth_field(positions: &[[f64; 3]], t: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let sources: Vec<([f64; 3], f64, f64)> =
        (0..3).map(|_| (random_direction(rng), rng.gen_range(4.0..20.0), rng.gen_range(0.0..6.28))).collect();
    positions
        .iter()
        .map(|&p| {
            let e = unit(p);
            (0..t)
                .map(|i| {
                    sources
                        .iter()
                        .map(|(u, f, ph)| {
                            let w = (2.0 * (e[0] * u[0] + e[1] * u[1] + e[2] * u[2] - 1.0)).exp();
                            w * (f * i as f64 / 256.0 * 6.283185307179586 + ph).sin()
                        })
                        .sum()
                })
                .collect()
        })
        .collect()
}

fn nmse(est: &[Vec<f64>], truth: &[Vec<f64>]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (a, b) in est.iter().zip(truth) {
        for (x, y) in a.iter().zip(b) {
            num += (x - y).powi(2);
            den += y * y;
        }
    }
    num / den
}

#[test]
fn g_at_one_matches_direct_sum() {
    let cfg = SplineConfig::default();
    let mut sum = Dd::ZERO;
    for n in 1..=50u32 {
        let nf = Dd::from(n as f64);
        sum = sum + (Dd::from(2.0) * nf + Dd::ONE) / (nf * (nf + Dd::ONE)).powi(4);
    }
    let expected = (sum / (Dd::PI * Dd::from(4.0))).to_f64();
    let got = legendre_g(1.0, &cfg).unwrap();
    assert!(((got - expected) / expected).abs() < 1e-14, "{got} vs {expected}");
    assert!(got > 0.0);
    assert!((dd::legendre_g(Dd::from(1.0), 4, 50).to_f64() - expected).abs() < 1e-16);
}

#[test]
fn g_is_monotone() {
    let cfg = SplineConfig::default();
    let mut prev = legendre_g(-1.0, &cfg).unwrap();
    for i in 1..=20000 {
        let x = -1.0 + 2.0 * i as f64 / 20000.0;
        let g = legendre_g(x, &cfg).unwrap();
        assert!(g > prev, "not increasing at {x}");
        prev = g;
    }
}

#[test]
fn constants_are_reproduced() {
    let layout = standard_64();
    let pos = &layout.positions()[..20];
    let vals: Vec<Vec<f64>> = (0..20).map(|_| vec![3.25; 8]).collect();
    let solve = fit(pos, &vals, &SplineConfig::default()).unwrap();
    assert!(solve.coefficients.amax() < 1e-8);
    assert!(solve.offsets.iter().all(|c| (c - 3.25).abs() < 1e-8));
    for row in interpolate(&solve, &layout.positions()[20..]) {
        assert!(row.iter().all(|v| (v - 3.25).abs() < 1e-8));
    }
}

#[test]
fn duplicate_positions_are_singular_without_ridge() {
    let layout = standard_64();
    let mut pos = layout.positions()[..6].to_vec();
    pos[3] = pos[1];
    let vals: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64; 4]).collect();
    let cfg = SplineConfig { ridge: 0.0, ..SplineConfig::default() };
    assert!(matches!(fit(&pos, &vals, &cfg), Err(Error::Singular(_))));
}

#[test]
fn coefficients_match_high_precision_oracle() {
    let layout = standard_64();
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let idx: Vec<usize> = (0..64).collect::<Vec<_>>().choose_multiple(&mut rng, 16).copied().collect();
    let pos: Vec<[f64; 3]> = idx.iter().map(|&i| layout.positions()[i]).collect();
    let vals: Vec<Vec<f64>> = (0..16).map(|_| (0..64).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let cfg = SplineConfig::default();
    let solve = fit(&pos, &vals, &cfg).unwrap();
    let oracle = dd::fit(&pos, &vals, 4, 50, 1e-5);
    let scale = oracle.coefficients.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    for i in 0..16 {
        for t in 0..64 {
            let err = (solve.coefficients[(i, t)] - oracle.coefficients[i][t]).abs() / scale;
            assert!(err < 1e-6, "coefficient ({i},{t}) relative error {err}");
        }
    }
    for t in 0..64 {
        let col_sum: f64 = (0..16).map(|i| solve.coefficients[(i, t)]).sum();
        assert!(col_sum.abs() < 1e-8);
    }
    let gram = &solve.gram;
    assert!((gram - gram.transpose()).amax() == 0.0);
}

#[test]
fn coincident_target_reproduces_electrode() {
    let layout = standard_64();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pos = &layout.positions()[..24];
    let vals: Vec<Vec<f64>> = (0..24).map(|_| (0..32).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let cfg = SplineConfig { ridge: 0.0, ..SplineConfig::default() };
    let solve = fit(pos, &vals, &cfg).unwrap();
    let out = interpolate(&solve, &[pos[7]]);
    for (a, b) in out[0].iter().zip(&vals[7]) {
        assert!((a - b).abs() < 1e-5, "{a} vs {b}");
    }
}

#[test]
fn mirrored_sources_cancel_on_midline() {
    let layout = standard_64();
    let p = |l: &str| layout.positions()[layout.index_of(l).unwrap()];
    let pos = [p("C3"), p("C4"), p("Cz"), p("F3"), p("F4"), p("P3"), p("P4")];
    let s: Vec<f64> = (0..128).map(|i| (i as f64 * 0.21).sin() + 0.3).collect();
    let neg: Vec<f64> = s.iter().map(|v| -v).collect();
    let zero = vec![0.0; 128];
    let vals = vec![s.clone(), neg.clone(), zero.clone(), s.clone(), neg.clone(), s.clone(), neg];
    let solve = fit(&pos, &vals, &SplineConfig::default()).unwrap();
    let out = interpolate(&solve, &[p("Fz"), p("Pz")]);
    let norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
    for row in out {
        let mag = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(mag < 1e-6 * norm, "midline magnitude {mag}");
    }
}

#[test]
fn smooth_field_with_twenty_percent_dropped() {
    let layout = standard_64();
    let mut rng = ChaCha8Rng::seed_from_u64(64);
    let truth = smooth_field(layout.positions(), 256, &mut rng);
    let mut dropped = vec![false; 64];
    for &c in (0..64).collect::<Vec<_>>().choose_multiple(&mut rng, 13) {
        dropped[c] = true;
    }
    let recon = reconstruct(layout.positions(), &truth, &dropped, &SplineConfig::default()).unwrap();
    let est: Vec<Vec<f64>> = (0..64).filter(|&c| dropped[c]).map(|c| recon[c].clone()).collect();
    let tru: Vec<Vec<f64>> = (0..64).filter(|&c| dropped[c]).map(|c| truth[c].clone()).collect();
    let e = nmse(&est, &tru);
    assert!(e < 0.1, "nmse {e}");
}

#[test]
fn error_grows_with_dropout_on_average() {
    let layout = standard_64();
    let cfg = SplineConfig::default();
    let rates = [0.2, 0.5, 0.75, 0.9];
    let mut means = [0.0; 4];
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let truth = smooth_field(layout.positions(), 64, &mut rng);
        for (k, rate) in rates.iter().enumerate() {
            let n_drop = (rate * 64.0_f64).round() as usize;
            let mut dropped = vec![false; 64];
            for &c in (0..64).collect::<Vec<_>>().choose_multiple(&mut rng, n_drop) {
                dropped[c] = true;
            }
            let recon = reconstruct(layout.positions(), &truth, &dropped, &cfg).unwrap();
            let est: Vec<Vec<f64>> = (0..64).filter(|&c| dropped[c]).map(|c| recon[c].clone()).collect();
            let tru: Vec<Vec<f64>> = (0..64).filter(|&c| dropped[c]).map(|c| truth[c].clone()).collect();
            means[k] += nmse(&est, &tru) / 50.0;
        }
    }
    for k in 1..4 {
        assert!(means[k] >= means[k - 1], "mean NMSE not monotone: {means:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn affine_equivariance(a in -5.0f64..5.0, b in -5.0f64..5.0, seed in 0u64..1000) {
        prop_assume!(a.abs() > 1e-3);
        let layout = standard_64();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pos = &layout.positions()[..12];
        let vals: Vec<Vec<f64>> = (0..12).map(|_| (0..16).map(|_| rng.sample(StandardNormal)).collect()).collect();
        let shifted: Vec<Vec<f64>> = vals.iter().map(|r| r.iter().map(|v| a * v + b).collect()).collect();
        let cfg = SplineConfig::default();
        let targets = &layout.positions()[12..20];
        let base = interpolate(&fit(pos, &vals, &cfg).unwrap(), targets);
        let moved = interpolate(&fit(pos, &shifted, &cfg).unwrap(), targets);
        for (r0, r1) in base.iter().zip(&moved) {
            for (x, y) in r0.iter().zip(r1) {
                prop_assert!((a * x + b - y).abs() < 1e-8 * (1.0 + y.abs()));
            }
        }
    }

    #[test]
    fn permutation_invariance(seed in 0u64..1000) {
        let layout = standard_64();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pos: Vec<[f64; 3]> = layout.positions()[..16].to_vec();
        let vals: Vec<Vec<f64>> = (0..16).map(|_| (0..16).map(|_| rng.sample(StandardNormal)).collect()).collect();
        let mut order: Vec<usize> = (0..16).collect();
        order.shuffle(&mut rng);
        let pos_p: Vec<[f64; 3]> = order.iter().map(|&i| pos[i]).collect();
        let vals_p: Vec<Vec<f64>> = order.iter().map(|&i| vals[i].clone()).collect();
        let cfg = SplineConfig::default();
        let targets = &layout.positions()[16..24];
        let a = interpolate(&fit(&pos, &vals, &cfg).unwrap(), targets);
        let b = interpolate(&fit(&pos_p, &vals_p, &cfg).unwrap(), targets);
        for (r0, r1) in a.iter().zip(&b) {
            for (x, y) in r0.iter().zip(r1) {
                prop_assert!((x - y).abs() < 1e-10);
            }
        }
    }
}
