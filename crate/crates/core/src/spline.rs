//! Spherical-spline scalp interpolation.
//!
//! Observed channel values `v` at unit positions `eᵢ` are fit by
//! `v̂(e) = c₀ + Σᵢ cᵢ g(e·eᵢ)` subject to `Σ cᵢ = 0`, with the Legendre kernel
//! `g(x) = 1/(4π) Σₙ (2n+1)/(n(n+1))^m Pₙ(x)`. The bordered system is
//! factorized once and reused for every time sample.

use nalgebra::{DMatrix, DVector};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::{dot, unit};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplineConfig {
    /// Stiffness exponent `m`.
    pub stiffness: u32,
    pub n_legendre_terms: usize,
    /// Ridge added to the kernel diagonal.
    pub ridge: f64,
}

impl Default for SplineConfig {
    fn default() -> Self {
        Self { stiffness: 4, n_legendre_terms: 50, ridge: 1e-5 }
    }
}

impl SplineConfig {
    fn validate(&self) -> Result<()> {
        if self.stiffness < 2 {
            return Err(Error::invalid(format!("stiffness must be >= 2, got {}", self.stiffness)));
        }
        if self.n_legendre_terms == 0 {
            return Err(Error::invalid("need at least one Legendre term"));
        }
        if !(self.ridge >= 0.0) {
            return Err(Error::invalid(format!("ridge must be non-negative, got {}", self.ridge)));
        }
        Ok(())
    }

    fn series_weights(&self) -> Vec<f64> {
        (1..=self.n_legendre_terms)
            .map(|n| {
                let n = n as f64;
                (2.0 * n + 1.0) / (n * (n + 1.0)).powi(self.stiffness as i32) / (4.0 * PI)
            })
            .collect()
    }
}

fn legendre_series(x: f64, weights: &[f64]) -> f64 {
    let (mut p_prev, mut p) = (1.0, x);
    let mut sum = weights[0] * p;
    for (i, w) in weights.iter().enumerate().skip(1) {
        let n = i as f64;
        let next = ((2.0 * n + 1.0) * x * p - n * p_prev) / (n + 1.0);
        p_prev = p;
        p = next;
        sum += w * p;
    }
    sum
}

/// Spline kernel at cosine `x`.
pub fn legendre_g(x: f64, cfg: &SplineConfig) -> Result<f64> {
    cfg.validate()?;
    if !x.is_finite() || x.abs() > 1.0 + 1e-9 {
        return Err(Error::invalid(format!("cosine {x} outside [-1, 1]")));
    }
    Ok(legendre_series(x.clamp(-1.0, 1.0), &cfg.series_weights()))
}

/// Factorized fit for one set of observed channels.
#[derive(Debug, Clone)]
pub struct SplineSolve {
    pub good_positions: Vec<[f64; 3]>,
    pub gram: DMatrix<f64>,
    /// Weights `cᵢ(t)`, one row per observed channel.
    pub coefficients: DMatrix<f64>,
    /// Constant term `c₀(t)`.
    pub offsets: DVector<f64>,
    cfg: SplineConfig,
}

fn kernel_matrix(rows: &[[f64; 3]], cols: &[[f64; 3]], weights: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| {
        legendre_series(dot(rows[i], cols[j]).clamp(-1.0, 1.0), weights)
    })
}

/// Fits the spline to `good_values[i]` observed at `good_positions[i]`.
/// Positions are projected onto the unit sphere.
pub fn fit(good_positions: &[[f64; 3]], good_values: &[Vec<f64>], cfg: &SplineConfig) -> Result<SplineSolve> {
    cfg.validate()?;
    let n = good_positions.len();
    if n < 3 {
        return Err(Error::InsufficientChannels { needed: 3, got: n });
    }
    if good_values.len() != n {
        return Err(Error::invalid(format!("{n} positions but {} value rows", good_values.len())));
    }
    let t = good_values[0].len();
    if good_values.iter().any(|row| row.len() != t) {
        return Err(Error::invalid("value rows have unequal lengths"));
    }
    if good_positions.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite electrode position"));
    }
    let pos: Vec<[f64; 3]> = good_positions.iter().map(|&p| unit(p)).collect();
    let weights = cfg.series_weights();
    let gram = kernel_matrix(&pos, &pos, &weights);

    let mut system = DMatrix::<f64>::zeros(n + 1, n + 1);
    system.view_mut((0, 0), (n, n)).copy_from(&gram);
    for i in 0..n {
        system[(i, i)] += cfg.ridge;
        system[(i, n)] = 1.0;
        system[(n, i)] = 1.0;
    }
    let mut rhs = DMatrix::<f64>::zeros(n + 1, t);
    for (i, row) in good_values.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            rhs[(i, j)] = v;
        }
    }

    let lu = system.clone().lu();
    let u = lu.u();
    let diag: Vec<f64> = (0..=n).map(|i| u[(i, i)].abs()).collect();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || min <= 1e-12 * max {
        return Err(Error::Singular(format!(
            "spline system pivot ratio {:.3e}; duplicate electrodes or zero ridge",
            if max > 0.0 { min / max } else { 0.0 }
        )));
    }
    let solution = lu.solve(&rhs).ok_or_else(|| Error::Singular("LU solve failed".into()))?;

    let residual = &system * &solution - &rhs;
    let scale = rhs.amax().max(f64::MIN_POSITIVE);
    if residual.amax() > 1e-6 * scale {
        return Err(Error::Singular(format!(
            "spline residual {:.3e} exceeds tolerance",
            residual.amax() / scale
        )));
    }

    Ok(SplineSolve {
        good_positions: pos,
        gram,
        coefficients: solution.rows(0, n).into_owned(),
        offsets: solution.row(n).transpose(),
        cfg: *cfg,
    })
}

/// Evaluates the fitted spline at `targets`; one output row per target.
pub fn interpolate(solve: &SplineSolve, targets: &[[f64; 3]]) -> Vec<Vec<f64>> {
    let targets: Vec<[f64; 3]> = targets.iter().map(|&p| unit(p)).collect();
    let k = kernel_matrix(&targets, &solve.good_positions, &solve.cfg.series_weights());
    let values = k * &solve.coefficients;
    (0..targets.len())
        .map(|i| values.row(i).iter().zip(solve.offsets.iter()).map(|(v, c0)| v + c0).collect())
        .collect()
}

/// Replaces the channels flagged in `dropped` by spline estimates from the rest.
pub fn reconstruct(
    positions: &[[f64; 3]],
    samples: &[Vec<f64>],
    dropped: &[bool],
    cfg: &SplineConfig,
) -> Result<Vec<Vec<f64>>> {
    let (observed, missing): (Vec<usize>, Vec<usize>) = (0..positions.len()).partition(|&c| !dropped[c]);
    let good_pos: Vec<[f64; 3]> = observed.iter().map(|&c| positions[c]).collect();
    let good_val: Vec<Vec<f64>> = observed.iter().map(|&c| samples[c].clone()).collect();
    let solve = fit(&good_pos, &good_val, cfg)?;
    let targets: Vec<[f64; 3]> = missing.iter().map(|&c| positions[c]).collect();
    let estimates = interpolate(&solve, &targets);
    let mut out = samples.to_vec();
    for (c, row) in missing.into_iter().zip(estimates) {
        out[c] = row;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_term_closed_form() {
        let cfg = SplineConfig { stiffness: 2, n_legendre_terms: 1, ridge: 0.0 };
        for x in [-1.0, -0.3, 0.0, 0.5, 1.0] {
            assert!((legendre_g(x, &cfg).unwrap() - 3.0 * x / (16.0 * PI)).abs() < 1e-15);
        }
    }

    #[test]
    fn out_of_range_cosine_rejected() {
        let cfg = SplineConfig::default();
        assert!(legendre_g(1.0 + 1e-6, &cfg).is_err());
        assert!(legendre_g(1.0 + 1e-10, &cfg).is_ok());
        assert!(legendre_g(f64::NAN, &cfg).is_err());
    }

    #[test]
    fn too_few_channels() {
        let pos = [[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]];
        let vals = vec![vec![1.0], vec![2.0]];
        assert!(matches!(
            fit(&pos, &vals, &SplineConfig::default()),
            Err(Error::InsufficientChannels { needed: 3, got: 2 })
        ));
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = SplineConfig { stiffness: 1, ..SplineConfig::default() };
        assert!(legendre_g(0.0, &cfg).is_err());
    }
}
