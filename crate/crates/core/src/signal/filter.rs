//! Butterworth IIR design as second-order sections and zero-phase application.
//!
//! Design follows the analog-prototype route: Butterworth poles, frequency
//! transformation (highpass or bandstop) at prewarped edges, bilinear
//! transform, then pairing of conjugate roots into biquads.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// One biquad: `b0 + b1 z⁻¹ + b2 z⁻²` over `1 + a1 z⁻¹ + a2 z⁻²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

/// A cascade of biquads designed for a specific sampling rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Sos {
    pub sections: Vec<Biquad>,
    pub sfreq: f64,
}

struct Zpk {
    zeros: Vec<Complex64>,
    poles: Vec<Complex64>,
    gain: f64,
}

fn butter_prototype(order: usize) -> Zpk {
    let n = order as f64;
    let poles = (0..order)
        .map(|k| {
            let m = -(order as f64) + 1.0 + 2.0 * k as f64;
            -Complex64::from_polar(1.0, PI * m / (2.0 * n))
        })
        .collect();
    Zpk { zeros: Vec::new(), poles, gain: 1.0 }
}

fn prod_neg(v: &[Complex64]) -> Complex64 {
    v.iter().fold(Complex64::new(1.0, 0.0), |acc, &x| acc * -x)
}

fn lowpass_to_highpass(proto: Zpk, wo: f64) -> Zpk {
    let degree = proto.poles.len() - proto.zeros.len();
    let mut zeros: Vec<Complex64> = proto.zeros.iter().map(|&z| wo / z).collect();
    let poles: Vec<Complex64> = proto.poles.iter().map(|&p| wo / p).collect();
    zeros.extend(std::iter::repeat(Complex64::new(0.0, 0.0)).take(degree));
    let gain = proto.gain * (prod_neg(&proto.zeros) / prod_neg(&proto.poles)).re;
    Zpk { zeros, poles, gain }
}

fn lowpass_to_bandstop(proto: Zpk, wo: f64, bw: f64) -> Zpk {
    let degree = proto.poles.len() - proto.zeros.len();
    let split = |v: &[Complex64]| -> Vec<Complex64> {
        let hp: Vec<Complex64> = v.iter().map(|&x| (bw / 2.0) / x).collect();
        let mut out = Vec::with_capacity(2 * hp.len());
        for &x in &hp {
            out.push(x + (x * x - wo * wo).sqrt());
        }
        for &x in &hp {
            out.push(x - (x * x - wo * wo).sqrt());
        }
        out
    };
    let mut zeros = split(&proto.zeros);
    let poles = split(&proto.poles);
    for _ in 0..degree {
        zeros.push(Complex64::new(0.0, wo));
    }
    for _ in 0..degree {
        zeros.push(Complex64::new(0.0, -wo));
    }
    let gain = proto.gain * (prod_neg(&proto.zeros) / prod_neg(&proto.poles)).re;
    Zpk { zeros, poles, gain }
}

fn bilinear(analog: Zpk, fs: f64) -> Zpk {
    let fs2 = Complex64::new(2.0 * fs, 0.0);
    let degree = analog.poles.len() - analog.zeros.len();
    let mut zeros: Vec<Complex64> = analog.zeros.iter().map(|&z| (fs2 + z) / (fs2 - z)).collect();
    let poles: Vec<Complex64> = analog.poles.iter().map(|&p| (fs2 + p) / (fs2 - p)).collect();
    zeros.extend(std::iter::repeat(Complex64::new(-1.0, 0.0)).take(degree));
    let num = analog.zeros.iter().fold(Complex64::new(1.0, 0.0), |acc, &z| acc * (fs2 - z));
    let den = analog.poles.iter().fold(Complex64::new(1.0, 0.0), |acc, &p| acc * (fs2 - p));
    Zpk { zeros, poles, gain: analog.gain * (num / den).re }
}

/// Groups roots into pairs: conjugate pairs first, then remaining reals two by two.
fn pair_roots(roots: &[Complex64]) -> Vec<[Complex64; 2]> {
    const TOL: f64 = 1e-9;
    let mut complex: Vec<Complex64> = roots.iter().copied().filter(|r| r.im > TOL).collect();
    let mut reals: Vec<Complex64> =
        roots.iter().copied().filter(|r| r.im.abs() <= TOL).map(|r| Complex64::new(r.re, 0.0)).collect();
    // Poles nearest the unit circle last, matching the usual biquad ordering.
    complex.sort_by(|a, b| (1.0 - a.norm()).abs().total_cmp(&(1.0 - b.norm()).abs()).reverse());
    reals.sort_by(|a, b| a.re.total_cmp(&b.re));
    let mut pairs: Vec<[Complex64; 2]> = complex.into_iter().map(|c| [c, c.conj()]).collect();
    for chunk in reals.chunks(2) {
        match chunk {
            [a, b] => pairs.push([*a, *b]),
            [a] => pairs.push([*a, Complex64::new(0.0, 0.0)]),
            _ => unreachable!(),
        }
    }
    pairs
}

fn zpk_to_sos(digital: Zpk, sfreq: f64) -> Sos {
    let pole_pairs = pair_roots(&digital.poles);
    let zero_pairs = pair_roots(&digital.zeros);
    debug_assert_eq!(pole_pairs.len(), zero_pairs.len());
    let sections = pole_pairs
        .iter()
        .zip(&zero_pairs)
        .enumerate()
        .map(|(i, (p, z))| {
            let g = if i == 0 { digital.gain } else { 1.0 };
            Biquad {
                b: [g, -g * (z[0] + z[1]).re, g * (z[0] * z[1]).re],
                a: [1.0, -(p[0] + p[1]).re, (p[0] * p[1]).re],
            }
        })
        .collect();
    Sos { sections, sfreq }
}

fn prewarp(freq: f64, sfreq: f64) -> f64 {
    2.0 * sfreq * (PI * freq / sfreq).tan()
}

impl Sos {
    /// Butterworth highpass of the given analog-prototype order.
    pub fn butter_highpass(order: usize, cutoff: f64, sfreq: f64) -> Result<Sos> {
        if order == 0 || order % 2 == 1 {
            return Err(Error::invalid(format!("highpass order must be even and positive, got {order}")));
        }
        if !(cutoff > 0.0 && cutoff < sfreq / 2.0) {
            return Err(Error::invalid(format!(
                "cutoff {cutoff} Hz must lie in (0, {}) Hz",
                sfreq / 2.0
            )));
        }
        let analog = lowpass_to_highpass(butter_prototype(order), prewarp(cutoff, sfreq));
        Ok(zpk_to_sos(bilinear(analog, sfreq), sfreq))
    }

    /// Butterworth bandstop rejecting `[low, high]`; the result has `2 * order`
    /// poles. The transmission null sits exactly at `(low + high) / 2`.
    pub fn butter_bandstop(order: usize, low: f64, high: f64, sfreq: f64) -> Result<Sos> {
        if order == 0 {
            return Err(Error::invalid("bandstop order must be positive"));
        }
        if !(low > 0.0 && low < high && high < sfreq / 2.0) {
            return Err(Error::invalid(format!(
                "stop band [{low}, {high}] Hz must lie inside (0, {}) Hz",
                sfreq / 2.0
            )));
        }
        let (w1, w2) = (prewarp(low, sfreq), prewarp(high, sfreq));
        let center = prewarp(0.5 * (low + high), sfreq);
        let analog = lowpass_to_bandstop(butter_prototype(order), center, w2 - w1);
        Ok(zpk_to_sos(bilinear(analog, sfreq), sfreq))
    }

    /// Complex frequency response of one causal pass at `freq` Hz.
    pub fn response(&self, freq: f64) -> Complex64 {
        let w = 2.0 * PI * freq / self.sfreq;
        let z1 = Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        self.sections.iter().fold(Complex64::new(1.0, 0.0), |acc, s| {
            let num = s.b[0] + s.b[1] * z1 + s.b[2] * z2;
            let den = s.a[0] + s.a[1] * z1 + s.a[2] * z2;
            acc * num / den
        })
    }

    /// Magnitude of the forward-backward (zero-phase) response, i.e. `|H|²`.
    pub fn zero_phase_gain(&self, freq: f64) -> f64 {
        self.response(freq).norm_sqr()
    }

    /// Causal filtering with per-section transposed direct form II state.
    pub fn filter_with_state(&self, x: &mut [f64], state: &mut [[f64; 2]]) {
        for (s, z) in self.sections.iter().zip(state.iter_mut()) {
            let [b0, b1, b2] = s.b;
            let [_, a1, a2] = s.a;
            for v in x.iter_mut() {
                let xin = *v;
                let y = b0 * xin + z[0];
                z[0] = b1 * xin - a1 * y + z[1];
                z[1] = b2 * xin - a2 * y;
                *v = y;
            }
        }
    }

    /// Steady-state initial conditions for a unit step input.
    pub fn step_state(&self) -> Vec<[f64; 2]> {
        let mut scale = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let [b0, b1, b2] = s.b;
                let [_, a1, a2] = s.a;
                // (I - A^T) zi = b[1:] - a[1:] b0
                let r0 = b1 - a1 * b0;
                let r1 = b2 - a2 * b0;
                let det = (1.0 + a1) + a2;
                let z0 = (r0 + r1) / det;
                let z1 = r1 - a2 * z0;
                let out = [scale * z0, scale * z1];
                scale *= (b0 + b1 + b2) / (1.0 + a1 + a2);
                out
            })
            .collect()
    }

    /// Number of samples until the impulse response envelope falls below
    /// `1e-6` of its peak (capped at `max_len`).
    pub fn impulse_length(&self, max_len: usize) -> usize {
        let mut h = vec![0.0; max_len];
        h[0] = 1.0;
        let mut state = vec![[0.0; 2]; self.sections.len()];
        self.filter_with_state(&mut h, &mut state);
        let peak = h.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let floor = 1e-6 * peak;
        h.iter().rposition(|v| v.abs() > floor).map_or(1, |i| i + 1)
    }

    /// Zero-phase forward-backward filtering of one channel.
    ///
    /// Signals longer than three impulse lengths are extended by odd
    /// reflection and filtered from steady-state initial conditions; shorter
    /// signals are zero-padded and a warning is logged.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n == 0 {
            return Vec::new();
        }
        let impulse = self.impulse_length((self.sfreq * 120.0) as usize + 1);
        let (mut ext, pad, use_state) = if n > 3 * impulse {
            let pad = impulse.min(n - 1);
            let mut ext = Vec::with_capacity(n + 2 * pad);
            ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
            ext.extend_from_slice(x);
            ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
            (ext, pad, true)
        } else {
            log::warn!(
                "signal of {n} samples is shorter than 3x the filter impulse length ({impulse}); zero-padding"
            );
            let mut ext = vec![0.0; n + 2 * impulse];
            ext[impulse..impulse + n].copy_from_slice(x);
            (ext, impulse, false)
        };
        let unit = self.step_state();
        let init = |v: f64| -> Vec<[f64; 2]> {
            if use_state {
                unit.iter().map(|z| [z[0] * v, z[1] * v]).collect()
            } else {
                vec![[0.0; 2]; unit.len()]
            }
        };
        let mut state = init(ext[0]);
        self.filter_with_state(&mut ext, &mut state);
        ext.reverse();
        let mut state = init(ext[0]);
        self.filter_with_state(&mut ext, &mut state);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn highpass_response_shape() {
        let sos = Sos::butter_highpass(4, 0.5, 256.0).unwrap();
        assert_eq!(sos.sections.len(), 2);
        assert!(sos.response(0.0).norm() < 1e-12);
        assert!((sos.response(0.5).norm() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-6);
        assert!((sos.response(10.0).norm() - 1.0).abs() < 1e-6);
        assert!((sos.response(100.0).norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn bandstop_response_shape() {
        let sos = Sos::butter_bandstop(2, 59.0, 61.0, 256.0).unwrap();
        assert_eq!(sos.sections.len(), 2);
        assert!(sos.response(60.0).norm() < 1e-6);
        assert!((sos.response(50.0).norm() - 1.0).abs() < 1e-3);
        assert!((sos.response(0.0).norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn step_state_gives_steady_output() {
        let sos = Sos::butter_bandstop(2, 49.0, 51.0, 256.0).unwrap();
        let mut x = vec![1.0; 64];
        let mut state = sos.step_state();
        sos.filter_with_state(&mut x, &mut state);
        for v in x {
            assert!((v - 1.0).abs() < 1e-9, "{v}");
        }
    }

    #[test]
    fn rejects_bad_edges() {
        assert!(Sos::butter_highpass(4, 200.0, 256.0).is_err());
        assert!(Sos::butter_highpass(3, 1.0, 256.0).is_err());
        assert!(Sos::butter_bandstop(2, 61.0, 59.0, 256.0).is_err());
    }
}
