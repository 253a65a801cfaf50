//! Coloured noise generation.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;

/// Unit-variance 1/f ("pink") noise of length `n`, shaped in the frequency
/// domain from white Gaussian noise. The DC bin is removed.
pub fn pink_noise<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    if n < 2 {
        return vec![0.0; n];
    }
    let mut buf: Vec<Complex64> =
        (0..n).map(|_| Complex64::new(rng.sample::<f64, _>(StandardNormal), 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    buf[0] = Complex64::new(0.0, 0.0);
    for k in 1..n {
        let f = k.min(n - k) as f64;
        buf[k] /= f.sqrt();
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let x: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let mean = x.iter().sum::<f64>() / n as f64;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    x.iter().map(|v| (v - mean) / sd).collect()
}
