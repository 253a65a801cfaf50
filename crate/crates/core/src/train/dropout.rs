//! Channel-dropout plans for training and evaluation.

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};

/// Probability that a training sample keeps every channel.
pub const P_NO_DROPOUT: f64 = 0.10;
/// Probability of the light-dropout branch (`1..=C/2` channels) given dropout.
pub const P_LIGHT_BRANCH: f64 = 0.80;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DropoutPlan {
    pub mask: Vec<bool>,
    pub k_dropped: usize,
}

impl DropoutPlan {
    pub fn none(c: usize) -> Self {
        Self { mask: vec![false; c], k_dropped: 0 }
    }

    pub fn from_mask(mask: Vec<bool>) -> Result<Self> {
        let k = mask.iter().filter(|m| **m).count();
        if !mask.is_empty() && k == mask.len() {
            return Err(Error::invalid("a dropout plan must keep at least one channel"));
        }
        Ok(Self { mask, k_dropped: k })
    }

    /// A uniformly random subset of exactly `k` channels.
    pub fn random_subset<R: Rng>(c: usize, k: usize, rng: &mut R) -> Result<Self> {
        if k >= c {
            return Err(Error::invalid(format!("cannot drop {k} of {c} channels")));
        }
        let mut mask = vec![false; c];
        for i in sample(rng, c, k) {
            mask[i] = true;
        }
        Ok(Self { mask, k_dropped: k })
    }

    pub fn dropped(&self) -> Vec<usize> {
        (0..self.mask.len()).filter(|&i| self.mask[i]).collect()
    }

    pub fn observed(&self) -> Vec<usize> {
        (0..self.mask.len()).filter(|&i| !self.mask[i]).collect()
    }
}

/// Training-time dropout: 10% of samples keep every channel; otherwise 80%
/// drop `k ∈ {1..⌊C/2⌋}` and 20% drop `k ∈ {⌊C/2⌋..C−1}`, uniform within the
/// branch (the boundary value belongs to both branches).
pub fn sample_dropout<R: Rng>(c: usize, rng: &mut R) -> DropoutPlan {
    if c <= 1 || rng.gen::<f64>() < P_NO_DROPOUT {
        return DropoutPlan::none(c);
    }
    let half = c / 2;
    let k = if rng.gen::<f64>() < P_LIGHT_BRANCH { rng.gen_range(1..=half) } else { rng.gen_range(half..=c - 1) };
    DropoutPlan::random_subset(c, k, rng).expect("k below channel count")
}
