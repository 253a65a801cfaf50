//! Four-axis rotary position embedding.
//!
//! Each head's dimensions are split into four equal contiguous groups, one per
//! coordinate axis `(bx, by, bz, m)`. Within a group, adjacent dimension pairs
//! rotate by `pos · base^(−2j/g)` where `g` is the group size.

use super::tensor::{Mat, Real};
use crate::tokens::Coord4;

/// Per-token cosine/sine tables, `len × head_dim/2`.
#[derive(Debug, Clone)]
pub struct RopeTable<T> {
    pub head_dim: usize,
    cos: Vec<T>,
    sin: Vec<T>,
}

impl<T: Real> RopeTable<T> {
    pub fn new(coords: &[Coord4], head_dim: usize, bases: [f64; 4]) -> Self {
        assert!(head_dim % 8 == 0, "head_dim must be divisible by 8");
        let group = head_dim / 4;
        let pairs = head_dim / 2;
        let inv_freq: Vec<f64> = (0..pairs)
            .map(|p| {
                let (axis, j) = (p / (group / 2), p % (group / 2));
                bases[axis].powf(-2.0 * j as f64 / group as f64)
            })
            .collect();
        let mut cos = Vec::with_capacity(coords.len() * pairs);
        let mut sin = Vec::with_capacity(coords.len() * pairs);
        for c in coords {
            let pos = c.axes();
            for (p, f) in inv_freq.iter().enumerate() {
                let angle = pos[p / (group / 2)] * f;
                cos.push(T::c(angle.cos()));
                sin.push(T::c(angle.sin()));
            }
        }
        Self { head_dim, cos, sin }
    }

    pub fn len(&self) -> usize {
        self.cos.len() / (self.head_dim / 2)
    }

    pub fn is_empty(&self) -> bool {
        self.cos.is_empty()
    }

    /// Rotates every head of every row of `x` (`len × n_heads·head_dim`) in place.
    /// `inverse` applies the transpose rotation, which is the backward pass.
    pub fn apply(&self, x: &mut Mat<T>, inverse: bool) {
        let pairs = self.head_dim / 2;
        assert_eq!(x.rows, self.len(), "rope table length differs from input");
        assert_eq!(x.cols % self.head_dim, 0, "row width is not a multiple of head_dim");
        for r in 0..x.rows {
            let cs = &self.cos[r * pairs..(r + 1) * pairs];
            let sn = &self.sin[r * pairs..(r + 1) * pairs];
            for head in x.row_mut(r).chunks_exact_mut(self.head_dim) {
                for (p, pair) in head.chunks_exact_mut(2).enumerate() {
                    let (c, s) = (cs[p], if inverse { -sn[p] } else { sn[p] });
                    let (a, b) = (pair[0], pair[1]);
                    pair[0] = a * c - b * s;
                    pair[1] = a * s + b * c;
                }
            }
        }
    }
}

/// Rotates a single head vector; convenience for property checks.
pub fn rope4d<T: Real>(v: &[T], coord: Coord4, bases: [f64; 4]) -> Vec<T> {
    let table = RopeTable::<T>::new(&[coord], v.len(), bases);
    let mut m = Mat::from_vec(1, v.len(), v.to_vec());
    table.apply(&mut m, false);
    m.data
}
