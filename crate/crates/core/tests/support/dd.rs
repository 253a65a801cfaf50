//! Double-double arithmetic (~106-bit significand) and a spherical-spline
//! solve built on it, used as a high-precision reference.

use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    Dd { hi: s, lo: b - (s - a) }
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };
    pub const PI: Dd = Dd { hi: 3.141592653589793, lo: 1.2246467991473532e-16 };

    pub fn from(v: f64) -> Dd {
        Dd { hi: v, lo: 0.0 }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    pub fn abs(self) -> Dd {
        if self.hi < 0.0 {
            -self
        } else {
            self
        }
    }

    pub fn sqrt(self) -> Dd {
        if self.hi <= 0.0 {
            return Dd::ZERO;
        }
        let x = Dd::from(self.hi.sqrt());
        // One Newton step doubles the precision.
        x + (self - x * x) / (x * Dd::from(2.0))
    }

    pub fn powi(self, n: u32) -> Dd {
        (0..n).fold(Dd::ONE, |acc, _| acc * self)
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        quick_two_sum(s, e + self.lo + o.lo)
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd { hi: -self.hi, lo: -self.lo }
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, o: Dd) -> Dd {
        self + (-o)
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, o: Dd) -> Dd {
        let p = self.hi * o.hi;
        let e = self.hi.mul_add(o.hi, -p);
        quick_two_sum(p, e + self.hi * o.lo + self.lo * o.hi)
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r = self - o * Dd::from(q1);
        let q2 = r.hi / o.hi;
        let r = r - o * Dd::from(q2);
        let q3 = r.hi / o.hi;
        quick_two_sum(q1, q2) + Dd::from(q3)
    }
}

/// Kernel `1/(4π) Σ (2n+1)/(n(n+1))^m Pₙ(x)` by three-term recurrence.
pub fn legendre_g(x: Dd, m: u32, n_terms: usize) -> Dd {
    let four_pi = Dd::PI * Dd::from(4.0);
    let weight = |n: usize| {
        let nf = Dd::from(n as f64);
        (Dd::from(2.0) * nf + Dd::ONE) / (nf * (nf + Dd::ONE)).powi(m) / four_pi
    };
    let (mut p_prev, mut p) = (Dd::ONE, x);
    let mut sum = weight(1) * p;
    for n in 1..n_terms {
        let nf = Dd::from(n as f64);
        let next = ((Dd::from(2.0) * nf + Dd::ONE) * x * p - nf * p_prev) / (nf + Dd::ONE);
        p_prev = p;
        p = next;
        sum = sum + weight(n + 1) * p;
    }
    sum
}

fn unit(p: [f64; 3]) -> [Dd; 3] {
    let v = [Dd::from(p[0]), Dd::from(p[1]), Dd::from(p[2])];
    let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / norm, v[1] / norm, v[2] / norm]
}

fn cosine(a: &[Dd; 3], b: &[Dd; 3]) -> Dd {
    let c = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    if c.hi > 1.0 {
        Dd::ONE
    } else if c.hi < -1.0 {
        -Dd::ONE
    } else {
        c
    }
}

/// Gaussian elimination with partial pivoting; `a` is n×n, `b` is n×k.
pub fn solve(mut a: Vec<Vec<Dd>>, mut b: Vec<Vec<Dd>>) -> Vec<Vec<Dd>> {
    let n = a.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().to_f64().total_cmp(&a[j][col].abs().to_f64())).unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in (col + 1)..n {
            let f = a[row][col] / a[col][col];
            if f.hi == 0.0 {
                continue;
            }
            for k in col..n {
                let v = a[col][k];
                a[row][k] = a[row][k] - f * v;
            }
            for k in 0..b[row].len() {
                let v = b[col][k];
                b[row][k] = b[row][k] - f * v;
            }
        }
    }
    let k = b[0].len();
    let mut x = vec![vec![Dd::ZERO; k]; n];
    for row in (0..n).rev() {
        for j in 0..k {
            let mut s = b[row][j];
            for c in (row + 1)..n {
                s = s - a[row][c] * x[c][j];
            }
            x[row][j] = s / a[row][row];
        }
    }
    x
}

pub struct OracleSpline {
    pub coefficients: Vec<Vec<f64>>,
    pub offsets: Vec<f64>,
    positions: Vec<[Dd; 3]>,
    coef_dd: Vec<Vec<Dd>>,
    offset_dd: Vec<Dd>,
    m: u32,
    n_terms: usize,
}

pub fn fit(positions: &[[f64; 3]], values: &[Vec<f64>], m: u32, n_terms: usize, ridge: f64) -> OracleSpline {
    let n = positions.len();
    let t = values[0].len();
    let pos: Vec<[Dd; 3]> = positions.iter().map(|&p| unit(p)).collect();
    let mut a = vec![vec![Dd::ZERO; n + 1]; n + 1];
    for i in 0..n {
        for j in 0..n {
            a[i][j] = legendre_g(cosine(&pos[i], &pos[j]), m, n_terms);
        }
        a[i][i] = a[i][i] + Dd::from(ridge);
        a[i][n] = Dd::ONE;
        a[n][i] = Dd::ONE;
    }
    let mut b = vec![vec![Dd::ZERO; t]; n + 1];
    for i in 0..n {
        for j in 0..t {
            b[i][j] = Dd::from(values[i][j]);
        }
    }
    let x = solve(a, b);
    let coef_dd: Vec<Vec<Dd>> = x[..n].to_vec();
    let offset_dd = x[n].clone();
    OracleSpline {
        coefficients: coef_dd.iter().map(|r| r.iter().map(|v| v.to_f64()).collect()).collect(),
        offsets: offset_dd.iter().map(|v| v.to_f64()).collect(),
        positions: pos,
        coef_dd,
        offset_dd,
        m,
        n_terms,
    }
}

impl OracleSpline {
    pub fn interpolate(&self, targets: &[[f64; 3]]) -> Vec<Vec<f64>> {
        targets
            .iter()
            .map(|&p| {
                let e = unit(p);
                let g: Vec<Dd> = self
                    .positions
                    .iter()
                    .map(|q| legendre_g(cosine(&e, q), self.m, self.n_terms))
                    .collect();
                (0..self.offset_dd.len())
                    .map(|t| {
                        let mut s = self.offset_dd[t];
                        for (gi, c) in g.iter().zip(&self.coef_dd) {
                            s = s + *gi * c[t];
                        }
                        s.to_f64()
                    })
                    .collect()
            })
            .collect()
    }
}
