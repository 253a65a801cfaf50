//! Named parameter storage, gradient buffers and initialization.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::tensor::{Mat, Real};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// All trainable tensors keyed by stable names, plus the initialization seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Mat<T>>,
    index: HashMap<String, usize>,
    pub seed: u64,
}

impl<T: Real> ParamStore<T> {
    pub fn new(seed: u64) -> Self {
        Self { names: Vec::new(), tensors: Vec::new(), index: HashMap::new(), seed }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat<T>) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter name {name}");
        let id = self.tensors.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(value);
        ParamId(id)
    }

    pub fn get(&self, id: ParamId) -> &Mat<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat<T> {
        &mut self.tensors[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Mat<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Mat<T>] {
        &mut self.tensors
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn zero_grads(&self) -> Grads<T> {
        Grads { tensors: self.tensors.iter().map(|t| Mat::zeros(t.rows, t.cols)).collect() }
    }

    /// Name of the first tensor holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.names.iter().zip(&self.tensors).find(|(_, t)| !t.is_finite()).map(|(n, _)| n.as_str())
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.first_non_finite() {
            Some(name) => Err(Error::Numerical {
                stage: "parameters".into(),
                detail: format!("tensor {name} holds non-finite values"),
            }),
            None => Ok(()),
        }
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Mat::cast).collect(),
            index: self.index.clone(),
            seed: self.seed,
        }
    }
}

/// Gradient buffers aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T> {
    pub tensors: Vec<Mat<T>>,
}

impl<T: Real> Grads<T> {
    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat<T> {
        &mut self.tensors[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Mat<T> {
        &self.tensors[id.0]
    }

    pub fn zero(&mut self) {
        self.tensors.iter_mut().for_each(|t| t.fill(T::zero()));
    }

    pub fn scale(&mut self, s: T) {
        self.tensors.iter_mut().flat_map(|t| t.data.iter_mut()).for_each(|v| *v *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Mat::is_finite)
    }
}

pub const INIT_SD: f64 = 0.02;

/// Normal(0, sd²) truncated at ±2 SD by resampling.
pub fn truncated_normal<T: Real>(rows: usize, cols: usize, sd: f64, rng: &mut ChaCha8Rng) -> Mat<T> {
    let data = (0..rows * cols)
        .map(|_| loop {
            let z: f64 = rng.sample(StandardNormal);
            if z.abs() <= 2.0 {
                break T::c(z * sd);
            }
        })
        .collect();
    Mat::from_vec(rows, cols, data)
}
