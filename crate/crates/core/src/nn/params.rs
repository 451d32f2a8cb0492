use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::nn::{Real, Tensor4};

static NEXT_SET_ID: AtomicU64 = AtomicU64::new(1);

fn next_id() -> u64 {
    NEXT_SET_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Real> Param<T> {
    /// View as a rank-4 tensor. Rank-1 parameters (biases) become `[1, C, 1, 1]`.
    pub fn as_tensor(&self) -> Result<Tensor4<T>> {
        let shape = match self.shape.as_slice() {
            &[a, b, c, d] => [a, b, c, d],
            &[c] => [1, c, 1, 1],
            other => {
                return Err(Error::Shape(format!(
                    "parameter `{}` has unsupported rank {}",
                    self.name,
                    other.len()
                )))
            }
        };
        Tensor4::from_vec(shape, self.value.clone())
    }
}

/// Named parameters with matching gradient buffers.
///
/// Every set carries a process-unique id so a recorded computation can tell
/// which set its parameter leaves came from. Cloning produces a new id.
#[derive(Debug)]
pub struct ParamSet<T> {
    id: u64,
    params: Vec<Param<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Clone for ParamSet<T> {
    fn clone(&self) -> Self {
        Self {
            id: next_id(),
            params: self.params.clone(),
            index: self.index.clone(),
        }
    }
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            id: next_id(),
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn add(&mut self, name: &str, shape: Vec<usize>, value: Vec<T>) -> Result<usize> {
        if self.index.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        let expected: usize = shape.iter().product();
        if value.len() != expected {
            return Err(Error::Shape(format!(
                "parameter `{name}` of shape {shape:?} needs {expected} values, got {}",
                value.len()
            )));
        }
        let idx = self.params.len();
        self.params.push(Param {
            name: name.to_owned(),
            grad: vec![T::zero(); value.len()],
            shape,
            value,
        });
        self.index.insert(name.to_owned(), idx);
        Ok(idx)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.position(name).map(|i| &self.params[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.position(name).map(move |i| &mut self.params[i])
    }

    pub fn param(&self, index: usize) -> &Param<T> {
        &self.params[index]
    }

    pub fn param_mut(&mut self, index: usize) -> &mut Param<T> {
        &mut self.params[index]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params
            .iter()
            .all(|p| p.value.iter().chain(&p.grad).all(|v| v.is_finite()))
    }

    /// Same parameters converted to another precision (new set id).
    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        let conv = |v: &T| U::from_f64(v.as_f64()).unwrap_or_else(U::nan);
        let mut out = ParamSet::new();
        for p in &self.params {
            out.params.push(Param {
                name: p.name.clone(),
                shape: p.shape.clone(),
                value: p.value.iter().map(conv).collect(),
                grad: p.grad.iter().map(conv).collect(),
            });
        }
        out.index = self.index.clone();
        out
    }

    /// Bitwise equality of names, shapes and values (gradients ignored).
    pub fn same_values(&self, other: &Self) -> bool {
        self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|(a, b)| {
                a.name == b.name
                    && a.shape == b.shape
                    && a.value.len() == b.value.len()
                    && a.value
                        .iter()
                        .zip(&b.value)
                        .all(|(x, y)| x.as_f64().to_bits() == y.as_f64().to_bits())
            })
    }
}

/// Weight-initialisation policy: weights ~ N(0, std²), biases zero.
#[derive(Clone, Copy, Debug)]
pub struct GaussianInit {
    pub std: f64,
    pub seed: u64,
}

impl GaussianInit {
    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    pub fn sample<T: Real>(&self, rng: &mut ChaCha8Rng, count: usize) -> Vec<T> {
        if self.std == 0.0 {
            return vec![T::zero(); count];
        }
        let normal = Normal::new(0.0, self.std).expect("finite std");
        (0..count).map(|_| T::lit(normal.sample(rng))).collect()
    }
}
