use crate::error::{Error, Result};
use crate::nn::Real;

/// Dense `[batch, channel, height, width]` array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4<T> {
    shape: [usize; 4],
    data: Vec<T>,
}

impl<T: Real> Tensor4<T> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self::filled(shape, T::zero())
    }

    pub fn filled(shape: [usize; 4], value: T) -> Self {
        Self {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "tensor of shape {shape:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: [1, 1, 1, 1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    /// Elements per batch item.
    pub fn sample_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn sample(&self, n: usize) -> &[T] {
        let len = self.sample_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn sample_mut(&mut self, n: usize) -> &mut [T] {
        let len = self.sample_len();
        &mut self.data[n * len..(n + 1) * len]
    }

    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        let [_, cs, hs, ws] = self.shape;
        self.data[((n * cs + c) * hs + h) * ws + w]
    }

    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, value: T) {
        let [_, cs, hs, ws] = self.shape;
        self.data[((n * cs + c) * hs + h) * ws + w] = value;
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor4<U> {
        Tensor4 {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.as_f64()).unwrap_or_else(U::nan))
                .collect(),
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        self.expect_shape(other.shape, "dot product")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a * b)
            .sum())
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: T) {
        for v in &mut self.data {
            *v *= k;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn expect_shape(&self, shape: [usize; 4], what: &str) -> Result<()> {
        if self.shape != shape {
            return Err(Error::Shape(format!(
                "{what}: expected {shape:?}, got {:?}",
                self.shape
            )));
        }
        Ok(())
    }

    /// Concatenate along the channel axis.
    pub fn concat_channels(a: &Self, b: &Self) -> Result<Self> {
        let [n, ca, h, w] = a.shape;
        let [nb, cb, hb, wb] = b.shape;
        if n != nb || h != hb || w != wb {
            return Err(Error::Shape(format!(
                "channel concat of {:?} and {:?}",
                a.shape, b.shape
            )));
        }
        let mut data = Vec::with_capacity(a.len() + b.len());
        for i in 0..n {
            data.extend_from_slice(a.sample(i));
            data.extend_from_slice(b.sample(i));
        }
        Ok(Self {
            shape: [n, ca + cb, h, w],
            data,
        })
    }

    /// Inverse of [`Tensor4::concat_channels`]: split after `first` channels.
    pub fn split_channels(&self, first: usize) -> Result<(Self, Self)> {
        let [n, c, h, w] = self.shape;
        if first > c {
            return Err(Error::Shape(format!(
                "cannot split {c} channels at {first}"
            )));
        }
        let plane = h * w;
        let mut a = Vec::with_capacity(n * first * plane);
        let mut b = Vec::with_capacity(n * (c - first) * plane);
        for i in 0..n {
            let s = self.sample(i);
            a.extend_from_slice(&s[..first * plane]);
            b.extend_from_slice(&s[first * plane..]);
        }
        Ok((
            Self {
                shape: [n, first, h, w],
                data: a,
            },
            Self {
                shape: [n, c - first, h, w],
                data: b,
            },
        ))
    }

    /// Stack single-sample tensors (or sample slices) along the batch axis.
    pub fn stack(sample_shape: [usize; 3], samples: &[&[T]]) -> Result<Self> {
        let len: usize = sample_shape.iter().product();
        let mut data = Vec::with_capacity(len * samples.len());
        for (i, s) in samples.iter().enumerate() {
            if s.len() != len {
                return Err(Error::Shape(format!(
                    "sample {i} has {} elements, expected {len}",
                    s.len()
                )));
            }
            data.extend_from_slice(s);
        }
        Ok(Self {
            shape: [samples.len(), sample_shape[0], sample_shape[1], sample_shape[2]],
            data,
        })
    }

    /// Copy out a subset of batch items, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.sample_len());
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        Self {
            shape: [indices.len(), self.shape[1], self.shape[2], self.shape[3]],
            data,
        }
    }
}
