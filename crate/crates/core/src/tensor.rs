//! Batched image tensors. One flat buffer in row-major
//! batch → height → width → channel order carries every numeric payload in
//! the crate: images, feature maps, flattened dense activations
//! (`height = width = 1`), and decoder reconstructions.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use crate::error::{Error, Result};

/// Scalar type for all tensor math. Training runs use `f32`; gradient
/// verification needs `f64` (finite differences are too noisy in single
/// precision).
pub trait Real:
    num_traits::Float
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Send
    + Sync
    + Debug
    + Display
    + 'static
{
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Batched H×W×C image data, row-major batch → height → width → channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor<T> {
    batch: usize,
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Real> ImageTensor<T> {
    pub fn new(batch: usize, height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        let expected = batch * height * width * channels;
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "tensor {batch}x{height}x{width}x{channels} expects {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { batch, height, width, channels, data })
    }

    pub fn zeros(batch: usize, height: usize, width: usize, channels: usize) -> Self {
        Self {
            batch,
            height,
            width,
            channels,
            data: vec![T::zero(); batch * height * width * channels],
        }
    }

    pub fn from_fn(
        batch: usize,
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(batch * height * width * channels);
        for b in 0..batch {
            for y in 0..height {
                for x in 0..width {
                    for c in 0..channels {
                        data.push(f(b, y, x, c));
                    }
                }
            }
        }
        Self { batch, height, width, channels, data }
    }

    /// Flat batch carrier: `n` rows of width `dim` as a (n,1,1,dim) tensor.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Shape("rows have unequal widths".into()));
        }
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(rows.len(), 1, 1, dim, data)
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.batch, self.height, self.width, self.channels)
    }

    #[inline]
    pub fn batch(&self) -> usize {
        self.batch
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Elements per sample.
    #[inline]
    pub fn sample_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn idx(&self, b: usize, y: usize, x: usize, c: usize) -> usize {
        ((b * self.height + y) * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, b: usize, y: usize, x: usize, c: usize) -> T {
        self.data[self.idx(b, y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, y: usize, x: usize, c: usize, v: T) {
        let i = self.idx(b, y, x, c);
        self.data[i] = v;
    }

    /// Contiguous slice of one sample.
    pub fn sample_slice(&self, b: usize) -> &[T] {
        let n = self.sample_len();
        &self.data[b * n..(b + 1) * n]
    }

    /// Copy of one sample as a batch-of-one tensor.
    pub fn sample(&self, b: usize) -> Self {
        Self {
            batch: 1,
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.sample_slice(b).to_vec(),
        }
    }

    /// Copy of the given samples, in the given order.
    pub fn gather(&self, indices: &[usize]) -> Self {
        let n = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend_from_slice(self.sample_slice(i));
        }
        Self {
            batch: indices.len(),
            height: self.height,
            width: self.width,
            channels: self.channels,
            data,
        }
    }

    /// Concatenate along the batch axis.
    pub fn concat(parts: &[Self]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
        let (h, w, c) = (first.height, first.width, first.channels);
        if parts.iter().any(|p| (p.height, p.width, p.channels) != (h, w, c)) {
            return Err(Error::Shape("concat parts have mixed sample dims".into()));
        }
        let batch = parts.iter().map(|p| p.batch).sum();
        let mut data = Vec::with_capacity(batch * h * w * c);
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Ok(Self { batch, height: h, width: w, channels: c, data })
    }

    /// Same buffer reinterpreted with new sample dims.
    pub fn reshaped(&self, height: usize, width: usize, channels: usize) -> Result<Self> {
        if height * width * channels != self.sample_len() {
            return Err(Error::Shape(format!(
                "cannot reshape sample of {} elements to {height}x{width}x{channels}",
                self.sample_len()
            )));
        }
        Ok(Self {
            batch: self.batch,
            height,
            width,
            channels,
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            batch: self.batch,
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn to_f64(&self) -> ImageTensor<f64> {
        self.cast()
    }

    /// Convert element type through f64.
    pub fn cast<U: Real>(&self) -> ImageTensor<U> {
        ImageTensor {
            batch: self.batch,
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn same_dims(&self, other: &Self) -> bool {
        self.dims() == other.dims()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_wrong_length() {
        assert!(ImageTensor::<f64>::new(1, 2, 2, 1, vec![0.0; 3]).is_err());
        assert!(ImageTensor::<f64>::new(1, 2, 2, 1, vec![0.0; 4]).is_ok());
    }

    #[test]
    fn layout_is_row_major_bhwc() {
        let t = ImageTensor::<f64>::from_fn(2, 2, 3, 2, |b, y, x, c| {
            (b * 1000 + y * 100 + x * 10 + c) as f64
        });
        assert_eq!(t.get(1, 0, 2, 1), 1021.0);
        assert_eq!(t.idx(0, 0, 0, 1), 1);
        assert_eq!(t.idx(0, 0, 1, 0), 2);
        assert_eq!(t.idx(0, 1, 0, 0), 6);
        assert_eq!(t.idx(1, 0, 0, 0), 12);
    }

    #[test]
    fn gather_and_concat_round_trip() {
        let t = ImageTensor::<f32>::from_fn(3, 2, 2, 1, |b, _, _, _| b as f32);
        let g = t.gather(&[2, 0]);
        assert_eq!(g.batch(), 2);
        assert_eq!(g.sample_slice(0), &[2.0; 4]);
        let joined = ImageTensor::concat(&[t.sample(1), t.sample(2)]).unwrap();
        assert_eq!(joined.batch(), 2);
        assert_eq!(joined.sample_slice(1), &[2.0; 4]);
    }
}
