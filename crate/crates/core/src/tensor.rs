//! Dense rank-4 tensors in NCHW layout.
//!
//! Storage is generic over [`Element`] so the same operators can run in
//! `f32` for inference and in `f64` for gradient verification. Every
//! operator in this crate accumulates in `f64` regardless of the storage
//! type.

use std::fmt::Debug;

use crate::error::{Error, Result};

/// Scalar storage type of a [`Tensor`].
pub trait Element: Copy + Default + Debug + PartialEq + PartialOrd + Send + Sync + 'static {
    const ZERO: Self;
    /// Smallest positive normal value, as `f64`.
    const SMALLEST_POSITIVE: f64;
    /// Largest value strictly below one, as `f64`.
    const BELOW_ONE: f64;
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
}

impl Element for f32 {
    const ZERO: Self = 0.0;
    const SMALLEST_POSITIVE: f64 = f32::MIN_POSITIVE as f64;
    const BELOW_ONE: f64 = 1.0 - f32::EPSILON as f64 / 2.0;
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

impl Element for f64 {
    const ZERO: Self = 0.0;
    const SMALLEST_POSITIVE: f64 = f64::MIN_POSITIVE;
    const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
}

/// Dense `(N, C, H, W)` array, row-major with `W` fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T: Element = f32> {
    shape: [usize; 4],
    data: Vec<T>,
}

impl<T: Element> Tensor<T> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self::full(shape, T::ZERO)
    }

    pub fn full(shape: [usize; 4], value: T) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::invalid(
                "tensor",
                format!(
                    "data length {} does not match shape {:?} ({} elements)",
                    data.len(),
                    shape,
                    expected
                ),
            ));
        }
        Ok(Tensor { shape, data })
    }

    /// Builds a tensor by evaluating `f(n, c, y, x)` at every index.
    pub fn from_fn(shape: [usize; 4], mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let [n, c, h, w] = shape;
        let mut data = Vec::with_capacity(n * c * h * w);
        for ni in 0..n {
            for ci in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        data.push(f(ni, ci, y, x));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    #[inline]
    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }
    #[inline]
    pub fn batch(&self) -> usize {
        self.shape[0]
    }
    #[inline]
    pub fn channels(&self) -> usize {
        self.shape[1]
    }
    #[inline]
    pub fn height(&self) -> usize {
        self.shape[2]
    }
    #[inline]
    pub fn width(&self) -> usize {
        self.shape[3]
    }
    #[inline]
    pub fn spatial(&self) -> (usize, usize) {
        (self.shape[2], self.shape[3])
    }
    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }
    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }
    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape[1] + c) * self.shape[2] + y) * self.shape[3] + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.offset(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: T) {
        let o = self.offset(n, c, y, x);
        self.data[o] = v;
    }

    /// One `H×W` plane.
    #[inline]
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let hw = self.shape[2] * self.shape[3];
        let start = (n * self.shape[1] + c) * hw;
        &self.data[start..start + hw]
    }

    #[inline]
    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [T] {
        let hw = self.shape[2] * self.shape[3];
        let start = (n * self.shape[1] + c) * hw;
        &mut self.data[start..start + hw]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise binary map; shapes must match.
    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_shape(op, other.shape)?;
        Ok(Tensor {
            shape: self.shape,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "add", |a, b| T::from_f64(a.to_f64() + b.to_f64()))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "sub", |a, b| T::from_f64(a.to_f64() - b.to_f64()))
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| T::from_f64(v.to_f64() * s))
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.to_f64()).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.to_f64().abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.to_f64().is_finite())
    }

    pub fn expect_shape(&self, op: &'static str, shape: [usize; 4]) -> Result<()> {
        if self.shape != shape {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape,
                right: shape,
            });
        }
        Ok(())
    }

    pub fn expect_channels(&self, op: &'static str, c: usize) -> Result<()> {
        if self.shape[1] != c {
            return Err(Error::invalid(
                op,
                format!("expected {} channels, got shape {:?}", c, self.shape),
            ));
        }
        Ok(())
    }

    /// Checks that `other` shares batch and spatial size.
    pub fn expect_same_grid(&self, op: &'static str, other: &Tensor<T>) -> Result<()> {
        let [n, _, h, w] = self.shape;
        let [n2, _, h2, w2] = other.shape;
        if n != n2 || h != h2 || w != w2 {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape,
                right: other.shape,
            });
        }
        Ok(())
    }

    /// Concatenates along the channel axis.
    pub fn cat(parts: &[&Tensor<T>]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("cat", "no tensors to concatenate"))?;
        let [n, _, h, w] = first.shape;
        for p in parts {
            first.expect_same_grid("cat", p)?;
        }
        let c_total: usize = parts.iter().map(|p| p.shape[1]).sum();
        let hw = h * w;
        let mut data = Vec::with_capacity(n * c_total * hw);
        for ni in 0..n {
            for p in parts {
                let chw = p.shape[1] * hw;
                data.extend_from_slice(&p.data[ni * chw..(ni + 1) * chw]);
            }
        }
        Ok(Tensor {
            shape: [n, c_total, h, w],
            data,
        })
    }

    /// Channels `start..start + len`.
    pub fn narrow_channels(&self, start: usize, len: usize) -> Result<Self> {
        let [n, c, h, w] = self.shape;
        if start + len > c {
            return Err(Error::invalid(
                "narrow_channels",
                format!("range {}..{} exceeds {} channels", start, start + len, c),
            ));
        }
        let hw = h * w;
        let mut data = Vec::with_capacity(n * len * hw);
        for ni in 0..n {
            let base = (ni * c + start) * hw;
            data.extend_from_slice(&self.data[base..base + len * hw]);
        }
        Ok(Tensor {
            shape: [n, len, h, w],
            data,
        })
    }

    /// Splits along channels into consecutive pieces of the given widths.
    pub fn split_channels(&self, widths: &[usize]) -> Result<Vec<Self>> {
        let total: usize = widths.iter().sum();
        if total != self.shape[1] {
            return Err(Error::invalid(
                "split_channels",
                format!(
                    "widths {:?} sum to {} but tensor has {} channels",
                    widths, total, self.shape[1]
                ),
            ));
        }
        let mut start = 0;
        widths
            .iter()
            .map(|&w| {
                let t = self.narrow_channels(start, w);
                start += w;
                t
            })
            .collect()
    }

    /// Picks batch element `n` as a batch of one.
    pub fn batch_item(&self, n: usize) -> Self {
        let chw = self.shape[1] * self.shape[2] * self.shape[3];
        Tensor {
            shape: [1, self.shape[1], self.shape[2], self.shape[3]],
            data: self.data[n * chw..(n + 1) * chw].to_vec(),
        }
    }
}

impl Tensor<f32> {
    /// Largest absolute elementwise difference, evaluated in `f64`.
    pub fn max_abs_diff(&self, other: &Tensor<f32>) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (&a, &b)| m.max((a as f64 - b as f64).abs()))
    }
}
