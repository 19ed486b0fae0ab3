//! Dense row-major tensors, the numeric carrier for every other module.
//!
//! Tensors are plain values: cloning copies the buffer, and nothing here is
//! reference-counted or thread-local. Differentiation lives in [`crate::tape`];
//! a tensor only remembers whether it *wants* gradients via `requires_grad`.

use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::StandardNormal;

/// Element precision of a tensor buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn name(self) -> &'static str {
        match self {
            Dtype::F32 => "real32",
            Dtype::F64 => "real64",
        }
    }
}

/// Scalar element type. f64 is used for gradient checks and oracles,
/// f32 for training.
pub trait Real:
    Copy
    + PartialOrd
    + PartialEq
    + Send
    + Sync
    + std::fmt::Debug
    + std::fmt::Display
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + 'static
{
    const DTYPE: Dtype;
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;
    fn abs(self) -> Self;
    fn maximum(self, other: Self) -> Self;
    fn minimum(self, other: Self) -> Self;
    fn mul_add(self, a: Self, b: Self) -> Self;
    fn is_finite(self) -> bool;
}

macro_rules! impl_real {
    ($ty:ty, $dtype:expr) => {
        impl Real for $ty {
            const DTYPE: Dtype = $dtype;
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;

            #[inline(always)]
            fn from_f64(x: f64) -> Self {
                x as $ty
            }
            #[inline(always)]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline(always)]
            fn exp(self) -> Self {
                self.exp()
            }
            #[inline(always)]
            fn ln(self) -> Self {
                self.ln()
            }
            #[inline(always)]
            fn sqrt(self) -> Self {
                self.sqrt()
            }
            #[inline(always)]
            fn tanh(self) -> Self {
                self.tanh()
            }
            #[inline(always)]
            fn abs(self) -> Self {
                self.abs()
            }
            #[inline(always)]
            fn maximum(self, other: Self) -> Self {
                self.max(other)
            }
            #[inline(always)]
            fn minimum(self, other: Self) -> Self {
                self.min(other)
            }
            #[inline(always)]
            fn mul_add(self, a: Self, b: Self) -> Self {
                self.mul_add(a, b)
            }
            #[inline(always)]
            fn is_finite(self) -> bool {
                <$ty>::is_finite(self)
            }
        }
    };
}

impl_real!(f32, Dtype::F32);
impl_real!(f64, Dtype::F64);

/// Dense n-dimensional array in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T: Real> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
}

impl<T: Real> Tensor<T> {
    /// Builds a tensor from a flat row-major buffer; the buffer length must
    /// equal the shape product.
    pub fn from_vec(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::invalid("tensor", format!("zero dim in {shape:?}")));
        }
        if numel != data.len() {
            return Err(Error::invalid(
                "tensor",
                format!("shape {shape:?} wants {numel} elements, got {}", data.len()),
            ));
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![T::ZERO; numel],
            requires_grad: false,
        }
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; numel],
            requires_grad: false,
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
            requires_grad: false,
        }
    }

    /// Standard-normal samples. Values are drawn in f64 and then narrowed so
    /// that a given seed produces the same underlying stream in both
    /// precisions.
    pub fn randn(shape: impl Into<Vec<usize>>, rng: &mut impl Rng) -> Self {
        let shape = shape.into();
        let numel = shape.iter().product();
        let data = (0..numel)
            .map(|_| T::from_f64(rng.sample::<f64, _>(StandardNormal)))
            .collect();
        Tensor {
            shape,
            data,
            requires_grad: false,
        }
    }

    /// He-normal initialization for a parameter with the given fan-in.
    pub fn he_normal(shape: impl Into<Vec<usize>>, fan_in: usize, rng: &mut impl Rng) -> Self {
        let std = (2.0 / fan_in.max(1) as f64).sqrt();
        let mut t = Self::randn(shape, rng);
        for v in t.data.iter_mut() {
            *v = T::from_f64(v.to_f64() * std);
        }
        t
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, rg: bool) {
        self.requires_grad = rg;
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn dtype(&self) -> Dtype {
        T::DTYPE
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

    /// Reinterprets the buffer under a new shape with the same element count.
    pub fn reshaped(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::invalid(
                "reshape",
                format!("{:?} -> {shape:?} changes element count", self.shape),
            ));
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
            requires_grad: self.requires_grad,
        })
    }

    /// Channels of a CHW image tensor.
    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        match self.shape.as_slice() {
            &[c, h, w] => Ok((c, h, w)),
            other => Err(Error::invalid(
                "tensor",
                format!("expected CHW image, got shape {other:?}"),
            )),
        }
    }

    /// Rows/cols of a matrix tensor.
    pub fn mat(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[m, n] => Ok((m, n)),
            other => Err(Error::invalid(
                "tensor",
                format!("expected matrix, got shape {other:?}"),
            )),
        }
    }

    pub fn item(&self) -> Result<T> {
        if self.data.len() != 1 {
            return Err(Error::invalid(
                "item",
                format!("expected scalar, got shape {:?}", self.shape),
            ));
        }
        Ok(self.data[0])
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            requires_grad: false,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Converts between precisions through f64.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
            requires_grad: self.requires_grad,
        }
    }
}

/// Root-mean-square difference between two same-shaped tensors.
pub fn rms_diff<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let n = a.numel() as f64;
    let ss: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.to_f64() - y.to_f64();
            d * d
        })
        .sum();
    (ss / n).sqrt()
}
