//! Dense row-major tensors.
//!
//! Storage is `f32` by default. The numeric core is generic over [`Element`]
//! so gradient checks can run the same code in `f64`. Reductions always
//! accumulate in `f64`.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Floating element type a tensor can hold.
pub trait Element:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Default
    + Debug
    + Send
    + Sync
    + 'static
{
    fn from_f64_lossy(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).unwrap_or_else(Self::nan)
    }

    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Element for f32 {}
impl Element for f64 {}

#[derive(Clone, PartialEq, Debug)]
pub struct Tensor<T: Element = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Div,
    Abs,
    /// `max(x, 0)`
    Max0,
}

/// Right-hand operand of a binary elementwise operation.
#[derive(Clone, Copy, Debug)]
pub enum Operand<'a, T: Element = f32> {
    Tensor(&'a Tensor<T>),
    Scalar(T),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Max,
    Argmax,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Reduction<T: Element = f32> {
    Value(f64),
    /// Flat offset of the first maximal element.
    Index(usize),
    Tensor(Tensor<T>),
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

impl<T: Element> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expected = numel(&shape);
        if expected != data.len() || shape.contains(&0) {
            return Err(Error::DataLength {
                len: data.len(),
                expected,
                shape,
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel(shape)],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: (0..numel(shape)).map(&mut f).collect(),
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
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

    pub fn strides(&self) -> Vec<usize> {
        strides(&self.shape)
    }

    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        index.iter().zip(self.strides()).map(|(&i, s)| i * s).sum()
    }

    pub fn get(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Tensor::new(shape.to_vec(), self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&x| U::from_f64_lossy(x.as_f64()))
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    fn check_same_shape(&self, other: &Tensor<T>) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }

    /// Pointwise `op(self, rhs)`. Unary ops (`Abs`, `Max0`) ignore `rhs`.
    pub fn elementwise(&self, op: ElementwiseOp, rhs: Operand<'_, T>) -> Result<Tensor<T>> {
        let apply = |a: T, b: T| match op {
            ElementwiseOp::Add => a + b,
            ElementwiseOp::Sub => a - b,
            ElementwiseOp::Mul => a * b,
            ElementwiseOp::Div => a / b,
            ElementwiseOp::Abs => a.abs(),
            ElementwiseOp::Max0 => a.max(T::zero()),
        };
        let data = match rhs {
            Operand::Scalar(b) => {
                if op == ElementwiseOp::Div && b == T::zero() {
                    return Err(Error::DivisionByZero { offset: 0 });
                }
                self.data.iter().map(|&a| apply(a, b)).collect()
            }
            Operand::Tensor(other) => {
                self.check_same_shape(other)?;
                if op == ElementwiseOp::Div {
                    if let Some(offset) = other.data.iter().position(|&b| b == T::zero()) {
                        return Err(Error::DivisionByZero { offset });
                    }
                }
                self.data
                    .iter()
                    .zip(&other.data)
                    .map(|(&a, &b)| apply(a, b))
                    .collect()
            }
        };
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.elementwise(ElementwiseOp::Add, Operand::Tensor(other))
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.elementwise(ElementwiseOp::Sub, Operand::Tensor(other))
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.elementwise(ElementwiseOp::Mul, Operand::Tensor(other))
    }

    pub fn scale(&self, factor: T) -> Tensor<T> {
        self.map(|x| x * factor)
    }

    pub fn abs(&self) -> Tensor<T> {
        self.map(|x| x.abs())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|x| x.as_f64()).sum()
    }

    pub fn abs_sum(&self) -> f64 {
        self.data.iter().map(|x| x.as_f64().abs()).sum()
    }

    pub fn max(&self) -> T {
        self.data[self.argmax()]
    }

    pub fn abs_max(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |m, &x| if x.abs() > m { x.abs() } else { m })
    }

    /// Flat offset of the first maximal element; NaNs never win.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &x) in self.data.iter().enumerate() {
            if x > self.data[best] || (self.data[best].is_nan() && !x.is_nan()) {
                best = i;
            }
        }
        best
    }

    /// Reduce over `axes`, or over everything when `axes` is `None`.
    ///
    /// `Argmax` is only defined for a full reduction.
    pub fn reduce(&self, op: ReduceOp, axes: Option<&[usize]>) -> Result<Reduction<T>> {
        let Some(axes) = axes else {
            return Ok(match op {
                ReduceOp::Sum => Reduction::Value(self.sum()),
                ReduceOp::Max => Reduction::Value(self.max().as_f64()),
                ReduceOp::Argmax => Reduction::Index(self.argmax()),
            });
        };
        for &axis in axes {
            if axis >= self.rank() {
                return Err(Error::InvalidAxis {
                    axis,
                    rank: self.rank(),
                });
            }
        }
        if op == ReduceOp::Argmax {
            return Err(Error::InvalidConfig(
                "argmax is only defined over all axes".into(),
            ));
        }
        let keep: Vec<bool> = (0..self.rank()).map(|a| !axes.contains(&a)).collect();
        let mut out_shape: Vec<usize> = self
            .shape
            .iter()
            .zip(&keep)
            .filter(|(_, &k)| k)
            .map(|(&s, _)| s)
            .collect();
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let out_len = numel(&out_shape);
        let in_strides = self.strides();
        let mut acc = match op {
            ReduceOp::Sum => vec![0.0f64; out_len],
            _ => vec![f64::NEG_INFINITY; out_len],
        };
        let mut index = vec![0usize; self.rank()];
        for (flat, &x) in self.data.iter().enumerate() {
            let mut rem = flat;
            for (a, s) in in_strides.iter().enumerate() {
                index[a] = rem / s;
                rem %= s;
            }
            let mut out = 0;
            for (a, &k) in keep.iter().enumerate() {
                if k {
                    out = out * self.shape[a] + index[a];
                }
            }
            let x = x.as_f64();
            match op {
                ReduceOp::Sum => acc[out] += x,
                _ => {
                    if x > acc[out] {
                        acc[out] = x
                    }
                }
            }
        }
        let data = acc.into_iter().map(T::from_f64_lossy).collect();
        Ok(Reduction::Tensor(Tensor {
            shape: out_shape,
            data,
        }))
    }

    fn check_axis(&self, axis: usize) -> Result<()> {
        if axis >= self.rank() {
            return Err(Error::InvalidAxis {
                axis,
                rank: self.rank(),
            });
        }
        Ok(())
    }

    /// Reverse the order of elements along `axis`.
    pub fn flip(&self, axis: usize) -> Result<Tensor<T>> {
        self.check_axis(axis)?;
        let extent = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        let outer: usize = self.shape[..axis].iter().product();
        let mut data = Vec::with_capacity(self.data.len());
        for o in 0..outer {
            for i in (0..extent).rev() {
                let start = (o * extent + i) * inner;
                data.extend_from_slice(&self.data[start..start + inner]);
            }
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    /// Translate contents by `offset` along `axis`; vacated slots take `fill`.
    pub fn shift(&self, axis: usize, offset: i64, fill: T) -> Result<Tensor<T>> {
        self.check_axis(axis)?;
        let extent = self.shape[axis] as i64;
        let inner: usize = self.shape[axis + 1..].iter().product();
        let outer: usize = self.shape[..axis].iter().product();
        let mut data = vec![fill; self.data.len()];
        for o in 0..outer {
            for dst in 0..extent {
                let src = dst - offset;
                if src < 0 || src >= extent {
                    continue;
                }
                let d = (o * extent as usize + dst as usize) * inner;
                let s = (o * extent as usize + src as usize) * inner;
                data[d..d + inner].copy_from_slice(&self.data[s..s + inner]);
            }
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }
}
