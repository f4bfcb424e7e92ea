//! Dense `(n, h, w, c)` tensors and the numerical kernels used by the
//! networks: convolution, average pooling, ReLU, channel concatenation and
//! spatial slicing. Every kernel has an explicit backward function; there is
//! no autodiff tape.

mod activation;
pub(crate) mod conv;
pub mod gradcheck;
mod layout;
mod pool;
mod real;

pub use activation::{relu_backward, relu_forward, Activation};
pub use conv::{conv2d_backward, conv2d_forward, ConvFilter, ConvGrads, Padding};
pub use layout::{concat_channels, concat_channels_backward, slice_patch, slice_patch_backward};
pub use pool::{
    avgpool_backward, avgpool_forward, global_avgpool_backward, global_avgpool_forward, PoolGeometry,
};
pub use real::{pairwise_sum, Real};

use crate::error::{Error, Result};

/// Tensor dimensions in `(batch, height, width, channels)` order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape {
    pub fn new(n: usize, h: usize, w: usize, c: usize) -> Result<Self> {
        if n == 0 || h == 0 || w == 0 || c == 0 {
            return Err(Error::config(format!(
                "tensor dimensions must be >= 1, got {n}x{h}x{w}x{c}"
            )));
        }
        Ok(Shape { n, h, w, c })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n * self.h * self.w * self.c
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of spatial positions in one batch item.
    #[inline]
    pub fn pixels(&self) -> usize {
        self.h * self.w
    }

    #[inline]
    pub fn offset(&self, n: usize, y: usize, x: usize, c: usize) -> usize {
        debug_assert!(n < self.n && y < self.h && x < self.w && c < self.c);
        ((n * self.h + y) * self.w + x) * self.c + c
    }

    #[inline]
    pub fn item_len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn with_channels(self, c: usize) -> Self {
        Shape { c, ..self }
    }

    pub fn with_batch(self, n: usize) -> Self {
        Shape { n, ..self }
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.h, self.w, self.c)
    }
}

/// Axis-aligned spatial rectangle in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Window {
    pub y: usize,
    pub x: usize,
    pub h: usize,
    pub w: usize,
}

impl Window {
    pub fn new(y: usize, x: usize, h: usize, w: usize) -> Self {
        Window { y, x, h, w }
    }

    pub fn fits(&self, h: usize, w: usize) -> bool {
        self.h > 0 && self.w > 0 && self.y + self.h <= h && self.x + self.w <= w
    }
}

/// Dense row-major `(n, h, w, c)` array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![T::zero(); shape.len()],
        }
    }

    pub fn filled(shape: Shape, value: T) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::config(format!(
                "tensor of shape {shape} needs {} values, got {}",
                shape.len(),
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
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
    pub fn at(&self, n: usize, y: usize, x: usize, c: usize) -> T {
        self.data[self.shape.offset(n, y, x, c)]
    }

    #[inline]
    pub fn at_mut(&mut self, n: usize, y: usize, x: usize, c: usize) -> &mut T {
        let i = self.shape.offset(n, y, x, c);
        &mut self.data[i]
    }

    /// All channels at one spatial position.
    #[inline]
    pub fn pixel(&self, n: usize, y: usize, x: usize) -> &[T] {
        let start = self.shape.offset(n, y, x, 0);
        &self.data[start..start + self.shape.c]
    }

    #[inline]
    pub fn pixel_mut(&mut self, n: usize, y: usize, x: usize) -> &mut [T] {
        let start = self.shape.offset(n, y, x, 0);
        let c = self.shape.c;
        &mut self.data[start..start + c]
    }

    pub fn item(&self, n: usize) -> &[T] {
        let len = self.shape.item_len();
        &self.data[n * len..(n + 1) * len]
    }

    /// Copies batch item `n` into its own `(1, h, w, c)` tensor.
    pub fn item_tensor(&self, n: usize) -> Tensor<T> {
        Tensor {
            shape: self.shape.with_batch(1),
            data: self.item(n).to_vec(),
        }
    }

    /// Stacks tensors with identical `(h, w, c)` along the batch axis.
    pub fn stack(items: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let first = items
            .first()
            .ok_or_else(|| Error::config("cannot stack an empty list of tensors"))?;
        let base = first.shape;
        let mut data = Vec::new();
        let mut n = 0;
        for t in items {
            let s = t.shape;
            if (s.h, s.w, s.c) != (base.h, base.w, base.c) {
                return Err(Error::config(format!(
                    "cannot stack {s} with {base}: spatial/channel dims differ"
                )));
            }
            data.extend_from_slice(&t.data);
            n += s.n;
        }
        Ok(Tensor {
            shape: base.with_batch(n),
            data,
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest absolute elementwise difference; `None` when shapes differ.
    pub fn max_abs_diff(&self, other: &Tensor<T>) -> Option<T> {
        if self.shape != other.shape {
            return None;
        }
        Some(
            self.data
                .iter()
                .zip(&other.data)
                .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())),
        )
    }

    pub(crate) fn expect_shape(&self, expected: Shape, what: &str) -> Result<()> {
        if self.shape != expected {
            return Err(Error::config(format!(
                "{what}: expected shape {expected}, got {}",
                self.shape
            )));
        }
        Ok(())
    }
}
