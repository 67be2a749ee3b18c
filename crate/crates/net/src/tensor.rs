use oled_core::Real;

use crate::error::{NetError, Result};

/// Dense `(batch, channels, height, width)` array, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T> {
    pub dims: [usize; 4],
    pub data: Vec<T>,
}

impl<T: Real> Tensor4<T> {
    pub fn zeros(dims: [usize; 4]) -> Self {
        Tensor4 { dims, data: vec![T::zero(); dims.iter().product()] }
    }

    pub fn from_vec(dims: [usize; 4], data: Vec<T>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(NetError::Shape(format!("tensor dims {dims:?} must all be >= 1")));
        }
        if data.len() != dims.iter().product::<usize>() {
            return Err(NetError::Shape(format!("{} values for dims {dims:?}", data.len())));
        }
        Ok(Tensor4 { dims, data })
    }

    #[inline]
    pub fn batch(&self) -> usize {
        self.dims[0]
    }
    #[inline]
    pub fn channels(&self) -> usize {
        self.dims[1]
    }
    /// `height * width`.
    #[inline]
    pub fn plane(&self) -> usize {
        self.dims[2] * self.dims[3]
    }
    /// Values of one batch item, `(c, h, w)` order.
    #[inline]
    pub fn item(&self, b: usize) -> &[T] {
        let n = self.dims[1] * self.plane();
        &self.data[b * n..(b + 1) * n]
    }
    #[inline]
    pub fn item_mut(&mut self, b: usize) -> &mut [T] {
        let n = self.dims[1] * self.plane();
        &mut self.data[b * n..(b + 1) * n]
    }
    #[inline]
    pub fn at(&self, b: usize, c: usize, y: usize, x: usize) -> T {
        self.data[((b * self.dims[1] + c) * self.dims[2] + y) * self.dims[3] + x]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor4 { dims: self.dims, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn cast<U: Real>(&self) -> Tensor4<U> {
        Tensor4 { dims: self.dims, data: self.data.iter().map(|v| U::lit(v.as_f64())).collect() }
    }

    pub fn expect_dims(&self, dims: [usize; 4], what: &str) -> Result<()> {
        if self.dims != dims {
            return Err(NetError::Shape(format!("{what}: expected {dims:?}, got {:?}", self.dims)));
        }
        Ok(())
    }
}
