use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};

/// Extents of a rank-4 tensor in (batch, channel, height, width) order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Dims { n, c, h, w }
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn as_array(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

impl From<[usize; 4]> for Dims {
    fn from(a: [usize; 4]) -> Self {
        Dims::new(a[0], a[1], a[2], a[3])
    }
}

/// Dense rank-4 array of `f64` in row-major NCHW layout, with an optional
/// gradient buffer of the same length.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dims: Dims,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn from_vec(dims: impl Into<Dims>, data: Vec<f64>) -> Result<Self> {
        let dims = dims.into();
        if data.len() != dims.numel() {
            return Err(Error::shape(
                "tensor",
                "length",
                format!("{} values for dims {}", data.len(), dims),
            ));
        }
        Ok(Tensor { dims, data, grad: None })
    }

    pub fn zeros(dims: impl Into<Dims>) -> Self {
        Self::full(dims, 0.0)
    }

    pub fn ones(dims: impl Into<Dims>) -> Self {
        Self::full(dims, 1.0)
    }

    pub fn full(dims: impl Into<Dims>, value: f64) -> Self {
        let dims = dims.into();
        Tensor {
            dims,
            data: vec![value; dims.numel()],
            grad: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::full([1, 1, 1, 1], value)
    }

    /// Column vector laid out as (1, len, 1, 1).
    pub fn vector(values: &[f64]) -> Self {
        Tensor {
            dims: Dims::new(1, values.len(), 1, 1),
            data: values.to_vec(),
            grad: None,
        }
    }

    pub fn uniform<R: Rng + ?Sized>(dims: impl Into<Dims>, lo: f64, hi: f64, rng: &mut R) -> Self {
        let dims = dims.into();
        let dist = Uniform::new(lo, hi);
        let data = (0..dims.numel()).map(|_| dist.sample(rng)).collect();
        Tensor { dims, data, grad: None }
    }

    pub fn normal<R: Rng + ?Sized>(dims: impl Into<Dims>, std: f64, rng: &mut R) -> Self {
        let dims = dims.into();
        let dist = Normal::new(0.0, std).expect("finite std");
        let data = (0..dims.numel()).map(|_| dist.sample(rng)).collect();
        Tensor { dims, data, grad: None }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<f64>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::shape(
                "set_grad",
                "length",
                format!("{} grad values for {} data values", grad.len(), self.data.len()),
            ));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn take_grad(&mut self) -> Option<Vec<f64>> {
        self.grad.take()
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.dims.c + c) * self.dims.h + h) * self.dims.w + w
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.index(n, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, value: f64) {
        let i = self.index(n, c, h, w);
        self.data[i] = value;
    }

    /// One (h, w) plane.
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let p = self.dims.plane();
        let start = (n * self.dims.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f64] {
        let p = self.dims.plane();
        let start = (n * self.dims.c + c) * p;
        &mut self.data[start..start + p]
    }

    /// Reinterprets the buffer under new extents with the same element count.
    pub fn reshape(mut self, dims: impl Into<Dims>) -> Result<Self> {
        let dims = dims.into();
        if dims.numel() != self.data.len() {
            return Err(Error::shape("reshape", "length", format!("{} -> {}", self.dims, dims)));
        }
        self.dims = dims;
        if let Some(g) = self.grad.as_ref() {
            debug_assert_eq!(g.len(), self.data.len());
        }
        Ok(self)
    }

    /// Sample `i` of the batch as a (1, c, h, w) tensor.
    pub fn batch_item(&self, i: usize) -> Tensor {
        let per = self.dims.c * self.dims.plane();
        Tensor {
            dims: Dims::new(1, self.dims.c, self.dims.h, self.dims.w),
            data: self.data[i * per..(i + 1) * per].to_vec(),
            grad: None,
        }
    }

    /// Stacks equally shaped tensors along the batch axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::shape("stack", "batch", "no tensors to stack"))?;
        let d = first.dims;
        let mut data = Vec::with_capacity(d.numel() * items.len());
        let mut n = 0;
        for t in items {
            let td = t.dims;
            if (td.c, td.h, td.w) != (d.c, d.h, d.w) {
                return Err(Error::shape("stack", "channel/spatial", format!("{} vs {}", td, d)));
            }
            data.extend_from_slice(&t.data);
            n += td.n;
        }
        Tensor::from_vec([n, d.c, d.h, d.w], data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.dims, other.dims, "max_abs_diff on mismatched dims");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
            grad: None,
        }
    }

    /// Mirrors every plane left-to-right.
    pub fn flip_horizontal(&self) -> Tensor {
        let d = self.dims;
        let mut out = self.clone();
        out.grad = None;
        for (src, dst) in self.data.chunks(d.w).zip(out.data.chunks_mut(d.w)) {
            for (j, v) in src.iter().enumerate() {
                dst[d.w - 1 - j] = *v;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::from_vec([1, 2, 2, 2], vec![0.0; 8]).is_ok());
        let err = Tensor::from_vec([1, 2, 2, 2], vec![0.0; 7]).unwrap_err();
        assert!(matches!(err, Error::Shape { axis: "length", .. }));
    }

    #[test]
    fn grad_length_must_match() {
        let mut t = Tensor::zeros([1, 1, 2, 2]);
        assert!(t.set_grad(vec![0.0; 3]).is_err());
        t.set_grad(vec![1.0; 4]).unwrap();
        assert_eq!(t.grad().unwrap(), &[1.0; 4]);
    }

    #[test]
    fn flip_is_involution() {
        let t = Tensor::from_vec([1, 2, 2, 3], (0..12).map(f64::from).collect()).unwrap();
        let f = t.flip_horizontal();
        assert_eq!(f.at(0, 0, 0, 0), 2.0);
        assert_eq!(f.at(0, 1, 1, 2), 9.0);
        assert_eq!(f.flip_horizontal(), t);
    }

    #[test]
    fn stack_and_batch_item() {
        let a = Tensor::full([1, 2, 1, 1], 1.0);
        let b = Tensor::full([1, 2, 1, 1], 2.0);
        let s = Tensor::stack(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(s.dims(), Dims::new(2, 2, 1, 1));
        assert_eq!(s.batch_item(1), b);
        assert!(Tensor::stack(&[a, Tensor::zeros([1, 3, 1, 1])]).is_err());
    }
}
