//! Dense row-major float64 tensors. Storage only; differentiable operations
//! live in [`crate::ops`] and run through a [`crate::tape::Tape`].

use crate::error::{shape_err, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(shape_err(
                "Tensor::new",
                format!("dims {:?} need {} elements, got {}", dims, n, data.len()),
            ));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(crate::error::Error::Numerics(
                "tensor construction with non-finite values".into(),
            ));
        }
        Ok(Self { dims: dims.to_vec(), data })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let n = dims.iter().product();
        Self { dims: dims.to_vec(), data: vec![0.0; n] }
    }

    pub fn full(dims: &[usize], value: f64) -> Self {
        let n = dims.iter().product();
        Self { dims: dims.to_vec(), data: vec![value; n] }
    }

    pub fn scalar(value: f64) -> Self {
        Self { dims: vec![], data: vec![value] }
    }

    pub fn eye(d: usize) -> Self {
        let mut t = Self::zeros(&[d, d]);
        for i in 0..d {
            t.data[i * d + i] = 1.0;
        }
        t
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Scalar tensors (`dims == []`) hold exactly one value.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(shape_err("Tensor::item", format!("dims {:?} not scalar", self.dims)));
        }
        Ok(self.data[0])
    }

    pub fn reshaped(&self, dims: &[usize]) -> Result<Self> {
        Self::new(dims, self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { dims: self.dims.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.dims, other.dims, "max_abs_diff dims");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn frob_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Row-major offset of a 4-d index.
#[inline]
pub fn idx4(dims: &[usize], b: usize, c: usize, y: usize, x: usize) -> usize {
    ((b * dims[1] + c) * dims[2] + y) * dims[3] + x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_validates_length_and_finiteness() {
        assert!(Tensor::new(&[2, 2], vec![1.0; 4]).is_ok());
        assert!(Tensor::new(&[2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(&[2], vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::new(&[2], vec![1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn eye_and_item_and_reshape() {
        let i = Tensor::eye(3);
        assert_eq!(i.data()[0], 1.0);
        assert_eq!(i.data()[1], 0.0);
        assert_eq!(i.data()[4], 1.0);
        assert_eq!(Tensor::scalar(2.5).item().unwrap(), 2.5);
        assert!(i.item().is_err());
        let r = i.reshaped(&[9]).unwrap();
        assert_eq!(r.dims(), &[9]);
        assert!(i.reshaped(&[8]).is_err());
    }

    #[test]
    fn max_abs_diff_and_frob_norm() {
        let a = Tensor::new(&[2], vec![3.0, 4.0]).unwrap();
        let b = Tensor::new(&[2], vec![3.0, 4.5]).unwrap();
        assert_eq!(a.max_abs_diff(&b), 0.5);
        assert_eq!(a.frob_norm(), 5.0);
    }
}
