//! Dense tensor compute core.
//!
//! Row-major contiguous storage, NCHW layout for 4-D image batches. Every
//! layer op comes as a forward/backward pair with hand-derived analytic
//! gradients; [`gradcheck`] verifies them against central finite differences
//! in `f64` mode.

pub mod checkpoint;
pub mod conv;
pub mod dense;
pub mod gradcheck;
pub mod ops;
pub mod pool;
pub mod rmsprop;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use conv::Conv2d;
pub use dense::Dense;
pub use rmsprop::RmsProp;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![S::zero(); shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: S) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if data.len() != expect {
            return Err(Error::ShapeMismatch {
                op: "from_vec",
                lhs: shape.to_vec(),
                rhs: vec![data.len()],
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    /// Reinterpret under a new shape with the same element count.
    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Extents of a 4-D tensor as (n, c, h, w).
    pub fn dims4(&self, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        if self.shape.len() != 4 {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape.clone(),
                rhs: vec![4],
            });
        }
        Ok((self.shape[0], self.shape[1], self.shape[2], self.shape[3]))
    }

    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        if self.shape.len() != 2 {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape.clone(),
                rhs: vec![2],
            });
        }
        Ok((self.shape[0], self.shape[1]))
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&mut self, factor: S) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    /// Elementwise addition of a same-shape tensor.
    pub fn add_assign(&mut self, other: &Tensor<S>) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op: "add_assign",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Convert element type, used to promote f32 models into f64 verification mode.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| T::from_f64(v.to_f64())).collect(),
        }
    }
}

/// Elementwise product with broadcasting of singleton axes in `mask`
/// (4-D only; every axis of `mask` must equal the input's or be 1).
pub fn broadcast_mul<S: Scalar>(input: &Tensor<S>, mask: &Tensor<S>) -> Result<Tensor<S>> {
    let (n, c, h, w) = input.dims4("broadcast_mul")?;
    let (mn, mc, mh, mw) = mask.dims4("broadcast_mul")?;
    for &(big, small) in &[(n, mn), (c, mc), (h, mh), (w, mw)] {
        if small != big && small != 1 {
            return Err(Error::ShapeMismatch {
                op: "broadcast_mul",
                lhs: input.shape.to_vec(),
                rhs: mask.shape.to_vec(),
            });
        }
    }
    let mut out = Tensor::zeros(input.shape());
    let (sn, sc, sh, sw) = mask_strides(mn, mc, mh, mw);
    let mut idx = 0;
    for ni in 0..n {
        for ci in 0..c {
            for hi in 0..h {
                let row = ni * sn + ci * sc + hi * sh;
                for wi in 0..w {
                    out.data[idx] = input.data[idx] * mask.data[row + wi * sw];
                    idx += 1;
                }
            }
        }
    }
    Ok(out)
}

/// Backward of [`broadcast_mul`]: gradient for the full-size operand and the
/// mask, with the mask's gradient summed over its broadcast axes.
pub fn broadcast_mul_backward<S: Scalar>(
    input: &Tensor<S>,
    mask: &Tensor<S>,
    grad_out: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>)> {
    let (n, c, h, w) = input.dims4("broadcast_mul_backward")?;
    let (mn, mc, mh, mw) = mask.dims4("broadcast_mul_backward")?;
    let mut grad_input = Tensor::zeros(input.shape());
    let mut grad_mask = Tensor::zeros(mask.shape());
    let (sn, sc, sh, sw) = mask_strides(mn, mc, mh, mw);
    let mut idx = 0;
    for ni in 0..n {
        for ci in 0..c {
            for hi in 0..h {
                let row = ni * sn + ci * sc + hi * sh;
                for wi in 0..w {
                    let m = row + wi * sw;
                    grad_input.data[idx] = grad_out.data[idx] * mask.data[m];
                    grad_mask.data[m] += grad_out.data[idx] * input.data[idx];
                    idx += 1;
                }
            }
        }
    }
    Ok((grad_input, grad_mask))
}

fn mask_strides(mn: usize, mc: usize, mh: usize, mw: usize) -> (usize, usize, usize, usize) {
    // A stride of 0 pins a broadcast (singleton) axis.
    let sw = if mw == 1 { 0 } else { 1 };
    let sh = if mh == 1 { 0 } else { mw };
    let sc = if mc == 1 { 0 } else { mh * mw };
    let sn = if mn == 1 { 0 } else { mc * mh * mw };
    (sn, sc, sh, sw)
}
