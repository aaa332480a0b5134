//! Fully-connected layer.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::Tensor;

#[derive(Debug, Clone)]
pub struct Dense<S> {
    /// D x M weight matrix.
    pub w: Tensor<S>,
    /// M biases.
    pub b: Tensor<S>,
}

#[derive(Debug, Clone)]
pub struct DenseGrads<S> {
    pub w: Tensor<S>,
    pub b: Tensor<S>,
}

impl<S: Scalar> Dense<S> {
    /// Kaiming-uniform fan-in initialization, zero bias.
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / in_dim as f64).sqrt();
        let data = (0..in_dim * out_dim)
            .map(|_| S::from_f64(rng.gen_range(-limit..limit)))
            .collect();
        Dense {
            w: Tensor::from_vec(&[in_dim, out_dim], data).unwrap(),
            b: Tensor::zeros(&[out_dim]),
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Dense {
            w: Tensor::zeros(&[in_dim, out_dim]),
            b: Tensor::zeros(&[out_dim]),
        }
    }

    /// out = x (N x D) * w (D x M) + b
    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let (n, d) = x.dims2("dense_fwd")?;
        let (wd, m) = self.w.dims2("dense_fwd")?;
        if d != wd {
            return Err(Error::ShapeMismatch {
                op: "dense_fwd",
                lhs: x.shape().to_vec(),
                rhs: self.w.shape().to_vec(),
            });
        }
        let mut out = Tensor::zeros(&[n, m]);
        S::gemm(
            n,
            d,
            m,
            S::one(),
            x.data(),
            self.w.data(),
            S::zero(),
            out.data_mut(),
        );
        for row in out.data_mut().chunks_mut(m) {
            for (v, &bias) in row.iter_mut().zip(self.b.data()) {
                *v += bias;
            }
        }
        Ok(out)
    }

    pub fn backward(
        &self,
        x: &Tensor<S>,
        grad_out: &Tensor<S>,
    ) -> Result<(Tensor<S>, DenseGrads<S>)> {
        let (n, d) = x.dims2("dense_bwd")?;
        let (_, m) = self.w.dims2("dense_bwd")?;
        if grad_out.shape() != [n, m] {
            return Err(Error::ShapeMismatch {
                op: "dense_bwd",
                lhs: grad_out.shape().to_vec(),
                rhs: vec![n, m],
            });
        }
        // grad_w = x^T (D x N) * grad_out (N x M)
        let mut gw = Tensor::zeros(&[d, m]);
        S::gemm_strided(
            d,
            n,
            m,
            S::one(),
            x.data(),
            1,
            d as isize,
            grad_out.data(),
            m as isize,
            1,
            S::zero(),
            gw.data_mut(),
            m as isize,
            1,
        );
        let mut gb = Tensor::zeros(&[m]);
        for row in grad_out.data().chunks(m) {
            for (acc, &g) in gb.data_mut().iter_mut().zip(row) {
                *acc += g;
            }
        }
        // grad_x = grad_out (N x M) * w^T (M x D)
        let mut gx = Tensor::zeros(&[n, d]);
        S::gemm_strided(
            n,
            m,
            d,
            S::one(),
            grad_out.data(),
            m as isize,
            1,
            self.w.data(),
            1,
            m as isize,
            S::zero(),
            gx.data_mut(),
            d as isize,
            1,
        );
        Ok((gx, DenseGrads { w: gw, b: gb }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weights_zero_bias_is_identity() {
        let layer = Dense {
            w: Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            b: Tensor::zeros(&[2]),
        };
        let x = Tensor::from_vec(&[1, 2], vec![3.0, -4.0]).unwrap();
        assert_eq!(layer.forward(&x).unwrap(), x);
    }

    #[test]
    fn hand_case_1x2_times_2x1() {
        let layer = Dense {
            w: Tensor::from_vec(&[2, 1], vec![3.0, 4.0]).unwrap(),
            b: Tensor::zeros(&[1]),
        };
        let x = Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap();
        assert_eq!(layer.forward(&x).unwrap().data(), &[11.0]);
    }

    #[test]
    fn mismatch_error_names_both_shapes() {
        let layer = Dense::<f64>::zeros(3, 2);
        let x = Tensor::zeros(&[1, 4]);
        let msg = layer.forward(&x).unwrap_err().to_string();
        assert!(msg.contains("[1, 4]") && msg.contains("[3, 2]"), "{msg}");
    }
}
