//! RMSProp parameter updates.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::Tensor;

/// acc <- rho * acc + (1 - rho) * g^2 ; p <- p - lr * g / (sqrt(acc) + eps)
#[derive(Debug, Clone)]
pub struct RmsProp<S> {
    pub lr: S,
    pub rho: S,
    pub eps: S,
    acc: Vec<Tensor<S>>,
}

impl<S: Scalar> RmsProp<S> {
    pub fn new(lr: f64) -> Self {
        RmsProp {
            lr: S::from_f64(lr),
            rho: S::from_f64(0.9),
            eps: S::from_f64(1e-8),
            acc: Vec::new(),
        }
    }

    /// Per-parameter accumulators, zero-initialized on first step.
    pub fn accumulators(&self) -> &[Tensor<S>] {
        &self.acc
    }

    pub fn step(&mut self, params: &mut [&mut Tensor<S>], grads: &[&Tensor<S>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::ShapeMismatch {
                op: "rmsprop_step",
                lhs: vec![params.len()],
                rhs: vec![grads.len()],
            });
        }
        if self.acc.is_empty() {
            self.acc = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        }
        let one_minus_rho = S::one() - self.rho;
        for ((p, g), acc) in params.iter_mut().zip(grads).zip(&mut self.acc) {
            if p.shape() != g.shape() || p.shape() != acc.shape() {
                return Err(Error::ShapeMismatch {
                    op: "rmsprop_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            for ((pv, &gv), av) in p.data_mut().iter_mut().zip(g.data()).zip(acc.data_mut()) {
                *av = self.rho * *av + one_minus_rho * gv * gv;
                *pv = *pv - self.lr * gv / (av.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
