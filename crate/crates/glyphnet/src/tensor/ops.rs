//! Elementwise activations and the binary cross-entropy loss.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::Tensor;

pub fn relu<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    x.map(|v| if v > S::zero() { v } else { S::zero() })
}

/// Subgradient 0 at x = 0; the mask comes off the forward output, which is
/// equivalent since out > 0 iff in > 0.
pub fn relu_backward<S: Scalar>(out: &Tensor<S>, grad_out: &Tensor<S>) -> Tensor<S> {
    let mut g = grad_out.clone();
    for (gv, &ov) in g.data_mut().iter_mut().zip(out.data()) {
        if ov <= S::zero() {
            *gv = S::zero();
        }
    }
    g
}

/// Numerically stable logistic: evaluates exp only on the negative half-line,
/// so large |x| saturates to 0 or 1 instead of producing NaN.
pub fn sigmoid_scalar<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

pub fn sigmoid<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    x.map(sigmoid_scalar)
}

pub fn sigmoid_backward<S: Scalar>(out: &Tensor<S>, grad_out: &Tensor<S>) -> Tensor<S> {
    let mut g = grad_out.clone();
    for (gv, &ov) in g.data_mut().iter_mut().zip(out.data()) {
        *gv = *gv * ov * (S::one() - ov);
    }
    g
}

pub const BCE_EPSILON: f64 = 1e-7;

/// Mean over the batch of -[y ln p + (1-y) ln(1-p)], with p clamped to
/// [eps, 1-eps]. Returns the loss and its gradient w.r.t. p.
pub fn bce_loss<S: Scalar>(predictions: &Tensor<S>, labels: &[S]) -> Result<(S, Tensor<S>)> {
    if predictions.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "bce_loss",
            lhs: predictions.shape().to_vec(),
            rhs: vec![labels.len()],
        });
    }
    if labels.is_empty() {
        return Err(Error::EmptyInput("bce_loss"));
    }
    let eps = S::from_f64(BCE_EPSILON);
    let one = S::one();
    let inv_n = one / S::from_f64(labels.len() as f64);
    let mut grad = Tensor::zeros(predictions.shape());
    let mut loss = S::zero();
    for (i, (&p_raw, &y)) in predictions.data().iter().zip(labels).enumerate() {
        let p = p_raw.max(eps).min(one - eps);
        loss += -(y * p.ln() + (one - y) * (one - p).ln());
        // d/dp of the mean; zero once p is pinned at a clamp boundary
        if p_raw > eps && p_raw < one - eps {
            grad.data_mut()[i] = ((one - y) / (one - p) - y / p) * inv_n;
        }
    }
    Ok((loss * inv_n, grad))
}

/// Gradient of the mean BCE w.r.t. the pre-sigmoid logits: (p - y) / n.
///
/// Training must use this fused form rather than chaining
/// [`bce_loss`] through [`sigmoid_backward`]: the chain rule carries a
/// p(1 - p) factor that underflows to exactly zero in f32 once |logit|
/// exceeds ~17, which permanently freezes confidently-wrong predictions.
pub fn bce_logit_grad<S: Scalar>(probs: &Tensor<S>, labels: &[S]) -> Result<Tensor<S>> {
    if probs.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "bce_logit_grad",
            lhs: probs.shape().to_vec(),
            rhs: vec![labels.len()],
        });
    }
    if labels.is_empty() {
        return Err(Error::EmptyInput("bce_logit_grad"));
    }
    let inv_n = S::one() / S::from_f64(labels.len() as f64);
    let mut grad = probs.clone();
    for (g, &y) in grad.data_mut().iter_mut().zip(labels) {
        *g = (*g - y) * inv_n;
    }
    Ok(grad)
}
