//! 2-D convolution (cross-correlation semantics), stride 1, same padding.
//!
//! Lowered to im2col + gemm per batch element; the backward pass reuses the
//! same lowering for the weight gradient and scatters through col2im for the
//! input gradient.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::Tensor;

#[derive(Debug, Clone)]
pub struct Conv2d<S> {
    /// Filters, F x C x k x k.
    pub w: Tensor<S>,
    /// One bias per filter.
    pub b: Tensor<S>,
}

#[derive(Debug, Clone)]
pub struct Conv2dGrads<S> {
    pub w: Tensor<S>,
    pub b: Tensor<S>,
}

impl<S: Scalar> Conv2d<S> {
    /// Kaiming-uniform fan-in initialization, zero bias.
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, rng: &mut impl Rng) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::InvalidConfig(format!(
                "conv kernel must be odd for same-padding, got {kernel}"
            )));
        }
        let fan_in = in_ch * kernel * kernel;
        let limit = (6.0 / fan_in as f64).sqrt();
        let data = (0..out_ch * fan_in)
            .map(|_| S::from_f64(rng.gen_range(-limit..limit)))
            .collect();
        Ok(Conv2d {
            w: Tensor::from_vec(&[out_ch, in_ch, kernel, kernel], data)?,
            b: Tensor::zeros(&[out_ch]),
        })
    }

    pub fn zeros(in_ch: usize, out_ch: usize, kernel: usize) -> Self {
        Conv2d {
            w: Tensor::zeros(&[out_ch, in_ch, kernel, kernel]),
            b: Tensor::zeros(&[out_ch]),
        }
    }

    pub fn kernel(&self) -> usize {
        self.w.shape()[2]
    }

    fn check_input(&self, x: &Tensor<S>, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        let (n, c, h, w) = x.dims4(op)?;
        if c != self.w.shape()[1] {
            return Err(Error::ShapeMismatch {
                op,
                lhs: x.shape().to_vec(),
                rhs: self.w.shape().to_vec(),
            });
        }
        Ok((n, c, h, w))
    }

    /// out[n,f,y,x] = b[f] + sum_{c,ky,kx} w[f,c,ky,kx] * in[n,c,y+ky-p,x+kx-p]
    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let (n, c, h, w) = self.check_input(x, "conv2d_fwd")?;
        let f = self.w.shape()[0];
        let k = self.kernel();
        let hw = h * w;
        let ckk = c * k * k;

        let mut out = Tensor::zeros(&[n, f, h, w]);
        let in_plane = c * hw;
        out.data
            .par_chunks_mut(f * hw)
            .zip(x.data.par_chunks(in_plane))
            .for_each(|(out_n, x_n)| {
                let cols = im2col(x_n, c, h, w, k);
                S::gemm(f, ckk, hw, S::one(), self.w.data(), &cols, S::zero(), out_n);
                for (fi, row) in out_n.chunks_mut(hw).enumerate() {
                    let bias = self.b.data()[fi];
                    for v in row {
                        *v += bias;
                    }
                }
            });
        Ok(out)
    }

    /// Analytic gradients w.r.t. input, weights and bias.
    pub fn backward(
        &self,
        x: &Tensor<S>,
        grad_out: &Tensor<S>,
    ) -> Result<(Tensor<S>, Conv2dGrads<S>)> {
        let (n, c, h, w) = self.check_input(x, "conv2d_bwd")?;
        let f = self.w.shape()[0];
        let k = self.kernel();
        if grad_out.shape() != [n, f, h, w] {
            return Err(Error::ShapeMismatch {
                op: "conv2d_bwd",
                lhs: grad_out.shape().to_vec(),
                rhs: vec![n, f, h, w],
            });
        }
        let hw = h * w;
        let ckk = c * k * k;
        let in_plane = c * hw;
        let out_plane = f * hw;

        // grad_input: per-element scatter, parallel over the batch axis.
        let mut grad_input = Tensor::zeros(x.shape());
        grad_input
            .data
            .par_chunks_mut(in_plane)
            .zip(grad_out.data.par_chunks(out_plane))
            .for_each(|(gx_n, go_n)| {
                let mut dcols = vec![S::zero(); ckk * hw];
                // dcols = W^T (ckk x f) * go_n (f x hw)
                S::gemm_strided(
                    ckk,
                    f,
                    hw,
                    S::one(),
                    self.w.data(),
                    1,
                    ckk as isize,
                    go_n,
                    hw as isize,
                    1,
                    S::zero(),
                    &mut dcols,
                    hw as isize,
                    1,
                );
                col2im(&dcols, c, h, w, k, gx_n);
            });

        // Weight/bias gradients accumulate sequentially in batch order so the
        // float summation order is fixed.
        let mut gw = Tensor::zeros(self.w.shape());
        let mut gb = Tensor::zeros(self.b.shape());
        for ni in 0..n {
            let x_n = &x.data[ni * in_plane..(ni + 1) * in_plane];
            let go_n = &grad_out.data[ni * out_plane..(ni + 1) * out_plane];
            let cols = im2col(x_n, c, h, w, k);
            // gw += go_n (f x hw) * cols^T (hw x ckk)
            S::gemm_strided(
                f,
                hw,
                ckk,
                S::one(),
                go_n,
                hw as isize,
                1,
                &cols,
                1,
                hw as isize,
                S::one(),
                gw.data_mut(),
                ckk as isize,
                1,
            );
            for (fi, row) in go_n.chunks(hw).enumerate() {
                let mut acc = S::zero();
                for &v in row {
                    acc += v;
                }
                gb.data_mut()[fi] += acc;
            }
        }

        Ok((grad_input, Conv2dGrads { w: gw, b: gb }))
    }
}

/// Lower one C x H x W plane into a (C*k*k) x (H*W) patch matrix with zero
/// padding of k/2 on each side.
pub fn im2col<S: Scalar>(x: &[S], c: usize, h: usize, w: usize, k: usize) -> Vec<S> {
    let pad = (k / 2) as isize;
    let hw = h * w;
    let mut cols = vec![S::zero(); c * k * k * hw];
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * hw;
                let dx = kx as isize - pad;
                // valid output columns: 0 <= ow + dx < w
                let ow_lo = (-dx).max(0) as usize;
                let ow_hi = ((w as isize - dx).min(w as isize)).max(0) as usize;
                if ow_lo >= ow_hi {
                    continue;
                }
                let span = ow_hi - ow_lo;
                for oh in 0..h {
                    let ih = oh as isize + ky as isize - pad;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let src = ih as usize * w + (ow_lo as isize + dx) as usize;
                    let dst = row + oh * w + ow_lo;
                    cols[dst..dst + span].copy_from_slice(&plane[src..src + span]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add patch-matrix gradients back onto the
/// input plane.
pub fn col2im<S: Scalar>(cols: &[S], c: usize, h: usize, w: usize, k: usize, out: &mut [S]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * hw;
                let dx = kx as isize - pad;
                let ow_lo = (-dx).max(0) as usize;
                let ow_hi = ((w as isize - dx).min(w as isize)).max(0) as usize;
                if ow_lo >= ow_hi {
                    continue;
                }
                for oh in 0..h {
                    let ih = oh as isize + ky as isize - pad;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let src = row + oh * w + ow_lo;
                    let dst = ci * hw + ih as usize * w + (ow_lo as isize + dx) as usize;
                    for i in 0..ow_hi - ow_lo {
                        out[dst + i] += cols[src + i];
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv_with_weights(w: Tensor<f64>, b: Tensor<f64>) -> Conv2d<f64> {
        Conv2d { w, b }
    }

    #[test]
    fn identity_kernel_is_identity_map() {
        let conv = conv_with_weights(
            Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap(),
            Tensor::zeros(&[1]),
        );
        let x = Tensor::from_vec(&[1, 1, 3, 3], (1..=9).map(|v| v as f64).collect()).unwrap();
        let y = conv.forward(&x).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn ones_kernel_counts_valid_taps() {
        let conv = conv_with_weights(Tensor::filled(&[1, 1, 3, 3], 1.0), Tensor::zeros(&[1]));
        let x = Tensor::filled(&[1, 1, 3, 3], 1.0);
        let y = conv.forward(&x).unwrap();
        // zero-padded rim: corners see 4 taps, edges 6, center 9
        assert_eq!(y.data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn rejects_channel_mismatch_naming_both_shapes() {
        let conv = Conv2d::<f64>::zeros(2, 4, 3);
        let x = Tensor::filled(&[1, 3, 5, 5], 1.0);
        let err = conv.forward(&x).unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("[1, 3, 5, 5]") && msg.contains("[4, 2, 3, 3]"),
            "{msg}"
        );
    }

    #[test]
    fn rejects_even_kernel() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        assert!(Conv2d::<f32>::new(1, 1, 4, &mut rng).is_err());
    }

    use rand::SeedableRng;

    #[test]
    fn im2col_col2im_are_adjoint() {
        // <im2col(x), y> == <x, col2im(y)> for random x, y
        use rand::Rng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let (c, h, w, k) = (2, 5, 4, 3);
        let x: Vec<f64> = (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..c * k * k * h * w)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let cx = im2col(&x, c, h, w, k);
        let lhs: f64 = cx.iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; c * h * w];
        col2im(&y, c, h, w, k, &mut back);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
    }
}
