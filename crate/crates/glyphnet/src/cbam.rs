//! Convolutional block attention: a channel gate followed by a spatial gate.
//!
//! Mc = sigmoid(MLP(avgpool F) + MLP(maxpool F))        (N x C x 1 x 1)
//! Ms = sigmoid(conv[k x k](concat(chan_avg F', chan_max F')))  (N x 1 x H x W)
//! F' = Mc (*) F, F'' = Ms (*) F'. The two-layer MLP is shared between the
//! pooling branches with hidden width C / r.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::conv::{Conv2d, Conv2dGrads};
use crate::tensor::dense::{Dense, DenseGrads};
use crate::tensor::ops::{relu, relu_backward, sigmoid, sigmoid_backward};
use crate::tensor::pool::{
    channel_avg, channel_avg_backward, channel_max, channel_max_backward, concat_channels,
    global_avg_pool, global_avg_pool_backward, global_max_pool, global_max_pool_backward,
    split_channels,
};
use crate::tensor::{broadcast_mul, broadcast_mul_backward, Tensor};

pub const DEFAULT_REDUCTION: usize = 8;
pub const DEFAULT_SPATIAL_KERNEL: usize = 7;
/// Initial bias on both gate outputs; sigmoid(2) ~ 0.88 keeps a fresh module
/// close to pass-through instead of halving every activation.
pub const GATE_WARM_START_BIAS: f64 = 2.0;

#[derive(Debug, Clone)]
pub struct CbamParams<S> {
    /// Shared MLP, C -> C/r.
    pub mlp1: Dense<S>,
    /// Shared MLP, C/r -> C.
    pub mlp2: Dense<S>,
    /// 2 -> 1 channels over the stacked avg/max maps.
    pub spatial: Conv2d<S>,
}

#[derive(Debug, Clone)]
pub struct CbamGrads<S> {
    pub mlp1: DenseGrads<S>,
    pub mlp2: DenseGrads<S>,
    pub spatial: Conv2dGrads<S>,
}

impl<S: Scalar> CbamParams<S> {
    pub fn new(
        channels: usize,
        reduction: usize,
        spatial_kernel: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if reduction == 0 || channels == 0 || channels % reduction != 0 {
            return Err(Error::InvalidConfig(format!(
                "cbam reduction {reduction} must divide channel count {channels}"
            )));
        }
        let mlp1 = Dense::new(channels, channels / reduction, rng);
        let mut mlp2 = Dense::new(channels / reduction, channels, rng);
        let mut spatial = Conv2d::new(2, 1, spatial_kernel, rng)?;
        // Warm-start both gates near pass-through (sigmoid(2) ~ 0.88). With
        // zero biases the eight gates of a four-block stack would each sit at
        // 0.5 and attenuate every forward signal by 2^-8, which stalls early
        // training; there is no batch norm here to compensate.
        let warm = S::from_f64(GATE_WARM_START_BIAS);
        for b in mlp2.b.data_mut() {
            *b = warm;
        }
        for b in spatial.b.data_mut() {
            *b = warm;
        }
        Ok(CbamParams {
            mlp1,
            mlp2,
            spatial,
        })
    }

    pub fn channels(&self) -> usize {
        self.mlp1.w.shape()[0]
    }

    /// Checkpoint/optimizer ordering: mlp1.w, mlp1.b, mlp2.w, mlp2.b,
    /// spatial.w, spatial.b.
    pub fn tensors(&self) -> Vec<&Tensor<S>> {
        vec![
            &self.mlp1.w,
            &self.mlp1.b,
            &self.mlp2.w,
            &self.mlp2.b,
            &self.spatial.w,
            &self.spatial.b,
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<S>> {
        vec![
            &mut self.mlp1.w,
            &mut self.mlp1.b,
            &mut self.mlp2.w,
            &mut self.mlp2.b,
            &mut self.spatial.w,
            &mut self.spatial.b,
        ]
    }

    pub fn cast<T: Scalar>(&self) -> CbamParams<T> {
        CbamParams {
            mlp1: Dense {
                w: self.mlp1.w.cast(),
                b: self.mlp1.b.cast(),
            },
            mlp2: Dense {
                w: self.mlp2.w.cast(),
                b: self.mlp2.b.cast(),
            },
            spatial: Conv2d {
                w: self.spatial.w.cast(),
                b: self.spatial.b.cast(),
            },
        }
    }
}

impl<S: Scalar> CbamGrads<S> {
    /// Same ordering as [`CbamParams::tensors`].
    pub fn tensors(&self) -> Vec<&Tensor<S>> {
        vec![
            &self.mlp1.w,
            &self.mlp1.b,
            &self.mlp2.w,
            &self.mlp2.b,
            &self.spatial.w,
            &self.spatial.b,
        ]
    }
}

/// Intermediates cached by [`cbam_forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct CbamCache<S> {
    avg2: Tensor<S>,
    max2: Tensor<S>,
    gmax_idx: Vec<u32>,
    h_avg: Tensor<S>,
    h_max: Tensor<S>,
    mc2: Tensor<S>,
    f_prime: Tensor<S>,
    cat: Tensor<S>,
    cmax_idx: Vec<u32>,
    ms: Tensor<S>,
}

struct ChannelParts<S> {
    mc4: Tensor<S>,
    avg2: Tensor<S>,
    max2: Tensor<S>,
    gmax_idx: Vec<u32>,
    h_avg: Tensor<S>,
    h_max: Tensor<S>,
    mc2: Tensor<S>,
}

fn channel_forward<S: Scalar>(f: &Tensor<S>, params: &CbamParams<S>) -> Result<ChannelParts<S>> {
    let (n, c, _, _) = f.dims4("channel_attention")?;
    let avg2 = global_avg_pool(f)?.reshape(&[n, c])?;
    let (max4, gmax_idx) = global_max_pool(f)?;
    let max2 = max4.reshape(&[n, c])?;
    let h_avg = relu(&params.mlp1.forward(&avg2)?);
    let h_max = relu(&params.mlp1.forward(&max2)?);
    let mut pre = params.mlp2.forward(&h_avg)?;
    pre.add_assign(&params.mlp2.forward(&h_max)?)?;
    let mc2 = sigmoid(&pre);
    let mc4 = mc2.clone().reshape(&[n, c, 1, 1])?;
    Ok(ChannelParts {
        mc4,
        avg2,
        max2,
        gmax_idx,
        h_avg,
        h_max,
        mc2,
    })
}

/// Mc for an N x C x H x W input; shape N x C x 1 x 1, values in (0, 1).
pub fn channel_attention<S: Scalar>(f: &Tensor<S>, params: &CbamParams<S>) -> Result<Tensor<S>> {
    Ok(channel_forward(f, params)?.mc4)
}

fn spatial_forward<S: Scalar>(
    f_prime: &Tensor<S>,
    params: &CbamParams<S>,
) -> Result<(Tensor<S>, Tensor<S>, Vec<u32>)> {
    let ca = channel_avg(f_prime)?;
    let (cm, cmax_idx) = channel_max(f_prime)?;
    let cat = concat_channels(&ca, &cm)?;
    let ms = sigmoid(&params.spatial.forward(&cat)?);
    Ok((ms, cat, cmax_idx))
}

/// Ms for an N x C x H x W input; shape N x 1 x H x W, values in (0, 1).
pub fn spatial_attention<S: Scalar>(
    f_prime: &Tensor<S>,
    params: &CbamParams<S>,
) -> Result<Tensor<S>> {
    Ok(spatial_forward(f_prime, params)?.0)
}

/// Inference-only refinement; same result as [`cbam_forward`] without the cache.
pub fn cbam_apply<S: Scalar>(f: &Tensor<S>, params: &CbamParams<S>) -> Result<Tensor<S>> {
    Ok(cbam_forward(f, params)?.0)
}

pub fn cbam_forward<S: Scalar>(
    f: &Tensor<S>,
    params: &CbamParams<S>,
) -> Result<(Tensor<S>, CbamCache<S>)> {
    let ch = channel_forward(f, params)?;
    let f_prime = broadcast_mul(f, &ch.mc4)?;
    let (ms, cat, cmax_idx) = spatial_forward(&f_prime, params)?;
    let out = broadcast_mul(&f_prime, &ms)?;
    Ok((
        out,
        CbamCache {
            avg2: ch.avg2,
            max2: ch.max2,
            gmax_idx: ch.gmax_idx,
            h_avg: ch.h_avg,
            h_max: ch.h_max,
            mc2: ch.mc2,
            f_prime,
            cat,
            cmax_idx,
            ms,
        },
    ))
}

pub fn cbam_backward<S: Scalar>(
    f: &Tensor<S>,
    params: &CbamParams<S>,
    cache: &CbamCache<S>,
    grad_out: &Tensor<S>,
) -> Result<(Tensor<S>, CbamGrads<S>)> {
    let (n, c, _, _) = f.dims4("cbam_bwd")?;

    // Spatial gate: out = f' (*) ms.
    let (mut grad_fp, grad_ms) = broadcast_mul_backward(&cache.f_prime, &cache.ms, grad_out)?;
    let grad_z = sigmoid_backward(&cache.ms, &grad_ms);
    let (grad_cat, spatial_grads) = params.spatial.backward(&cache.cat, &grad_z)?;
    let (grad_ca, grad_cm) = split_channels(&grad_cat, 1)?;
    grad_fp.add_assign(&channel_avg_backward(cache.f_prime.shape(), &grad_ca)?)?;
    grad_fp.add_assign(&channel_max_backward(
        cache.f_prime.shape(),
        &cache.cmax_idx,
        &grad_cm,
    )?)?;

    // Channel gate: f' = f (*) mc.
    let (mut grad_f, grad_mc4) =
        broadcast_mul_backward(f, &cache.mc2.clone().reshape(&[n, c, 1, 1])?, &grad_fp)?;
    let grad_pre = sigmoid_backward(&cache.mc2, &grad_mc4.reshape(&[n, c])?);

    // Shared MLP: both branches see the same grad_pre; their parameter
    // gradients accumulate.
    let (g_h_avg, mut mlp2_g) = params.mlp2.backward(&cache.h_avg, &grad_pre)?;
    let (g_h_max, mlp2_g_max) = params.mlp2.backward(&cache.h_max, &grad_pre)?;
    mlp2_g.w.add_assign(&mlp2_g_max.w)?;
    mlp2_g.b.add_assign(&mlp2_g_max.b)?;
    let (g_avg2, mut mlp1_g) = params
        .mlp1
        .backward(&cache.avg2, &relu_backward(&cache.h_avg, &g_h_avg))?;
    let (g_max2, mlp1_g_max) = params
        .mlp1
        .backward(&cache.max2, &relu_backward(&cache.h_max, &g_h_max))?;
    mlp1_g.w.add_assign(&mlp1_g_max.w)?;
    mlp1_g.b.add_assign(&mlp1_g_max.b)?;

    grad_f.add_assign(&global_avg_pool_backward(
        f.shape(),
        &g_avg2.reshape(&[n, c, 1, 1])?,
    )?)?;
    grad_f.add_assign(&global_max_pool_backward(
        f.shape(),
        &cache.gmax_idx,
        &g_max2.reshape(&[n, c, 1, 1])?,
    )?)?;

    Ok((
        grad_f,
        CbamGrads {
            mlp1: mlp1_g,
            mlp2: mlp2_g,
            spatial: spatial_grads,
        },
    ))
}
