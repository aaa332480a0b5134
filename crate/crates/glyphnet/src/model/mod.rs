//! The attention CNN: four conv-relu-maxpool-CBAM blocks, then a two-layer
//! head ending in a sigmoid P(real).

pub mod checkpoint;
pub mod data;
pub mod trainer;
pub mod verify;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cbam::{cbam_backward, cbam_forward, CbamCache, CbamParams};
use crate::error::{Error, Result};
use crate::render::{render, GrayImage, RenderConfig};
use crate::scalar::Scalar;
use crate::tensor::conv::Conv2d;
use crate::tensor::dense::Dense;
use crate::tensor::ops::{relu, relu_backward, sigmoid, sigmoid_backward};
use crate::tensor::pool::{maxpool2d, maxpool2d_backward};
use crate::tensor::Tensor;

pub const NUM_BLOCKS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_h: usize,
    pub input_w: usize,
    pub filters: [usize; NUM_BLOCKS],
    pub kernel: usize,
    pub reduction: usize,
    pub spatial_kernel: usize,
    pub hidden: usize,
    pub threshold: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_h: 150,
            input_w: 150,
            filters: [32, 64, 128, 256],
            kernel: 3,
            reduction: 8,
            spatial_kernel: 7,
            hidden: 256,
            threshold: 0.5,
        }
    }
}

impl ModelConfig {
    /// Spatial extents after each floor-halving max-pool.
    pub fn spatial_chain(&self) -> [(usize, usize); NUM_BLOCKS] {
        let (mut h, mut w) = (self.input_h, self.input_w);
        let mut out = [(0, 0); NUM_BLOCKS];
        for slot in &mut out {
            h /= 2;
            w /= 2;
            *slot = (h, w);
        }
        out
    }

    pub fn flat_dim(&self) -> usize {
        let (h, w) = self.spatial_chain()[NUM_BLOCKS - 1];
        self.filters[NUM_BLOCKS - 1] * h * w
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.spatial_chain()[NUM_BLOCKS - 1];
        if h == 0 || w == 0 {
            return Err(Error::InvalidConfig(format!(
                "input {}x{} collapses to zero after {NUM_BLOCKS} poolings",
                self.input_h, self.input_w
            )));
        }
        if self.kernel % 2 == 0 || self.spatial_kernel % 2 == 0 {
            return Err(Error::InvalidConfig(
                "conv kernels must be odd for same-padding".into(),
            ));
        }
        if self.hidden == 0 {
            return Err(Error::InvalidConfig("head width must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::InvalidConfig(format!(
                "threshold {} outside [0, 1]",
                self.threshold
            )));
        }
        for &f in &self.filters {
            if self.reduction == 0 || f % self.reduction != 0 {
                return Err(Error::InvalidConfig(format!(
                    "cbam reduction {} must divide every filter count {:?}",
                    self.reduction, self.filters
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub max_epochs: usize,
    /// Early stop after this many epochs without val-loss improvement.
    pub patience: usize,
    /// Improvement smaller than this does not reset patience.
    pub min_delta: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 256,
            lr: 1e-3,
            max_epochs: 30,
            patience: 3,
            min_delta: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::InvalidConfig(
                "batch size, max epochs, and patience must be positive".into(),
            ));
        }
        if self.lr <= 0.0 || self.min_delta < 0.0 {
            return Err(Error::InvalidConfig(
                "learning rate must be positive and min_delta non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Block<S> {
    pub conv: Conv2d<S>,
    pub cbam: CbamParams<S>,
}

#[derive(Debug, Clone)]
pub struct Model<S> {
    pub cfg: ModelConfig,
    pub blocks: Vec<Block<S>>,
    pub fc1: Dense<S>,
    pub fc2: Dense<S>,
}

/// Deterministic initialization: layers consume one seeded stream in a fixed
/// order, so equal (cfg, seed) means equal parameters.
pub fn build_model(cfg: &ModelConfig, seed: u64) -> Result<Model<f32>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut blocks = Vec::with_capacity(NUM_BLOCKS);
    let mut in_ch = 1;
    for &out_ch in &cfg.filters {
        blocks.push(Block {
            conv: Conv2d::new(in_ch, out_ch, cfg.kernel, &mut rng)?,
            cbam: CbamParams::new(out_ch, cfg.reduction, cfg.spatial_kernel, &mut rng)?,
        });
        in_ch = out_ch;
    }
    let fc1 = Dense::new(cfg.flat_dim(), cfg.hidden, &mut rng);
    let fc2 = Dense::new(cfg.hidden, 1, &mut rng);
    Ok(Model {
        cfg: cfg.clone(),
        blocks,
        fc1,
        fc2,
    })
}

struct BlockCache<S> {
    input: Tensor<S>,
    relu_out: Tensor<S>,
    pool_idx: Vec<u32>,
    pool_out: Tensor<S>,
    cbam: CbamCache<S>,
}

pub struct ForwardCache<S> {
    blocks: Vec<BlockCache<S>>,
    flat: Tensor<S>,
    hidden: Tensor<S>,
    probs: Tensor<S>,
}

impl<S: Scalar> Model<S> {
    /// Parameter tensors in checkpoint order: per block conv.w, conv.b, then
    /// the six CBAM tensors; finally fc1.w, fc1.b, fc2.w, fc2.b.
    pub fn params(&self) -> Vec<&Tensor<S>> {
        let mut out = Vec::with_capacity(NUM_BLOCKS * 8 + 4);
        for b in &self.blocks {
            out.push(&b.conv.w);
            out.push(&b.conv.b);
            out.extend(b.cbam.tensors());
        }
        out.extend([&self.fc1.w, &self.fc1.b, &self.fc2.w, &self.fc2.b]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut out = Vec::with_capacity(NUM_BLOCKS * 8 + 4);
        for b in &mut self.blocks {
            out.push(&mut b.conv.w);
            out.push(&mut b.conv.b);
            out.extend(b.cbam.tensors_mut());
        }
        out.extend([
            &mut self.fc1.w,
            &mut self.fc1.b,
            &mut self.fc2.w,
            &mut self.fc2.b,
        ]);
        out
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    pub fn cast<T: Scalar>(&self) -> Model<T> {
        Model {
            cfg: self.cfg.clone(),
            blocks: self
                .blocks
                .iter()
                .map(|b| Block {
                    conv: Conv2d {
                        w: b.conv.w.cast(),
                        b: b.conv.b.cast(),
                    },
                    cbam: b.cbam.cast(),
                })
                .collect(),
            fc1: Dense {
                w: self.fc1.w.cast(),
                b: self.fc1.b.cast(),
            },
            fc2: Dense {
                w: self.fc2.w.cast(),
                b: self.fc2.b.cast(),
            },
        }
    }

    /// Probabilities P(real) for an N x 1 x H x W batch, shape N x 1, plus
    /// the cache the backward pass needs.
    pub fn forward(&self, x: &Tensor<S>) -> Result<(Tensor<S>, ForwardCache<S>)> {
        let (n, c, h, w) = x.dims4("model_fwd")?;
        if c != 1 || h != self.cfg.input_h || w != self.cfg.input_w {
            return Err(Error::ShapeMismatch {
                op: "model_fwd",
                lhs: x.shape().to_vec(),
                rhs: vec![n, 1, self.cfg.input_h, self.cfg.input_w],
            });
        }
        let mut cur = x.clone();
        let mut blocks = Vec::with_capacity(NUM_BLOCKS);
        for block in &self.blocks {
            let relu_out = relu(&block.conv.forward(&cur)?);
            let (pool_out, pool_idx) = maxpool2d(&relu_out)?;
            let (cbam_out, cbam) = cbam_forward(&pool_out, &block.cbam)?;
            blocks.push(BlockCache {
                input: cur,
                relu_out,
                pool_idx,
                pool_out,
                cbam,
            });
            cur = cbam_out;
        }
        let flat = cur.reshape(&[n, self.cfg.flat_dim()])?;
        let hidden = relu(&self.fc1.forward(&flat)?);
        let probs = sigmoid(&self.fc2.forward(&hidden)?);
        Ok((
            probs.clone(),
            ForwardCache {
                blocks,
                flat,
                hidden,
                probs,
            },
        ))
    }

    /// Inference-only forward.
    pub fn infer(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        Ok(self.forward(x)?.0)
    }

    /// Gradients for every parameter (ordered as [`Model::params`]) and for
    /// the input batch, given d loss / d probs.
    pub fn backward(
        &self,
        cache: &ForwardCache<S>,
        grad_probs: &Tensor<S>,
    ) -> Result<(Vec<Tensor<S>>, Tensor<S>)> {
        let grad_logits = sigmoid_backward(&cache.probs, grad_probs);
        self.backward_from_logits(cache, &grad_logits)
    }

    /// Like [`Model::backward`] but seeded with d loss / d logits, where the
    /// logits are the pre-sigmoid head output. Training pairs this with the
    /// fused [`crate::tensor::ops::bce_logit_grad`] because routing through
    /// `sigmoid_backward` zeroes the gradient wherever the f32 sigmoid has
    /// saturated to exactly 0 or 1.
    pub fn backward_from_logits(
        &self,
        cache: &ForwardCache<S>,
        grad_logits: &Tensor<S>,
    ) -> Result<(Vec<Tensor<S>>, Tensor<S>)> {
        let (grad_hidden, fc2_g) = self.fc2.backward(&cache.hidden, grad_logits)?;
        let grad_h_pre = relu_backward(&cache.hidden, &grad_hidden);
        let (grad_flat, fc1_g) = self.fc1.backward(&cache.flat, &grad_h_pre)?;

        // CBAM output has the same shape as its pooled input.
        let last_shape = cache.blocks[NUM_BLOCKS - 1].pool_out.shape().to_vec();
        let mut grad = grad_flat.reshape(&last_shape)?;

        // Per-block grads in forward order; filled back-to-front.
        let mut block_grads: Vec<Vec<Tensor<S>>> = vec![Vec::new(); NUM_BLOCKS];
        for (bi, (block, bc)) in self.blocks.iter().zip(&cache.blocks).enumerate().rev() {
            let (grad_pool, cbam_g) = cbam_backward(&bc.pool_out, &block.cbam, &bc.cbam, &grad)?;
            let grad_relu = maxpool2d_backward(bc.relu_out.shape(), &bc.pool_idx, &grad_pool)?;
            let grad_conv_out = relu_backward(&bc.relu_out, &grad_relu);
            let (grad_in, conv_g) = block.conv.backward(&bc.input, &grad_conv_out)?;
            let mut grads = vec![conv_g.w, conv_g.b];
            grads.extend(cbam_g.tensors().into_iter().cloned());
            block_grads[bi] = grads;
            grad = grad_in;
        }

        let mut out = Vec::with_capacity(NUM_BLOCKS * 8 + 4);
        for g in block_grads {
            out.extend(g);
        }
        out.extend([fc1_g.w, fc1_g.b, fc2_g.w, fc2_g.b]);
        debug_assert_eq!(out.len(), self.params().len());
        Ok((out, grad))
    }
}

/// Probability + label for one image; label real (1) iff p >= threshold.
pub fn predict_image(model: &Model<f32>, img: &GrayImage) -> Result<(f64, u8)> {
    if img.width != model.cfg.input_w || img.height != model.cfg.input_h {
        return Err(Error::ShapeMismatch {
            op: "predict",
            lhs: vec![img.height, img.width],
            rhs: vec![model.cfg.input_h, model.cfg.input_w],
        });
    }
    let data: Vec<f32> = img.pixels.iter().map(|&p| p as f32 / 255.0).collect();
    let x = Tensor::from_vec(&[1, 1, img.height, img.width], data)?;
    let probs = model.infer(&x)?;
    let p = probs.data()[0] as f64;
    Ok((p, u8::from(p >= model.cfg.threshold)))
}

pub fn predict_domain(
    model: &Model<f32>,
    text: &str,
    render_cfg: &RenderConfig,
) -> Result<(f64, u8)> {
    predict_image(model, &render(text, render_cfg))
}
