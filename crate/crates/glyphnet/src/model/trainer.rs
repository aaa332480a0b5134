//! RMSProp training loop with per-epoch validation, early stopping on val
//! loss, and a retained best-epoch parameter snapshot.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::derive_seed;
use crate::error::{Error, Result};
use crate::model::data::{epoch_batches, ImageSet};
use crate::model::{Model, TrainConfig};
use crate::tensor::ops::{bce_logit_grad, bce_loss};
use crate::tensor::rmsprop::RmsProp;
use crate::tensor::Tensor;

pub const HISTORY_HEADER: &str = "epoch,train_loss,train_acc,val_loss,val_acc";

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

impl HistoryRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6}",
            self.epoch, self.train_loss, self.train_acc, self.val_loss, self.val_acc
        )
    }
}

/// Patience bookkeeping: an epoch improves only if its val loss beats the
/// best by more than `min_delta`; stop once `patience` epochs pass without
/// improvement.
#[derive(Debug, Clone)]
pub struct EarlyStop {
    patience: usize,
    min_delta: f64,
    best_loss: f64,
    best_epoch: usize,
}

impl EarlyStop {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        EarlyStop {
            patience,
            min_delta,
            best_loss: f64::INFINITY,
            best_epoch: 0,
        }
    }

    /// Record epoch's val loss; true if it set a new best.
    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> bool {
        if val_loss < self.best_loss - self.min_delta {
            self.best_loss = val_loss;
            self.best_epoch = epoch;
            true
        } else {
            false
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn should_stop(&self, current_epoch: usize) -> bool {
        self.best_epoch > 0 && current_epoch - self.best_epoch >= self.patience
    }
}

pub struct Trainer {
    model: Model<f32>,
    opt: RmsProp<f32>,
    train: ImageSet,
    val: ImageSet,
    cfg: TrainConfig,
    epoch: usize,
    history: Vec<HistoryRow>,
    stopper: EarlyStop,
    best_params: Vec<Tensor<f32>>,
}

impl Trainer {
    pub fn new(
        model: Model<f32>,
        train: ImageSet,
        val: ImageSet,
        cfg: TrainConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let stopper = EarlyStop::new(cfg.patience, cfg.min_delta);
        let opt = RmsProp::new(cfg.lr);
        Ok(Trainer {
            model,
            opt,
            train,
            val,
            cfg,
            epoch: 0,
            history: Vec::new(),
            stopper,
            best_params: Vec::new(),
        })
    }

    pub fn model(&self) -> &Model<f32> {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn epochs_run(&self) -> usize {
        self.epoch
    }

    pub fn history(&self) -> &[HistoryRow] {
        &self.history
    }

    pub fn best_epoch(&self) -> usize {
        self.stopper.best_epoch()
    }

    /// The model as of the best validation epoch (current parameters if no
    /// epoch has finished yet).
    pub fn best_model(&self) -> Model<f32> {
        let mut best = self.model.clone();
        if !self.best_params.is_empty() {
            for (dst, src) in best.params_mut().into_iter().zip(&self.best_params) {
                *dst = src.clone();
            }
        }
        best
    }

    /// One pass over the training split (seeded shuffle derived from the
    /// epoch number) followed by a full validation pass.
    pub fn run_epoch(&mut self) -> Result<HistoryRow> {
        let epoch = self.epoch + 1;
        let (h, w) = (self.model.cfg.input_h, self.model.cfg.input_w);
        let threshold = self.model.cfg.threshold;
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.seed, &format!("epoch.{epoch}")));
        let batches = epoch_batches(self.train.len(), self.cfg.batch_size, &mut rng);

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for indices in &batches {
            let (x, y) = self.train.load_batch(indices, h, w)?;
            let (probs, cache) = self.model.forward(&x)?;
            let (loss, _) = bce_loss(&probs, &y)?;
            loss_sum += loss as f64 * indices.len() as f64;
            correct += count_correct(probs.data(), &y, threshold);
            // Fused loss gradient w.r.t. the logits; see bce_logit_grad for
            // why the chain through sigmoid_backward is not usable here.
            let grad_logits = bce_logit_grad(&probs, &y)?;
            let (grads, _) = self.model.backward_from_logits(&cache, &grad_logits)?;
            let grad_refs: Vec<&Tensor<f32>> = grads.iter().collect();
            let mut params = self.model.params_mut();
            self.opt.step(&mut params, &grad_refs)?;
        }
        let train_loss = loss_sum / self.train.len() as f64;
        let train_acc = correct as f64 / self.train.len() as f64;

        let (val_loss, val_acc) =
            eval_loss_acc(&self.model, &self.val, self.cfg.batch_size, threshold)?;

        self.epoch = epoch;
        if self.stopper.observe(epoch, val_loss) || self.best_params.is_empty() {
            self.best_params = self.model.params().into_iter().cloned().collect();
        }
        let row = HistoryRow {
            epoch,
            train_loss,
            train_acc,
            val_loss,
            val_acc,
        };
        self.history.push(row.clone());
        Ok(row)
    }

    pub fn should_stop(&self) -> bool {
        self.epoch >= self.cfg.max_epochs || self.stopper.should_stop(self.epoch)
    }

    /// Run epochs until early stopping or the epoch cap fires.
    pub fn train_to_stop(&mut self) -> Result<()> {
        while !self.should_stop() {
            self.run_epoch()?;
        }
        Ok(())
    }

    pub fn write_history(&self, path: &Path) -> Result<()> {
        let mut out = String::from(HISTORY_HEADER);
        out.push('\n');
        for row in &self.history {
            let _ = writeln!(out, "{}", row.csv());
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

fn count_correct(probs: &[f32], labels: &[f32], threshold: f64) -> usize {
    probs
        .iter()
        .zip(labels)
        .filter(|(&p, &y)| (p as f64 >= threshold) == (y == 1.0))
        .count()
}

/// Mean BCE loss and accuracy over a full split, streamed batch by batch in
/// index order.
pub fn eval_loss_acc(
    model: &Model<f32>,
    set: &ImageSet,
    batch_size: usize,
    threshold: f64,
) -> Result<(f64, f64)> {
    let (h, w) = (model.cfg.input_h, model.cfg.input_w);
    let indices: Vec<usize> = (0..set.len()).collect();
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for chunk in indices.chunks(batch_size.max(1)) {
        let (x, y) = set.load_batch(chunk, h, w)?;
        let probs = model.infer(&x)?;
        let (loss, _) = bce_loss(&probs, &y)?;
        loss_sum += loss as f64 * chunk.len() as f64;
        correct += count_correct(probs.data(), &y, threshold);
    }
    Ok((
        loss_sum / set.len() as f64,
        correct as f64 / set.len() as f64,
    ))
}

/// P(real) scores for a full split in index order.
pub fn predict_set(model: &Model<f32>, set: &ImageSet, batch_size: usize) -> Result<Vec<f64>> {
    let (h, w) = (model.cfg.input_h, model.cfg.input_w);
    let indices: Vec<usize> = (0..set.len()).collect();
    let mut scores = Vec::with_capacity(set.len());
    for chunk in indices.chunks(batch_size.max(1)) {
        let (x, _) = set.load_batch(chunk, h, w)?;
        let probs = model.infer(&x)?;
        scores.extend(probs.data().iter().map(|&p| p as f64));
    }
    Ok(scores)
}
