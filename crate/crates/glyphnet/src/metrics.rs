//! Confusion statistics and ROC AUC over scored predictions, plus the
//! text/CSV comparison report.

use crate::error::{Error, Result};
use crate::model::data::ImageSet;
use crate::model::trainer::predict_set;
use crate::model::Model;
use std::fmt::Write as _;

/// Confusion counts at a threshold. Positive class is real (label 1);
/// predicted positive iff p >= threshold, so ties side with real.
/// Returns (tp, fp, tn, fn).
pub fn confusion(scores: &[(f64, u8)], threshold: f64) -> Result<(usize, usize, usize, usize)> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("scores"));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for &(p, y) in scores {
        match (p >= threshold, y == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok((tp, fp, tn, fn_))
}

/// Mann-Whitney concordance probability with ties counted half, computed
/// from one sort via average ranks. Equals the trapezoidal area under the
/// threshold-swept ROC curve.
pub fn roc_auc(scores: &[(f64, u8)]) -> Result<f64> {
    let pos = scores.iter().filter(|&&(_, y)| y == 1).count();
    let neg = scores.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].0.total_cmp(&scores[j].0));
    // Sum of positive ranks, averaging ranks within each tie group.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]].0 == scores[order[i]].0 {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        let pos_here = order[i..j].iter().filter(|&&k| scores[k].1 == 1).count();
        rank_sum += avg_rank * pos_here as f64;
        i = j;
    }
    let u = rank_sum - pos as f64 * (pos as f64 + 1.0) / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// Everything the report table needs. Undefined ratios (empty denominator)
/// are stored as 0.0 with the matching `*_defined` flag cleared, so report
/// files never carry NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub precision_defined: bool,
    pub recall: f64,
    pub recall_defined: bool,
    pub f1: f64,
    pub f1_defined: bool,
    pub auc: f64,
    pub threshold: f64,
}

impl EvalReport {
    pub fn from_scores(scores: &[(f64, u8)], threshold: f64) -> Result<Self> {
        let (tp, fp, tn, fn_) = confusion(scores, threshold)?;
        let auc = roc_auc(scores)?;
        let n = (tp + fp + tn + fn_) as f64;
        let accuracy = (tp + tn) as f64 / n;
        let (precision, precision_defined) = ratio(tp, tp + fp);
        let (recall, recall_defined) = ratio(tp, tp + fn_);
        let (f1, f1_defined) = if precision_defined && recall_defined && precision + recall > 0.0 {
            (2.0 * precision * recall / (precision + recall), true)
        } else {
            (0.0, false)
        };
        Ok(EvalReport {
            tp,
            fp,
            tn,
            fn_,
            accuracy,
            precision,
            precision_defined,
            recall,
            recall_defined,
            f1,
            f1_defined,
            auc,
            threshold,
        })
    }

    pub fn n(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// `metric,value` lines; counts as integers, ratios to six places.
    pub fn csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        let _ = writeln!(out, "tp,{}", self.tp);
        let _ = writeln!(out, "fp,{}", self.fp);
        let _ = writeln!(out, "tn,{}", self.tn);
        let _ = writeln!(out, "fn,{}", self.fn_);
        let _ = writeln!(out, "accuracy,{:.6}", self.accuracy);
        let _ = writeln!(out, "precision,{:.6}", self.precision);
        let _ = writeln!(out, "precision_defined,{}", self.precision_defined);
        let _ = writeln!(out, "recall,{:.6}", self.recall);
        let _ = writeln!(out, "recall_defined,{}", self.recall_defined);
        let _ = writeln!(out, "f1,{:.6}", self.f1);
        let _ = writeln!(out, "f1_defined,{}", self.f1_defined);
        let _ = writeln!(out, "auc,{:.6}", self.auc);
        let _ = writeln!(out, "threshold,{:.6}", self.threshold);
        out
    }
}

fn ratio(num: usize, den: usize) -> (f64, bool) {
    if den == 0 {
        (0.0, false)
    } else {
        (num as f64 / den as f64, true)
    }
}

/// Aligned text table with one row per scored system, columns matching the
/// comparison layout: accuracy, precision, recall, F1, AUC.
pub fn comparison_table(rows: &[(&str, &EvalReport)]) -> String {
    let name_w = rows
        .iter()
        .map(|(name, _)| name.len())
        .chain(["model".len()])
        .max()
        .unwrap();
    let mut out = format!(
        "{:<name_w$}  {:>9}  {:>9}  {:>9}  {:>9}  {:>9}\n",
        "model", "accuracy", "precision", "recall", "f1", "auc"
    );
    for (name, r) in rows {
        let _ = writeln!(
            out,
            "{:<name_w$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>9.4}  {:>9.4}",
            name, r.accuracy, r.precision, r.recall, r.f1, r.auc
        );
    }
    out
}

/// Edit-distance score on the shared report scale: exact whitelist hits
/// score 1, and the score decays toward 0 as the nearest whitelisted
/// domain moves away.
pub fn baseline_score(distance: usize) -> f64 {
    1.0 / (1.0 + distance as f64)
}

/// Streamed model predictions over a rendered split, folded into a report.
pub fn evaluate_model(model: &Model<f32>, set: &ImageSet, batch_size: usize) -> Result<EvalReport> {
    let probs = predict_set(model, set, batch_size)?;
    let scores: Vec<(f64, u8)> = probs.into_iter().zip(set.labels()).collect();
    EvalReport::from_scores(&scores, model.cfg.threshold)
}
