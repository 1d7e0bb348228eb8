use serde::{Deserialize, Serialize};

use crate::detect::boxes::BoxOffsets;
use crate::error::{Error, Result};

/// Probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]` inside the
/// binary cross-entropy.
pub const BCE_EPS: f64 = 1e-7;

/// Transition point of the smooth-L1 loss.
pub const SMOOTH_L1_BETA: f64 = 1.0;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Clamped binary cross-entropy of probability `p` against target `y`, and
/// its derivative with respect to the pre-sigmoid logit (zero where the
/// clamp is active).
pub fn bce_with_logit_grad(p: f64, y: f64) -> (f64, f64) {
    let pc = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    let loss = -(y * pc.ln() + (1.0 - y) * (1.0 - pc).ln());
    let grad = if p > BCE_EPS && p < 1.0 - BCE_EPS {
        p - y
    } else {
        0.0
    };
    (loss, grad)
}

pub fn smooth_l1(x: f64) -> f64 {
    let a = x.abs();
    if a < SMOOTH_L1_BETA {
        0.5 * a * a / SMOOTH_L1_BETA
    } else {
        a - 0.5 * SMOOTH_L1_BETA
    }
}

pub fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < SMOOTH_L1_BETA {
        x / SMOOTH_L1_BETA
    } else {
        x.signum()
    }
}

/// Raw head outputs for one RoI over `L` classes (class 0 = background).
#[derive(Clone, Debug, PartialEq)]
pub struct RoiHeadOutput {
    pub class_logits: Vec<f64>,
    pub offsets: Vec<BoxOffsets>,
    /// `L` masks of `m^3` logits, class-major, x fastest within a mask.
    pub mask_logits: Vec<f64>,
}

/// Training target of one RoI. `class == 0` marks a negative sample, for
/// which offsets and mask are ignored.
#[derive(Clone, Debug, PartialEq)]
pub struct RoiTarget {
    pub class: usize,
    pub offsets: BoxOffsets,
    /// `m^3` binary targets.
    pub mask: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RcnnLossWeights {
    pub lambda_reg: f64,
    pub lambda_mask: f64,
}

impl Default for RcnnLossWeights {
    fn default() -> Self {
        RcnnLossWeights {
            lambda_reg: 1.0,
            lambda_mask: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RcnnLosses {
    pub cls: f64,
    pub reg: f64,
    pub mask: f64,
    pub total: f64,
}

/// Gradients of the total loss with respect to every raw head output.
#[derive(Clone, Debug, PartialEq)]
pub struct RcnnGradients {
    pub class_logits: Vec<Vec<f64>>,
    pub offsets: Vec<Vec<[f64; 6]>>,
    pub mask_logits: Vec<Vec<f64>>,
}

/// Classification, class-gated regression and class-gated mask losses.
///
/// * cls: mean over RoIs of the per-class-mean sigmoid BCE against the
///   one-hot class target;
/// * reg: mean over positive RoIs of the smooth-L1 error (summed over the
///   six offsets) of the ground-truth class's offsets only;
/// * mask: mean over positive RoIs of the per-voxel-mean BCE of the
///   ground-truth class's mask only.
///
/// With no positives, reg and mask are 0.
pub fn rcnn_losses(
    predictions: &[RoiHeadOutput],
    targets: &[RoiTarget],
    mask_res: usize,
    weights: RcnnLossWeights,
) -> Result<(RcnnLosses, RcnnGradients)> {
    if predictions.len() != targets.len() {
        return Err(Error::mismatch(format!(
            "{} predictions for {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::invalid("rcnn losses over an empty RoI batch"));
    }
    let cells = mask_res * mask_res * mask_res;
    let num_classes = predictions[0].class_logits.len();
    for (i, (p, t)) in predictions.iter().zip(targets).enumerate() {
        if p.class_logits.len() != num_classes
            || p.offsets.len() != num_classes
            || p.mask_logits.len() != num_classes * cells
        {
            return Err(Error::mismatch(format!(
                "roi {i}: expected {num_classes} classes with {cells}-cell masks"
            )));
        }
        if t.class >= num_classes {
            return Err(Error::invalid(format!(
                "roi {i}: target class {} out of range",
                t.class
            )));
        }
        if t.class != 0 && t.mask.len() != cells {
            return Err(Error::mismatch(format!(
                "roi {i}: mask target has {} cells, expected {cells}",
                t.mask.len()
            )));
        }
    }
    let n = predictions.len() as f64;
    let positives = targets.iter().filter(|t| t.class != 0).count();
    let np = positives.max(1) as f64;

    let mut grads = RcnnGradients {
        class_logits: vec![vec![0.0; num_classes]; predictions.len()],
        offsets: vec![vec![[0.0; 6]; num_classes]; predictions.len()],
        mask_logits: vec![vec![0.0; num_classes * cells]; predictions.len()],
    };
    let (mut cls, mut reg, mut mask) = (0.0, 0.0, 0.0);
    for (i, (p, t)) in predictions.iter().zip(targets).enumerate() {
        for k in 0..num_classes {
            let y = if k == t.class { 1.0 } else { 0.0 };
            let (l, g) = bce_with_logit_grad(sigmoid(p.class_logits[k]), y);
            cls += l / num_classes as f64;
            grads.class_logits[i][k] = g / (n * num_classes as f64);
        }
        if t.class == 0 {
            continue;
        }
        let c = t.class;
        for (d, (pred, target)) in p.offsets[c].0.iter().zip(&t.offsets.0).enumerate() {
            let diff = pred - target;
            reg += smooth_l1(diff);
            grads.offsets[i][c][d] = weights.lambda_reg * smooth_l1_grad(diff) / np;
        }
        let logits = &p.mask_logits[c * cells..(c + 1) * cells];
        for (v, (&z, &y)) in logits.iter().zip(&t.mask).enumerate() {
            let (l, g) = bce_with_logit_grad(sigmoid(z), y);
            mask += l / cells as f64;
            grads.mask_logits[i][c * cells + v] = weights.lambda_mask * g / (np * cells as f64);
        }
    }
    let cls = cls / n;
    let (reg, mask) = if positives == 0 {
        (0.0, 0.0)
    } else {
        (reg / np, mask / np)
    };
    Ok((
        RcnnLosses {
            cls,
            reg,
            mask,
            total: cls + weights.lambda_reg * reg + weights.lambda_mask * mask,
        },
        grads,
    ))
}
