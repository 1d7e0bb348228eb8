use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Loss value with its gradient with respect to the rendered quantity.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    /// Same layout as the input (row-major rays, labels fastest).
    pub grad: Vec<f64>,
}

/// Divisor applied to summed per-ray terms of the instance losses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `1 / (R * L)`: rays times labels.
    #[default]
    RaysTimesLabels,
    /// `1 / R`.
    Rays,
}

impl Normalization {
    fn factor(self, rays: usize, labels: usize) -> f64 {
        match self {
            Normalization::RaysTimesLabels => 1.0 / (rays * labels) as f64,
            Normalization::Rays => 1.0 / rays as f64,
        }
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Cross-entropy of softmax(logits) against one-hot targets.
///
/// `logits` holds `R` rays of `num_labels` expected logits each.
pub fn instance_loss(
    logits: &[f64],
    targets: &[u16],
    num_labels: usize,
    normalization: Normalization,
) -> Result<LossGrad> {
    let rays = targets.len();
    if rays == 0 {
        return Err(Error::invalid("instance loss over an empty batch"));
    }
    if num_labels < 2 || logits.len() != rays * num_labels {
        return Err(Error::mismatch(format!(
            "{} logits for {rays} rays of {num_labels} labels",
            logits.len()
        )));
    }
    let scale = normalization.factor(rays, num_labels);
    let mut loss = 0.0;
    let mut grad = vec![0.0; logits.len()];
    for (r, (&target, row)) in targets
        .iter()
        .zip(logits.chunks_exact(num_labels))
        .enumerate()
    {
        let target = target as usize;
        if target >= num_labels {
            return Err(Error::invalid(format!(
                "target label {target} at ray {r} outside [0, {num_labels})"
            )));
        }
        let lse = log_sum_exp(row);
        loss += lse - row[target];
        let g = &mut grad[r * num_labels..(r + 1) * num_labels];
        for (gl, &x) in g.iter_mut().zip(row) {
            *gl = (x - lse).exp() * scale;
        }
        g[target] -= scale;
    }
    Ok(LossGrad {
        loss: loss * scale,
        grad,
    })
}

/// A rectangle of adjacent rendered pixels for the smoothness term.
#[derive(Clone, Debug, PartialEq)]
pub struct RegPatch {
    pub height: usize,
    pub width: usize,
    /// `height * width * num_labels` expected logits.
    pub logits: Vec<f64>,
    /// `height * width` expected depths.
    pub depths: Vec<f64>,
}

/// Unnormalized neighbour weight `exp(-(d0 - d1)^2)`.
pub fn depth_similarity(d0: f64, d1: f64) -> f64 {
    (-(d0 - d1).powi(2)).exp()
}

/// Normalized pair weights: horizontal pairs `(i, j)-(i, j+1)` in row-major
/// order over `height x (width-1)`, vertical pairs `(i, j)-(i+1, j)` over
/// `(height-1) x width`. Each family sums to one.
pub fn pair_weights(height: usize, width: usize, depths: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut horizontal = Vec::with_capacity(height * (width - 1));
    for i in 0..height {
        for j in 0..width - 1 {
            horizontal.push(depth_similarity(
                depths[i * width + j],
                depths[i * width + j + 1],
            ));
        }
    }
    let mut vertical = Vec::with_capacity((height - 1) * width);
    for i in 0..height - 1 {
        for j in 0..width {
            vertical.push(depth_similarity(
                depths[i * width + j],
                depths[(i + 1) * width + j],
            ));
        }
    }
    for family in [&mut horizontal, &mut vertical] {
        let total: f64 = family.iter().sum();
        if total > 0.0 {
            family.iter_mut().for_each(|w| *w /= total);
        }
    }
    (horizontal, vertical)
}

/// Depth-weighted squared differences of neighbouring expected logits.
/// Depths are treated as constants.
pub fn regularization_loss(
    patch: &RegPatch,
    num_labels: usize,
    normalization: Normalization,
) -> Result<LossGrad> {
    let (h, w) = (patch.height, patch.width);
    if h < 2 || w < 2 {
        return Err(Error::invalid(format!(
            "regularization patch {h}x{w} is smaller than 2x2"
        )));
    }
    if patch.depths.len() != h * w || patch.logits.len() != h * w * num_labels || num_labels == 0 {
        return Err(Error::mismatch(format!(
            "patch {h}x{w} with {num_labels} labels has {} logits and {} depths",
            patch.logits.len(),
            patch.depths.len()
        )));
    }
    let scale = normalization.factor(h * w, num_labels);
    let (horizontal, vertical) = pair_weights(h, w, &patch.depths);
    let mut loss = 0.0;
    let mut grad = vec![0.0; patch.logits.len()];
    let mut accumulate = |a: usize, b: usize, weight: f64| {
        for l in 0..num_labels {
            let diff = patch.logits[a * num_labels + l] - patch.logits[b * num_labels + l];
            loss += weight * diff * diff;
            let g = 2.0 * scale * weight * diff;
            grad[a * num_labels + l] += g;
            grad[b * num_labels + l] -= g;
        }
    };
    for i in 0..h {
        for j in 0..w - 1 {
            accumulate(i * w + j, i * w + j + 1, horizontal[i * (w - 1) + j]);
        }
    }
    for i in 0..h - 1 {
        for j in 0..w {
            accumulate(i * w + j, (i + 1) * w + j, vertical[i * w + j]);
        }
    }
    Ok(LossGrad {
        loss: loss * scale,
        grad,
    })
}

/// Mean over rays of the squared color error, with its gradient per ray.
pub fn appearance_loss(rendered: &[[f64; 3]], target: &[[f64; 3]]) -> Result<(f64, Vec<[f64; 3]>)> {
    if rendered.len() != target.len() {
        return Err(Error::mismatch(format!(
            "{} rendered colors vs {} targets",
            rendered.len(),
            target.len()
        )));
    }
    if rendered.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let inv = 1.0 / rendered.len() as f64;
    let mut loss = 0.0;
    let grad = rendered
        .iter()
        .zip(target)
        .map(|(c, t)| {
            let mut g = [0.0; 3];
            for ch in 0..3 {
                let d = c[ch] - t[ch];
                loss += d * d;
                g[ch] = 2.0 * d * inv;
            }
            g
        })
        .collect();
    Ok((loss * inv, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_cost_ln_l_over_l() {
        let out = instance_loss(&[0.3; 4], &[2], 4, Normalization::RaysTimesLabels).unwrap();
        assert!((out.loss - 4f64.ln() / 4.0).abs() < 1e-15);
        let per_ray = instance_loss(&[0.3; 4], &[2], 4, Normalization::Rays).unwrap();
        assert!((per_ray.loss - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn saturated_correct_logit_costs_nothing() {
        let out =
            instance_loss(&[0.0, 60.0, 0.0], &[1], 3, Normalization::RaysTimesLabels).unwrap();
        assert!(out.loss < 1e-20);
        assert!(out.grad.iter().all(|g| g.abs() < 1e-20));
    }

    #[test]
    fn instance_loss_errors() {
        assert!(instance_loss(&[], &[], 2, Normalization::Rays).is_err());
        assert!(instance_loss(&[0.0; 3], &[0], 2, Normalization::Rays).is_err());
        assert!(instance_loss(&[0.0; 2], &[2], 2, Normalization::Rays).is_err());
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        let logits = [0.2, -1.0, 3.0, 0.5, 0.5, -0.5];
        let out = instance_loss(&logits, &[0, 2], 3, Normalization::RaysTimesLabels).unwrap();
        for row in out.grad.chunks(3) {
            assert!(row.iter().sum::<f64>().abs() < 1e-15);
        }
    }

    #[test]
    fn constant_patch_has_no_loss() {
        let patch = RegPatch {
            height: 3,
            width: 3,
            logits: [1.0, -2.0].repeat(9),
            depths: (0..9).map(|v| v as f64).collect(),
        };
        let out = regularization_loss(&patch, 2, Normalization::RaysTimesLabels).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn equal_depths_give_uniform_weights() {
        let (h, v) = pair_weights(4, 4, &[2.5; 16]);
        assert_eq!(h.len(), 12);
        assert!(h.iter().chain(&v).all(|w| (w - 1.0 / 12.0).abs() < 1e-15));
    }

    #[test]
    fn unit_depth_gap_weight() {
        assert!((depth_similarity(1.0, 2.0) - 0.36788).abs() < 1e-5);
        assert_eq!(depth_similarity(3.0, 3.0), 1.0);
    }

    #[test]
    fn degenerate_patch_is_rejected() {
        let patch = RegPatch {
            height: 1,
            width: 4,
            logits: vec![0.0; 8],
            depths: vec![0.0; 4],
        };
        assert!(regularization_loss(&patch, 2, Normalization::Rays).is_err());
    }

    #[test]
    fn appearance_single_ray() {
        let (loss, grad) = appearance_loss(&[[0.6, 0.2, 0.3]], &[[0.5, 0.2, 0.3]]).unwrap();
        assert!((loss - 0.01).abs() < 1e-15);
        assert!((grad[0][0] - 0.2).abs() < 1e-15);
        let (zero, _) = appearance_loss(&[[0.1, 0.2, 0.3]], &[[0.1, 0.2, 0.3]]).unwrap();
        assert_eq!(zero, 0.0);
    }
}
