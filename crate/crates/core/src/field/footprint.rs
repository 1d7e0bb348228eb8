use crate::render::RaySamples;
use crate::scene::VoxelGrid;

/// The expected instance logits of one ray as a sparse linear map of the
/// instance grid: `I(r) = sum_e coef_e * grid[voxel_e]`.
///
/// Exact for a frozen density field; samples with weight at or below
/// `min_weight` are dropped (none when it is 0).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RayFootprint {
    pub voxels: Vec<u32>,
    pub coefs: Vec<f64>,
    pub depth: f64,
}

impl RayFootprint {
    pub fn build(grid: &VoxelGrid, samples: &RaySamples, weights: &[f64], min_weight: f64) -> Self {
        let mut taps: Vec<(u32, f64)> = Vec::new();
        let mut depth = 0.0;
        for ((&p, &t), &w) in samples.positions.iter().zip(&samples.t_values).zip(weights) {
            depth += w * t;
            if w <= min_weight || w == 0.0 {
                continue;
            }
            for tap in grid.stencil_unchecked(p) {
                if tap.weight != 0.0 {
                    taps.push((tap.voxel as u32, w * tap.weight));
                }
            }
        }
        taps.sort_by_key(|&(v, _)| v);
        let mut voxels = Vec::new();
        let mut coefs: Vec<f64> = Vec::new();
        for (v, c) in taps {
            if voxels.last() == Some(&v) {
                *coefs.last_mut().expect("paired with voxels") += c;
            } else {
                voxels.push(v);
                coefs.push(c);
            }
        }
        RayFootprint {
            voxels,
            coefs,
            depth,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    /// Expected logits given `params` laid out `voxel * labels + label`.
    pub fn render(&self, params: &[f64], labels: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (&v, &c) in self.voxels.iter().zip(&self.coefs) {
            let row = &params[v as usize * labels..(v as usize + 1) * labels];
            for (o, x) in out.iter_mut().zip(row) {
                *o += c * x;
            }
        }
    }

    /// Adds `coef * grad` to every referenced voxel row.
    pub fn scatter(&self, grad: &[f64], labels: usize, buffer: &mut [f64]) {
        for (&v, &c) in self.voxels.iter().zip(&self.coefs) {
            let row = &mut buffer[v as usize * labels..(v as usize + 1) * labels];
            for (b, g) in row.iter_mut().zip(grad) {
                *b += c * g;
            }
        }
    }
}
