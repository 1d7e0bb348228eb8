use crate::error::{Error, Result};
use crate::render::{RenderedPixel, SceneModel};
use crate::scene::VoxelGrid;

/// Accumulated loss gradient with the layout of one voxel grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBuffer {
    channels: usize,
    data: Vec<f64>,
}

impl GradientBuffer {
    pub fn for_grid(grid: &VoxelGrid) -> Self {
        GradientBuffer {
            channels: grid.channels(),
            data: vec![0.0; grid.data().len()],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn clear(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::NonFinite(format!("gradient at flat index {i}"))),
            None => Ok(()),
        }
    }

    fn fits(&self, grid: &VoxelGrid) -> Result<()> {
        if self.channels != grid.channels() || self.data.len() != grid.data().len() {
            return Err(Error::mismatch(
                "gradient buffer does not match the grid layout",
            ));
        }
        Ok(())
    }
}

/// Scatters `d loss / d I(r)` onto the instance grid. The expected logits
/// are linear in the grid, so every sample contributes
/// `w_k * trilinear_weight * grad` to each of its eight corners.
pub fn backprop_ray(
    grad_logits: &[f64],
    pixel: &RenderedPixel,
    grid: &VoxelGrid,
    buffer: &mut GradientBuffer,
) -> Result<()> {
    buffer.fits(grid)?;
    let c = grid.channels();
    if grad_logits.len() != c {
        return Err(Error::mismatch(format!(
            "{} logit gradients for a {c}-label grid",
            grad_logits.len()
        )));
    }
    if pixel.weights.len() != pixel.samples.len() {
        return Err(Error::mismatch(
            "cached weights and samples differ in length",
        ));
    }
    for (&w, &p) in pixel.weights.iter().zip(&pixel.samples.positions) {
        if w == 0.0 {
            continue;
        }
        for tap in grid.stencil(p)? {
            let coef = w * tap.weight;
            let dst = &mut buffer.data[tap.voxel * c..(tap.voxel + 1) * c];
            for (d, g) in dst.iter_mut().zip(grad_logits) {
                *d += coef * g;
            }
        }
    }
    Ok(())
}

/// Gradient of a color loss with respect to the color grid (linear) and the
/// raw density grid (through transmittance and opacity).
///
/// With `s_k = sigma_k * delta_k`,
/// `dC/ds_k = T_{k+1} c_k - sum_{j>k} w_j c_j`. Samples whose raw density is
/// clamped at zero pass no gradient.
pub fn backprop_appearance(
    grad_color: [f64; 3],
    pixel: &RenderedPixel,
    model: &SceneModel,
    density_grad: &mut GradientBuffer,
    color_grad: &mut GradientBuffer,
) -> Result<()> {
    density_grad.fits(&model.density)?;
    color_grad.fits(&model.color)?;
    let samples = &pixel.samples;
    let n = samples.len();
    if n == 0 {
        return Ok(());
    }
    let mut colors = Vec::with_capacity(n);
    let mut raw_density = Vec::with_capacity(n);
    for &p in &samples.positions {
        colors.push(model.color.sample(p)?);
        raw_density.push(model.density.sample(p)?[0]);
    }
    // transmittance after each sample
    let mut after = Vec::with_capacity(n);
    let mut optical_depth = 0.0f64;
    for (raw, delta) in raw_density.iter().zip(&samples.deltas) {
        optical_depth += raw.max(0.0) * delta;
        after.push((-optical_depth).exp());
    }
    let mut suffix = [0.0; 3];
    for k in (0..n).rev() {
        let w = pixel.weights[k];
        let p = samples.positions[k];
        let mut d_s = 0.0;
        for ch in 0..3 {
            d_s += grad_color[ch] * (after[k] * colors[k][ch] - suffix[ch]);
        }
        for ch in 0..3 {
            suffix[ch] += w * colors[k][ch];
        }
        let taps = model.color.stencil(p)?;
        if w != 0.0 {
            for tap in &taps {
                let dst = &mut color_grad.data[tap.voxel * 3..tap.voxel * 3 + 3];
                for ch in 0..3 {
                    dst[ch] += w * tap.weight * grad_color[ch];
                }
            }
        }
        if raw_density[k] > 0.0 {
            let d_raw = d_s * samples.deltas[k];
            for tap in model.density.stencil(p)? {
                density_grad.data[tap.voxel] += d_raw * tap.weight;
            }
        }
    }
    Ok(())
}
