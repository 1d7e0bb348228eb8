use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::adam::{adam_step, AdamConfig, AdamState};
use crate::field::backprop::{backprop_appearance, GradientBuffer};
use crate::field::loss::appearance_loss;
use crate::image::RgbImage;
use crate::render::{mix64, pixel_seed, render_ray, SceneModel};
use crate::scene::{Camera, SceneBounds, VoxelGrid};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RadianceConfig {
    pub dims: [usize; 3],
    pub bounds: SceneBounds,
    pub samples_per_ray: usize,
    pub batch_rays: usize,
    pub steps: usize,
    pub adam: AdamConfig,
    pub initial_density: f64,
    pub seed: u64,
    pub log_every: usize,
}

impl Default for RadianceConfig {
    fn default() -> Self {
        RadianceConfig {
            dims: [64; 3],
            bounds: SceneBounds::cube(1.0),
            samples_per_ray: 128,
            batch_rays: 512,
            steps: 2000,
            adam: AdamConfig {
                lr: 0.1,
                ..AdamConfig::default()
            },
            initial_density: 0.5,
            seed: 0,
            log_every: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadianceLogRecord {
    pub step: usize,
    #[serde(rename = "L_p")]
    pub loss: f64,
}

/// Fits density and color grids to posed RGB images by gradient descent on
/// the mean squared color error.
pub fn fit_radiance(
    views: &[(Camera, RgbImage)],
    config: &RadianceConfig,
) -> Result<(SceneModel, Vec<RadianceLogRecord>)> {
    if views.len() < 2 {
        return Err(Error::invalid("radiance fitting needs at least two views"));
    }
    for (v, (cam, img)) in views.iter().enumerate() {
        if (cam.width, cam.height) != (img.width, img.height) {
            return Err(Error::mismatch(format!(
                "view {v}: image and camera sizes differ"
            )));
        }
    }
    let mut model = SceneModel::new(
        VoxelGrid::filled(config.dims, 1, config.bounds, config.initial_density)?,
        VoxelGrid::filled(config.dims, 3, config.bounds, 0.5)?,
        None,
    )?;
    let mut density_grad = GradientBuffer::for_grid(&model.density);
    let mut color_grad = GradientBuffer::for_grid(&model.color);
    let mut density_state = AdamState::new(model.density.data().len());
    let mut color_state = AdamState::new(model.color.data().len());
    let total_pixels: Vec<usize> = views.iter().map(|(c, _)| c.pixel_count()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(config.seed ^ 0x0F17_0003));
    let mut log = Vec::new();

    for step in 1..=config.steps {
        let batch: Vec<(usize, usize)> = (0..config.batch_rays)
            .map(|_| {
                let v = rng.gen_range(0..views.len());
                (v, rng.gen_range(0..total_pixels[v]))
            })
            .collect();
        let step_seed = mix64(config.seed ^ step as u64);
        let pixels: Vec<_> = batch
            .par_iter()
            .map(|&(v, p)| {
                let cam = &views[v].0;
                let (i, j) = (p / cam.width, p % cam.width);
                let ray = cam.generate_ray(i, j, None);
                render_ray(
                    &model,
                    &ray,
                    config.samples_per_ray,
                    Some(pixel_seed(step_seed ^ v as u64, i, j)),
                )
            })
            .collect();
        let rendered: Vec<[f64; 3]> = pixels.iter().map(|p| p.color).collect();
        let target: Vec<[f64; 3]> = batch.iter().map(|&(v, p)| views[v].1.pixels[p]).collect();
        let (loss, grads) = appearance_loss(&rendered, &target)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "appearance loss diverged at step {step}"
            )));
        }
        density_grad.clear();
        color_grad.clear();
        for (px, g) in pixels.iter().zip(&grads) {
            backprop_appearance(*g, px, &model, &mut density_grad, &mut color_grad)?;
        }
        adam_step(
            model.density.data_mut(),
            density_grad.data(),
            &mut density_state,
            &config.adam,
            step as u64,
        )?;
        adam_step(
            model.color.data_mut(),
            color_grad.data(),
            &mut color_state,
            &config.adam,
            step as u64,
        )?;
        if step % config.log_every.max(1) == 0 || step == config.steps {
            log.push(RadianceLogRecord { step, loss });
        }
    }
    if let Some(i) = model
        .density
        .data()
        .iter()
        .chain(model.color.data())
        .position(|v| !v.is_finite())
    {
        return Err(Error::NonFinite(format!("fitted grid value {i}")));
    }
    Ok((model, log))
}
