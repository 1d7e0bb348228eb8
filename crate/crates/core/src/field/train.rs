use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::adam::{adam_step, AdamConfig, AdamState};
use crate::field::footprint::RayFootprint;
use crate::field::loss::{instance_loss, regularization_loss, Normalization, RegPatch};
use crate::image::LabelImage;
use crate::render::{march_density, mix64, pixel_seed, SceneModel};
use crate::scene::{Camera, VoxelGrid};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Weight of the cross-entropy term.
    pub lambda_i: f64,
    /// Weight of the depth-aware smoothness term.
    pub lambda_r: f64,
    pub samples_per_ray: usize,
    pub batch_rays: usize,
    pub patch_size: usize,
    pub patches_per_step: usize,
    pub steps_stage1: usize,
    pub steps_stage2: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Divide the instance losses by rays times labels instead of rays.
    pub normalize_by_labels: bool,
    /// Samples at or below this weight are left out of ray footprints.
    pub min_weight: f64,
    /// Jitter training samples inside their strata (fixed per pixel).
    pub jitter: bool,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_i: 1.0,
            lambda_r: 0.1,
            samples_per_ray: 128,
            batch_rays: 1024,
            patch_size: 8,
            patches_per_step: 4,
            steps_stage1: 3000,
            steps_stage2: 3000,
            adam: AdamConfig::default(),
            seed: 0,
            normalize_by_labels: true,
            min_weight: 1e-6,
            jitter: false,
            log_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_i < 0.0 || self.lambda_r < 0.0 {
            return Err(Error::invalid("loss weights must be non-negative"));
        }
        if self.samples_per_ray == 0 || self.batch_rays == 0 {
            return Err(Error::invalid(
                "samples_per_ray and batch_rays must be positive",
            ));
        }
        if self.min_weight < 0.0 {
            return Err(Error::invalid("min_weight must be non-negative"));
        }
        Ok(())
    }

    fn normalization(&self) -> Normalization {
        if self.normalize_by_labels {
            Normalization::RaysTimesLabels
        } else {
            Normalization::Rays
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainView {
    pub camera: Camera,
    pub labels: LabelImage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    #[serde(rename = "L_i")]
    pub loss_instance: f64,
    #[serde(rename = "L_r")]
    pub loss_regularization: f64,
    pub total: f64,
    pub wall_ms: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub grid: VoxelGrid,
    pub log: Vec<LogRecord>,
    /// Weighted objective of the last step.
    pub final_loss: f64,
}

struct ViewFootprints {
    width: usize,
    height: usize,
    rays: Vec<RayFootprint>,
}

/// Ray footprints of every training pixel under a frozen density field.
///
/// Footprint voxels are renumbered to a compact set of the voxels any ray
/// touches; all other instance-grid entries never receive gradient.
pub struct FootprintCache {
    views: Vec<ViewFootprints>,
    active: Vec<usize>,
    template: VoxelGrid,
}

impl FootprintCache {
    pub fn build(model: &SceneModel, cameras: &[Camera], config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        model.validate()?;
        let template = model
            .instance_logits
            .clone()
            .ok_or_else(|| Error::invalid("training needs an instance logit grid"))?;
        let mut views: Vec<ViewFootprints> = cameras
            .iter()
            .enumerate()
            .map(|(v, cam)| {
                let view_seed = mix64(config.seed ^ mix64(v as u64 + 1));
                let rays = (0..cam.pixel_count())
                    .into_par_iter()
                    .map(|p| {
                        let (i, j) = (p / cam.width, p % cam.width);
                        let ray = cam.generate_ray(i, j, None);
                        let seed = config.jitter.then(|| pixel_seed(view_seed, i, j));
                        match march_density(&model.density, &ray, config.samples_per_ray, seed) {
                            Some((samples, weights, _)) => RayFootprint::build(
                                &template,
                                &samples,
                                &weights,
                                config.min_weight,
                            ),
                            None => RayFootprint::default(),
                        }
                    })
                    .collect();
                ViewFootprints {
                    width: cam.width,
                    height: cam.height,
                    rays,
                }
            })
            .collect();
        let mut compact = vec![u32::MAX; template.voxel_count()];
        let mut active = Vec::new();
        for view in &mut views {
            for ray in &mut view.rays {
                for v in &mut ray.voxels {
                    let slot = &mut compact[*v as usize];
                    if *slot == u32::MAX {
                        *slot = active.len() as u32;
                        active.push(*v as usize);
                    }
                    *v = *slot;
                }
            }
        }
        Ok(FootprintCache {
            views,
            active,
            template,
        })
    }

    pub fn active_voxels(&self) -> usize {
        self.active.len()
    }

    /// Optimizes `lambda_i * L_i + lambda_r * L_r` over the instance grid,
    /// starting from `init`, for `steps` Adam steps.
    pub fn train(
        &self,
        init: &VoxelGrid,
        labels: &[LabelImage],
        config: &TrainConfig,
        steps: usize,
    ) -> Result<TrainOutcome> {
        config.validate()?;
        if !init.same_layout(&self.template) {
            return Err(Error::mismatch(
                "initial grid differs from the cached instance layout",
            ));
        }
        if labels.len() != self.views.len() {
            return Err(Error::mismatch(format!(
                "{} label images for {} views",
                labels.len(),
                self.views.len()
            )));
        }
        let l = init.channels();
        let mut pool: Vec<(u32, u32)> = Vec::new();
        let mut anchors: Vec<(u32, u32)> = Vec::new();
        for (v, (view, img)) in self.views.iter().zip(labels).enumerate() {
            if (img.width, img.height) != (view.width, view.height) {
                return Err(Error::mismatch(format!(
                    "label image {v} is {}x{}, camera is {}x{}",
                    img.width, img.height, view.width, view.height
                )));
            }
            for (p, &id) in img.ids.iter().enumerate() {
                if id == LabelImage::UNLABELED {
                    continue;
                }
                if id as usize >= l {
                    return Err(Error::invalid(format!(
                        "label {id} in view {v} exceeds the {l}-label grid"
                    )));
                }
                pool.push((v as u32, p as u32));
            }
            for (p, ray) in view.rays.iter().enumerate() {
                if !ray.is_empty() {
                    anchors.push((v as u32, p as u32));
                }
            }
        }
        if pool.is_empty() {
            return Err(Error::invalid("no labeled pixels to train on"));
        }

        let mut params: Vec<f64> = self
            .active
            .iter()
            .flat_map(|&v| init.voxel(v).iter().copied())
            .collect();
        let mut grad = vec![0.0; params.len()];
        let mut reg_grad = vec![0.0; params.len()];
        let mut adam = AdamState::new(params.len());
        let norm = config.normalization();
        let mut batch_rng = ChaCha8Rng::seed_from_u64(mix64(config.seed ^ 0xBA7C_0001));
        let mut patch_rng = ChaCha8Rng::seed_from_u64(mix64(config.seed ^ 0x9A7C_0002));
        let started = Instant::now();
        let mut log = Vec::new();
        let mut final_loss = 0.0;

        for step in 1..=steps {
            grad.iter_mut().for_each(|g| *g = 0.0);

            let batch: Vec<(u32, u32)> = (0..config.batch_rays)
                .map(|_| pool[batch_rng.gen_range(0..pool.len())])
                .collect();
            let logits: Vec<f64> = batch
                .par_iter()
                .flat_map_iter(|&(v, p)| {
                    let mut out = vec![0.0; l];
                    self.views[v as usize].rays[p as usize].render(&params, l, &mut out);
                    out
                })
                .collect();
            let targets: Vec<u16> = batch
                .iter()
                .map(|&(v, p)| labels[v as usize].ids[p as usize])
                .collect();
            let li = instance_loss(&logits, &targets, l, norm)?;
            let mut scaled = vec![0.0; l];
            for (r, &(v, p)) in batch.iter().enumerate() {
                for (s, g) in scaled.iter_mut().zip(&li.grad[r * l..(r + 1) * l]) {
                    *s = config.lambda_i * g;
                }
                self.views[v as usize].rays[p as usize].scatter(&scaled, l, &mut grad);
            }

            let mut lr_sum = 0.0;
            let mut patches_used = 0usize;
            reg_grad.iter_mut().for_each(|g| *g = 0.0);
            if config.lambda_r > 0.0 && !anchors.is_empty() {
                for _ in 0..config.patches_per_step {
                    let (v, p) = anchors[patch_rng.gen_range(0..anchors.len())];
                    let view = &self.views[v as usize];
                    let ph = config.patch_size.min(view.height);
                    let pw = config.patch_size.min(view.width);
                    if ph < 2 || pw < 2 {
                        continue;
                    }
                    let (ci, cj) = (p as usize / view.width, p as usize % view.width);
                    let i0 = ci.saturating_sub(ph / 2).min(view.height - ph);
                    let j0 = cj.saturating_sub(pw / 2).min(view.width - pw);
                    let rays: Vec<&RayFootprint> = (0..ph)
                        .flat_map(|di| (0..pw).map(move |dj| (i0 + di) * view.width + j0 + dj))
                        .map(|q| &view.rays[q])
                        .collect();
                    let mut patch = RegPatch {
                        height: ph,
                        width: pw,
                        logits: vec![0.0; ph * pw * l],
                        depths: rays.iter().map(|r| r.depth).collect(),
                    };
                    for (out, ray) in patch.logits.chunks_exact_mut(l).zip(&rays) {
                        ray.render(&params, l, out);
                    }
                    let lr = regularization_loss(&patch, l, norm)?;
                    lr_sum += lr.loss;
                    patches_used += 1;
                    for (ray, g) in rays.iter().zip(lr.grad.chunks_exact(l)) {
                        for (s, gv) in scaled.iter_mut().zip(g) {
                            *s = config.lambda_r * gv;
                        }
                        ray.scatter(&scaled, l, &mut reg_grad);
                    }
                }
            }
            let loss_r = if patches_used > 0 {
                lr_sum / patches_used as f64
            } else {
                0.0
            };
            if patches_used > 0 {
                let inv = 1.0 / patches_used as f64;
                for (g, r) in grad.iter_mut().zip(&reg_grad) {
                    *g += r * inv;
                }
            }
            let total = config.lambda_i * li.loss + config.lambda_r * loss_r;
            if !total.is_finite() {
                return Err(Error::NonFinite(format!("training loss at step {step}")));
            }
            adam_step(&mut params, &grad, &mut adam, &config.adam, step as u64)?;
            final_loss = total;
            if step % config.log_every.max(1) == 0 || step == steps {
                log.push(LogRecord {
                    step,
                    loss_instance: li.loss,
                    loss_regularization: loss_r,
                    total,
                    wall_ms: started.elapsed().as_millis() as u64,
                });
            }
        }

        let mut grid = init.clone();
        for (slot, &v) in self.active.iter().enumerate() {
            grid.voxel_mut(v)
                .copy_from_slice(&params[slot * l..(slot + 1) * l]);
        }
        Ok(TrainOutcome {
            grid,
            log,
            final_loss,
        })
    }
}

/// Convenience wrapper: builds the footprint cache for `views` and trains
/// from the model's current instance grid.
pub fn train_instance_field(
    model: &SceneModel,
    views: &[TrainView],
    config: &TrainConfig,
    steps: usize,
) -> Result<TrainOutcome> {
    let cameras: Vec<Camera> = views.iter().map(|v| v.camera.clone()).collect();
    let labels: Vec<LabelImage> = views.iter().map(|v| v.labels.clone()).collect();
    let cache = FootprintCache::build(model, &cameras, config)?;
    let init = model
        .instance_logits
        .as_ref()
        .ok_or_else(|| Error::invalid("training needs an instance logit grid"))?;
    cache.train(init, &labels, config, steps)
}
