//! Ray quadrature: stratified samples, transmittance weights, and the
//! expected color / depth / instance-logit accumulation.

use glam::DVec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{LabelImage, RgbImage};
use crate::scene::{ray_aabb_intersect, Camera, Ray, VoxelGrid};

/// Quadrature points along one ray.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RaySamples {
    pub t_values: Vec<f64>,
    pub positions: Vec<DVec3>,
    /// `t[k+1] - t[k]`; the last entry is `t_far - t[K-1]`.
    pub deltas: Vec<f64>,
}

impl RaySamples {
    pub fn len(&self) -> usize {
        self.t_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t_values.is_empty()
    }
}

/// One sample per equal-width bin of `[t_near, t_far]`. Without a seed the
/// sample sits at the bin midpoint; with a seed it is uniform in the bin.
pub fn stratified_samples(
    ray: &Ray,
    t_near: f64,
    t_far: f64,
    k: usize,
    jitter_seed: Option<u64>,
) -> Result<RaySamples> {
    if k == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    if !(t_near >= 0.0 && t_far > t_near && t_far.is_finite()) {
        return Err(Error::invalid(format!(
            "degenerate sampling interval [{t_near}, {t_far}]"
        )));
    }
    let bin = (t_far - t_near) / k as f64;
    let mut rng = jitter_seed.map(ChaCha8Rng::seed_from_u64);
    let t_values: Vec<f64> = (0..k)
        .map(|i| {
            let u = match rng.as_mut() {
                Some(rng) => rng.gen::<f64>(),
                None => 0.5,
            };
            t_near + (i as f64 + u) * bin
        })
        .collect();
    let deltas = t_values
        .iter()
        .enumerate()
        .map(|(i, &t)| t_values.get(i + 1).copied().unwrap_or(t_far) - t)
        .collect();
    let positions = t_values.iter().map(|&t| ray.at(t)).collect();
    Ok(RaySamples {
        t_values,
        positions,
        deltas,
    })
}

/// `w_k = T_k * (1 - exp(-s_k))` with `T_k = exp(-sum_{a<k} s_a)`, for
/// optical thicknesses `s_k = sigma_k * delta_k`. Also returns the
/// transmittance left after the last sample.
pub fn integration_weights(sigma_delta: &[f64]) -> Result<(Vec<f64>, f64)> {
    if let Some(k) = sigma_delta.iter().position(|s| !s.is_finite() || *s < 0.0) {
        return Err(Error::invalid(format!(
            "optical thickness at sample {k} is {}; must be finite and non-negative",
            sigma_delta[k]
        )));
    }
    Ok(weights_unchecked(sigma_delta))
}

pub(crate) fn weights_unchecked(sigma_delta: &[f64]) -> (Vec<f64>, f64) {
    let mut optical_depth = 0.0f64;
    let mut weights = Vec::with_capacity(sigma_delta.len());
    for &s in sigma_delta {
        let transmittance = (-optical_depth).exp();
        weights.push(transmittance * -(-s).exp_m1());
        optical_depth += s;
    }
    (weights, (-optical_depth).exp())
}

/// Density, color and (optionally) instance-logit grids over shared bounds.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneModel {
    pub density: VoxelGrid,
    pub color: VoxelGrid,
    pub instance_logits: Option<VoxelGrid>,
}

impl SceneModel {
    pub fn new(
        density: VoxelGrid,
        color: VoxelGrid,
        instance_logits: Option<VoxelGrid>,
    ) -> Result<Self> {
        let model = SceneModel {
            density,
            color,
            instance_logits,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.density.channels() != 1 {
            return Err(Error::mismatch("density grid must have 1 channel"));
        }
        if self.color.channels() != 3 {
            return Err(Error::mismatch("color grid must have 3 channels"));
        }
        if self.color.bounds() != self.density.bounds() {
            return Err(Error::mismatch(
                "color and density grids have different bounds",
            ));
        }
        if let Some(logits) = &self.instance_logits {
            if logits.channels() < 2 {
                return Err(Error::mismatch("instance grid needs at least 2 labels"));
            }
            if logits.bounds() != self.density.bounds() {
                return Err(Error::mismatch(
                    "instance and density grids have different bounds",
                ));
            }
        }
        Ok(())
    }

    pub fn num_labels(&self) -> Option<usize> {
        self.instance_logits.as_ref().map(VoxelGrid::channels)
    }

    /// Non-negative density at a point.
    pub fn sigma(&self, p: DVec3) -> f64 {
        self.density.sample_scalar(p).max(0.0)
    }
}

/// Quadrature outputs of one ray, with the samples and weights kept for
/// backpropagation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RenderedPixel {
    pub color: [f64; 3],
    pub depth: f64,
    pub instance_logits: Vec<f64>,
    pub weights: Vec<f64>,
    pub final_transmittance: f64,
    pub samples: RaySamples,
}

impl RenderedPixel {
    fn vacuum(num_labels: usize) -> Self {
        RenderedPixel {
            instance_logits: vec![0.0; num_labels],
            final_transmittance: 1.0,
            ..Default::default()
        }
    }
}

/// Samples and weights of a ray through the density field alone.
pub fn march_density(
    density: &VoxelGrid,
    ray: &Ray,
    k: usize,
    jitter_seed: Option<u64>,
) -> Option<(RaySamples, Vec<f64>, f64)> {
    let (t_near, t_far) = ray_aabb_intersect(ray, density.bounds())?;
    let samples = stratified_samples(ray, t_near, t_far, k, jitter_seed).ok()?;
    let sigma_delta: Vec<f64> = samples
        .positions
        .iter()
        .zip(&samples.deltas)
        .map(|(&p, &d)| density.sample_scalar(p).max(0.0) * d)
        .collect();
    let (weights, final_transmittance) = weights_unchecked(&sigma_delta);
    Some((samples, weights, final_transmittance))
}

pub fn render_ray(
    model: &SceneModel,
    ray: &Ray,
    k: usize,
    jitter_seed: Option<u64>,
) -> RenderedPixel {
    let num_labels = model.num_labels().unwrap_or(0);
    let Some((samples, weights, final_transmittance)) =
        march_density(&model.density, ray, k, jitter_seed)
    else {
        return RenderedPixel::vacuum(num_labels);
    };
    let mut color = [0.0; 3];
    let mut depth = 0.0;
    let mut logits = vec![0.0; num_labels];
    let mut rgb = [0.0; 3];
    let mut scratch = vec![0.0; num_labels];
    for ((&p, &t), &w) in samples
        .positions
        .iter()
        .zip(&samples.t_values)
        .zip(&weights)
    {
        if w == 0.0 {
            continue;
        }
        model
            .color
            .blend(&model.color.stencil_unchecked(p), &mut rgb);
        for (c, v) in color.iter_mut().zip(rgb) {
            *c += w * v;
        }
        depth += w * t;
        if let Some(grid) = &model.instance_logits {
            grid.blend(&grid.stencil_unchecked(p), &mut scratch);
            for (l, v) in logits.iter_mut().zip(&scratch) {
                *l += w * v;
            }
        }
    }
    RenderedPixel {
        color,
        depth,
        instance_logits: logits,
        weights,
        final_transmittance,
        samples,
    }
}

/// Renders pixel `(i, j)`. The seed, when given, is used as is; see
/// [`pixel_seed`] for the per-pixel derivation used by image rendering.
pub fn render_pixel(
    model: &SceneModel,
    camera: &Camera,
    pixel: (usize, usize),
    k: usize,
    jitter_seed: Option<u64>,
) -> RenderedPixel {
    let ray = camera.generate_ray(pixel.0, pixel.1, None);
    render_ray(model, &ray, k, jitter_seed)
}

/// SplitMix64 finalizer.
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic per-pixel seed, independent of evaluation order.
pub fn pixel_seed(global: u64, i: usize, j: usize) -> u64 {
    mix64(mix64(mix64(global) ^ i as u64) ^ ((j as u64) << 32 | 0x5bd1))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RenderOutputs {
    pub color: bool,
    pub depth: bool,
    pub instance_argmax: bool,
}

impl RenderOutputs {
    pub fn all() -> Self {
        RenderOutputs {
            color: true,
            depth: true,
            instance_argmax: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RenderedImage {
    pub color: Option<RgbImage>,
    /// Row-major expected depth, 0 for rays that miss the bounds.
    pub depth: Option<Vec<f64>>,
    pub labels: Option<LabelImage>,
}

/// Index of the largest logit, ties resolved toward the lower label.
pub fn argmax_label(logits: &[f64]) -> usize {
    let mut best = 0;
    for (l, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = l;
        }
    }
    best
}

/// Renders every pixel of `camera` in parallel. With a seed, pixel `(i, j)`
/// uses `pixel_seed(seed, i, j)`, so results do not depend on scheduling.
pub fn render_image(
    model: &SceneModel,
    camera: &Camera,
    k: usize,
    jitter_seed: Option<u64>,
    outputs: RenderOutputs,
) -> Result<RenderedImage> {
    model.validate()?;
    if outputs.instance_argmax && model.instance_logits.is_none() {
        return Err(Error::invalid(
            "instance argmax requested without an instance grid",
        ));
    }
    let (w, h) = (camera.width, camera.height);
    let pixels: Vec<RenderedPixel> = (0..w * h)
        .into_par_iter()
        .map(|p| {
            let (i, j) = (p / w, p % w);
            render_pixel(
                model,
                camera,
                (i, j),
                k,
                jitter_seed.map(|s| pixel_seed(s, i, j)),
            )
        })
        .collect();
    let mut out = RenderedImage::default();
    if outputs.color {
        out.color = Some(RgbImage {
            width: w,
            height: h,
            pixels: pixels.iter().map(|p| p.color).collect(),
        });
    }
    if outputs.depth {
        out.depth = Some(pixels.iter().map(|p| p.depth).collect());
    }
    if outputs.instance_argmax {
        out.labels = Some(LabelImage {
            width: w,
            height: h,
            ids: pixels
                .iter()
                .map(|p| argmax_label(&p.instance_logits) as u16)
                .collect(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::SceneBounds;

    fn ray_down_z() -> Ray {
        Ray {
            origin: DVec3::new(0.0, 0.0, 5.0),
            direction: DVec3::new(0.0, 0.0, -1.0),
            pixel: (0, 0),
        }
    }

    fn vacuum_model(labels: usize) -> SceneModel {
        let b = SceneBounds::cube(1.0);
        SceneModel::new(
            VoxelGrid::zeros([4, 4, 4], 1, b).unwrap(),
            VoxelGrid::zeros([4, 4, 4], 3, b).unwrap(),
            Some(VoxelGrid::zeros([4, 4, 4], labels, b).unwrap()),
        )
        .unwrap()
    }

    #[test]
    fn midpoint_samples() {
        let s = stratified_samples(&ray_down_z(), 0.0, 4.0, 4, None).unwrap();
        assert_eq!(s.t_values, vec![0.5, 1.5, 2.5, 3.5]);
        assert_eq!(s.deltas, vec![1.0, 1.0, 1.0, 0.5]);
    }

    #[test]
    fn jittered_samples_stay_in_bins_and_repeat() {
        for seed in 0..20 {
            let a = stratified_samples(&ray_down_z(), 1.0, 3.0, 8, Some(seed)).unwrap();
            let b = stratified_samples(&ray_down_z(), 1.0, 3.0, 8, Some(seed)).unwrap();
            assert_eq!(a, b);
            for (k, t) in a.t_values.iter().enumerate() {
                let lo = 1.0 + 0.25 * k as f64;
                assert!(*t >= lo && *t < lo + 0.25);
            }
            assert!(a.deltas.iter().all(|d| *d > 0.0));
        }
    }

    #[test]
    fn degenerate_interval_is_an_error() {
        assert!(stratified_samples(&ray_down_z(), 2.0, 2.0, 4, None).is_err());
        assert!(stratified_samples(&ray_down_z(), 0.0, 1.0, 0, None).is_err());
    }

    #[test]
    fn empty_space_weights() {
        let (w, t) = integration_weights(&[0.0; 5]).unwrap();
        assert!(w.iter().all(|v| *v == 0.0));
        assert_eq!(t, 1.0);
    }

    #[test]
    fn opaque_first_sample_takes_everything() {
        let (w, t) = integration_weights(&[30.0, 1.0, 2.0]).unwrap();
        assert!((w[0] - 1.0).abs() < 1e-9);
        assert!(w[1] < 1e-9 && w[2] < 1e-9 && t < 1e-9);
    }

    #[test]
    fn ln2_weights_by_hand() {
        let ln2 = std::f64::consts::LN_2;
        let (w, t) = integration_weights(&[ln2, ln2]).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-15);
        assert!((w[1] - 0.25).abs() < 1e-15);
        assert!((t - 0.25).abs() < 1e-15);
    }

    #[test]
    fn negative_thickness_is_rejected() {
        assert!(integration_weights(&[0.1, -0.2]).is_err());
    }

    #[test]
    fn vacuum_pixel_is_black_at_depth_zero() {
        let model = vacuum_model(3);
        let px = render_ray(&model, &ray_down_z(), 32, None);
        assert_eq!(px.color, [0.0; 3]);
        assert_eq!(px.depth, 0.0);
        assert_eq!(px.final_transmittance, 1.0);
    }

    #[test]
    fn missing_ray_is_all_zero() {
        let model = vacuum_model(2);
        let ray = Ray {
            origin: DVec3::new(3.0, 0.0, 5.0),
            direction: DVec3::new(0.0, 0.0, -1.0),
            pixel: (0, 0),
        };
        let px = render_ray(&model, &ray, 16, None);
        assert_eq!(px.instance_logits, vec![0.0, 0.0]);
        assert_eq!(px.final_transmittance, 1.0);
        assert!(px.samples.is_empty());
    }

    #[test]
    fn argmax_ties_pick_lower_label() {
        assert_eq!(argmax_label(&[0.0, 0.0, 0.0]), 0);
        assert_eq!(argmax_label(&[0.0, 2.0, 2.0]), 1);
        assert_eq!(argmax_label(&[-1.0, -3.0, -0.5]), 2);
    }
}
