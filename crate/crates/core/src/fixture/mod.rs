//! Synthetic scenes with analytic ground truth: primitive solids, orbit
//! cameras, exact label and depth maps, and corrupted panoptic inputs.

mod corrupt;
mod shapes;

use std::path::{Path, PathBuf};

use glam::DVec3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detect::Aabb;
use crate::error::{Error, Result};
use crate::image::{LabelImage, RgbImage};
use crate::io::{
    write_cameras, write_class_map, write_depth, write_detections, write_grid, write_json,
    write_label_pgm, write_ppm, ClassMap, DetectionRecord, Dtype,
};
use crate::matching::{PanopticView, RegistryInstance};
use crate::render::{mix64, render_image, RenderOutputs, SceneModel};
use crate::scene::{Camera, SceneBounds, VoxelGrid};

pub use corrupt::{corrupt_view, CorruptionSpec};
pub use shapes::{first_hit, Shape, ShapeKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    #[serde(flatten)]
    pub shape: Shape,
    /// Semantic class, at least 1 (0 is background).
    pub class: u16,
    pub color: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixtureSpec {
    pub objects: Vec<ObjectSpec>,
    pub dims: [usize; 3],
    pub bounds: SceneBounds,
    /// Density inside solids.
    pub sigma: f64,
    /// Per-axis sub-samples used to estimate voxel coverage.
    pub supersample: usize,
    pub train_views: usize,
    pub heldout_views: usize,
    pub width: usize,
    pub height: usize,
    pub camera_distance: f64,
    /// Horizontal field of view in radians.
    pub fov_x: f64,
    /// Quadrature samples for the ground-truth color renders.
    pub samples_per_ray: usize,
    pub corruption: CorruptionSpec,
    pub seed: u64,
}

fn object(
    kind: ShapeKind,
    center: [f64; 3],
    size: [f64; 3],
    class: u16,
    color: [f64; 3],
) -> ObjectSpec {
    ObjectSpec {
        shape: Shape { kind, center, size },
        class,
        color,
    }
}

impl Default for FixtureSpec {
    fn default() -> Self {
        FixtureSpec {
            objects: FixtureSpec::standard_objects(3),
            dims: [64; 3],
            bounds: SceneBounds::cube(1.0),
            sigma: 50.0,
            supersample: 4,
            train_views: 20,
            heldout_views: 5,
            width: 128,
            height: 128,
            camera_distance: 3.2,
            fov_x: 0.8,
            samples_per_ray: 128,
            corruption: CorruptionSpec::default(),
            seed: 0,
        }
    }
}

impl FixtureSpec {
    /// The first `n` (at most 4) objects of a fixed tabletop-like layout: a
    /// box, a sphere, a cylinder and a small second sphere.
    pub fn standard_objects(n: usize) -> Vec<ObjectSpec> {
        let all = [
            object(
                ShapeKind::Box,
                [-0.45, -0.35, -0.2],
                [0.5, 0.6, 0.6],
                1,
                [0.85, 0.2, 0.15],
            ),
            object(
                ShapeKind::Sphere,
                [0.45, -0.3, 0.0],
                [0.7, 0.0, 0.0],
                2,
                [0.2, 0.75, 0.3],
            ),
            object(
                ShapeKind::Cylinder,
                [0.0, 0.5, -0.1],
                [0.55, 0.0, 0.8],
                3,
                [0.2, 0.35, 0.9],
            ),
            object(
                ShapeKind::Sphere,
                [0.05, -0.05, 0.62],
                [0.45, 0.0, 0.0],
                1,
                [0.9, 0.8, 0.2],
            ),
        ];
        all.into_iter().take(n).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.objects.is_empty() || self.objects.len() > 8 {
            return Err(Error::invalid(format!(
                "fixtures hold 1 to 8 objects, got {}",
                self.objects.len()
            )));
        }
        self.bounds.validate()?;
        for (i, o) in self.objects.iter().enumerate() {
            o.shape.validate()?;
            if o.class == 0 {
                return Err(Error::invalid(format!(
                    "object {i} uses background class 0"
                )));
            }
            if !o.shape.inside_bounds(&self.bounds) {
                return Err(Error::invalid(format!(
                    "object {i} leaves the scene bounds"
                )));
            }
            if o.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(Error::invalid(format!("object {i} color outside [0, 1]")));
            }
        }
        if self.dims.iter().any(|&d| d == 0) || self.supersample == 0 {
            return Err(Error::invalid(
                "grid dims and supersampling must be positive",
            ));
        }
        if self.train_views == 0 || self.width == 0 || self.height == 0 {
            return Err(Error::invalid(
                "need at least one training view of positive size",
            ));
        }
        if !(self.sigma > 0.0) || !(self.fov_x > 0.0 && self.fov_x < 3.0) {
            return Err(Error::invalid("sigma and field of view must be positive"));
        }
        let bound_radius = self.bounds.extent().length() * 0.5;
        if self.camera_distance <= bound_radius {
            return Err(Error::invalid("cameras must sit outside the scene bounds"));
        }
        self.corruption.validate()
    }

    pub fn num_classes(&self) -> usize {
        1 + self
            .objects
            .iter()
            .map(|o| o.class as usize)
            .max()
            .unwrap_or(0)
    }

    pub fn semantic_map(&self) -> ClassMap {
        self.objects
            .iter()
            .enumerate()
            .map(|(i, o)| (i as u16 + 1, o.class))
            .collect()
    }

    fn orbit_camera(&self, azimuth: f64, elevation: f64) -> Result<Camera> {
        let c = DVec3::from_array(self.bounds.min_corner)
            .lerp(DVec3::from_array(self.bounds.max_corner), 0.5);
        let dir = DVec3::new(
            elevation.cos() * azimuth.cos(),
            elevation.cos() * azimuth.sin(),
            elevation.sin(),
        );
        Camera::look_at(
            c + self.camera_distance * dir,
            c,
            DVec3::Z,
            self.width,
            self.height,
            self.fov_x,
        )
    }

    /// Training cameras circle the scene at elevations between 0.2 and 0.8
    /// rad; held-out cameras sit between them.
    pub fn cameras(&self) -> Result<(Vec<Camera>, Vec<Camera>)> {
        use std::f64::consts::TAU;
        let golden = 0.618_033_988_749_895;
        let train = (0..self.train_views)
            .map(|i| {
                let az = TAU * i as f64 / self.train_views as f64;
                let el = 0.2 + 0.6 * ((i as f64 * golden) % 1.0);
                self.orbit_camera(az, el)
            })
            .collect::<Result<_>>()?;
        let heldout = (0..self.heldout_views)
            .map(|i| {
                let az = TAU * (i as f64 + 0.37) / self.heldout_views as f64;
                self.orbit_camera(az, 0.45)
            })
            .collect::<Result<_>>()?;
        Ok((train, heldout))
    }
}

/// Ground truth of one view.
#[derive(Clone, Debug, PartialEq)]
pub struct FixtureView {
    pub camera: Camera,
    pub labels: LabelImage,
    /// Row-major distance to the first surface, 0 where nothing is hit.
    pub depth: Vec<f64>,
    pub rgb: RgbImage,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Fixture {
    pub spec: FixtureSpec,
    pub scene: SceneModel,
    /// Instance `i` of the spec has global id `i + 1`.
    pub instances: Vec<RegistryInstance>,
    pub semantic_map: ClassMap,
    pub train: Vec<FixtureView>,
    pub heldout: Vec<FixtureView>,
    /// Corrupted 2D predictions for the training views.
    pub panoptic: Vec<PanopticView>,
}

/// Exact instance ids and depths by ray casting the solids.
pub fn analytic_view(spec: &FixtureSpec, camera: &Camera) -> (LabelImage, Vec<f64>) {
    let shapes: Vec<Shape> = spec.objects.iter().map(|o| o.shape).collect();
    let w = camera.width;
    let hits: Vec<(u16, f64)> = (0..camera.pixel_count())
        .into_par_iter()
        .map(|p| {
            let ray = camera.generate_ray(p / w, p % w, None);
            match first_hit(&shapes, &ray, &spec.bounds) {
                Some((i, t)) => (i as u16 + 1, t),
                None => (LabelImage::BACKGROUND, 0.0),
            }
        })
        .collect();
    (
        LabelImage {
            width: w,
            height: camera.height,
            ids: hits.iter().map(|h| h.0).collect(),
        },
        hits.iter().map(|h| h.1).collect(),
    )
}

fn coverage_grids(spec: &FixtureSpec) -> Result<Vec<VoxelGrid>> {
    spec.objects
        .par_iter()
        .map(|o| {
            let probe = VoxelGrid::zeros(spec.dims, 1, spec.bounds)?;
            let size = probe.voxel_size();
            VoxelGrid::from_fn(spec.dims, 1, spec.bounds, |c, out| {
                out[0] = o.shape.coverage(c - 0.5 * size, size, spec.supersample);
            })
        })
        .collect()
}

pub fn make_fixture(spec: &FixtureSpec) -> Result<Fixture> {
    spec.validate()?;
    let coverage = coverage_grids(spec)?;
    let voxels = coverage[0].voxel_count();
    let mut density = VoxelGrid::zeros(spec.dims, 1, spec.bounds)?;
    let mut color = VoxelGrid::zeros(spec.dims, 3, spec.bounds)?;
    for v in 0..voxels {
        let total: f64 = coverage.iter().map(|g| g.data()[v]).sum();
        if total == 0.0 {
            continue;
        }
        density.data_mut()[v] = spec.sigma * total.min(1.0);
        let rgb = color.voxel_mut(v);
        for (g, o) in coverage.iter().zip(&spec.objects) {
            for (c, oc) in rgb.iter_mut().zip(o.color) {
                *c += g.data()[v] / total * oc;
            }
        }
    }
    let scene = SceneModel::new(density, color, None)?;

    let instances = coverage
        .iter()
        .zip(&spec.objects)
        .enumerate()
        .map(|(i, (cov, o))| {
            let mut mask = cov.clone();
            for m in mask.data_mut() {
                *m = if *m >= 0.5 { 1.0 } else { 0.0 };
            }
            let half = o.shape.extent() * 0.5;
            let c = DVec3::from_array(o.shape.center);
            Ok(RegistryInstance {
                global_id: i as u16 + 1,
                class: o.class,
                mask_grid: mask,
                bbox: Aabb::from_min_max(c - half, c + half)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let (train_cams, heldout_cams) = spec.cameras()?;
    let render_view = |camera: Camera| -> Result<FixtureView> {
        let (labels, depth) = analytic_view(spec, &camera);
        let outputs = RenderOutputs {
            color: true,
            ..Default::default()
        };
        let rgb = render_image(&scene, &camera, spec.samples_per_ray, None, outputs)?
            .color
            .expect("color requested");
        Ok(FixtureView {
            camera,
            labels,
            depth,
            rgb,
        })
    };
    let train = train_cams
        .into_iter()
        .map(render_view)
        .collect::<Result<Vec<_>>>()?;
    let heldout = heldout_cams
        .into_iter()
        .map(render_view)
        .collect::<Result<Vec<_>>>()?;

    let semantic_map = spec.semantic_map();
    let panoptic = train
        .iter()
        .enumerate()
        .map(|(v, view)| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix64(spec.seed ^ mix64(v as u64 + 1)));
            corrupt_view(&view.labels, &semantic_map, &spec.corruption, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(Fixture {
        spec: spec.clone(),
        scene,
        instances,
        semantic_map,
        train,
        heldout,
        panoptic,
    })
}

/// File names of a fixture directory.
#[derive(Clone, Debug, PartialEq)]
pub struct FixtureLayout {
    pub root: PathBuf,
}

impl FixtureLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        FixtureLayout { root: root.into() }
    }

    pub fn spec(&self) -> PathBuf {
        self.root.join("fixture.json")
    }

    pub fn density(&self) -> PathBuf {
        self.root.join("scene/density.json")
    }

    pub fn color(&self) -> PathBuf {
        self.root.join("scene/color.json")
    }

    pub fn cameras(&self, split: Split) -> PathBuf {
        self.root.join(format!("cameras/{}.json", split.name()))
    }

    pub fn gt_labels(&self, split: Split, view: usize) -> PathBuf {
        self.root
            .join(format!("gt/{}/labels_{view:03}.pgm", split.name()))
    }

    pub fn gt_depth(&self, split: Split, view: usize) -> PathBuf {
        self.root
            .join(format!("gt/{}/depth_{view:03}.json", split.name()))
    }

    pub fn gt_rgb(&self, split: Split, view: usize) -> PathBuf {
        self.root
            .join(format!("gt/{}/rgb_{view:03}.ppm", split.name()))
    }

    pub fn semantic_map(&self) -> PathBuf {
        self.root.join("gt/semantic_map.json")
    }

    pub fn panoptic_dir(&self) -> PathBuf {
        self.root.join("panoptic")
    }

    pub fn detections(&self) -> PathBuf {
        self.root.join("detections.json")
    }
}

/// Panoptic label image and sidecar of a view inside a panoptic directory.
pub fn panoptic_paths(dir: &Path, view: usize) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("view_{view:03}.pgm")),
        dir.join(format!("view_{view:03}.json")),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Heldout,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Heldout => "heldout",
        }
    }
}

impl Fixture {
    /// Writes every artifact under `root`; returns the written files.
    pub fn write(&self, root: &Path) -> Result<Vec<PathBuf>> {
        let layout = FixtureLayout::new(root);
        let mut written = Vec::new();
        let grid = |path: PathBuf, g: &VoxelGrid, written: &mut Vec<PathBuf>| -> Result<()> {
            write_grid(&path, g, Dtype::F32Le)?;
            written.push(path.with_extension("f32"));
            written.push(path);
            Ok(())
        };
        write_json(&layout.spec(), &self.spec)?;
        written.push(layout.spec());
        grid(layout.density(), &self.scene.density, &mut written)?;
        grid(layout.color(), &self.scene.color, &mut written)?;
        for (split, views) in [(Split::Train, &self.train), (Split::Heldout, &self.heldout)] {
            let cams: Vec<Camera> = views.iter().map(|v| v.camera.clone()).collect();
            write_cameras(&layout.cameras(split), &cams)?;
            written.push(layout.cameras(split));
            for (i, v) in views.iter().enumerate() {
                write_label_pgm(&layout.gt_labels(split, i), &v.labels)?;
                write_depth(
                    &layout.gt_depth(split, i),
                    v.camera.width,
                    v.camera.height,
                    &v.depth,
                )?;
                write_ppm(&layout.gt_rgb(split, i), &v.rgb)?;
                written.push(layout.gt_labels(split, i));
                written.push(layout.gt_depth(split, i).with_extension("f32"));
                written.push(layout.gt_depth(split, i));
                written.push(layout.gt_rgb(split, i));
            }
        }
        write_class_map(&layout.semantic_map(), &self.semantic_map)?;
        written.push(layout.semantic_map());
        for (i, p) in self.panoptic.iter().enumerate() {
            let (pgm, sidecar) = panoptic_paths(&layout.panoptic_dir(), i);
            write_label_pgm(&pgm, &p.labels)?;
            write_class_map(&sidecar, &p.classes)?;
            written.push(pgm);
            written.push(sidecar);
        }
        let mut records = Vec::new();
        for inst in &self.instances {
            let rel = format!("masks/instance_{:03}.json", inst.global_id);
            grid(root.join(&rel), &inst.mask_grid, &mut written)?;
            records.push(DetectionRecord {
                id: inst.global_id,
                class: inst.class,
                bbox: inst.bbox.into(),
                score: 0.95,
                mask_grid: rel,
            });
        }
        write_detections(&layout.detections(), &records)?;
        written.push(layout.detections());
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(n: usize) -> FixtureSpec {
        FixtureSpec {
            objects: FixtureSpec::standard_objects(n),
            dims: [16; 3],
            supersample: 2,
            train_views: 4,
            heldout_views: 2,
            width: 24,
            height: 24,
            samples_per_ray: 32,
            ..Default::default()
        }
    }

    #[test]
    fn zero_objects_is_an_error() {
        let spec = FixtureSpec {
            objects: Vec::new(),
            ..small_spec(1)
        };
        assert!(make_fixture(&spec).is_err());
    }

    #[test]
    fn single_object_views_hold_background_and_the_object() {
        let spec = FixtureSpec {
            objects: vec![object(
                ShapeKind::Box,
                [0.0; 3],
                [1.0; 3],
                1,
                [1.0, 0.0, 0.0],
            )],
            ..small_spec(1)
        };
        let f = make_fixture(&spec).unwrap();
        for v in f.train.iter().chain(&f.heldout) {
            assert_eq!(v.labels.distinct_ids(), vec![0, 1]);
        }
    }

    #[test]
    fn standard_boxes_barely_overlap() {
        let objs = FixtureSpec::standard_objects(4);
        for a in 0..4 {
            for b in a + 1..4 {
                let bx = |o: &ObjectSpec| {
                    Aabb::new(o.shape.center, o.shape.extent().to_array()).unwrap()
                };
                assert!(crate::detect::box_iou_3d(&bx(&objs[a]), &bx(&objs[b])) < 0.15);
            }
        }
    }

    #[test]
    fn spec_round_trips_through_json() {
        let spec = small_spec(3);
        let text = serde_json::to_string(&spec).unwrap();
        let back: FixtureSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }
}
