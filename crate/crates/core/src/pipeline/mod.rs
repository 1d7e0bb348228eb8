//! End-to-end orchestration: mask matching, two-stage instance training
//! with refinement in between, held-out evaluation, and the artifact
//! manifest.

mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detect::{nms_3d, Aabb};
use crate::error::{Error, Result};
use crate::field::{FootprintCache, LogRecord, TrainConfig};
use crate::fixture::panoptic_paths;
use crate::image::{LabelImage, RgbImage};
use crate::io::{
    read_bytes, read_cameras, read_class_map, read_detections, read_grid, read_label_pgm, read_ppm,
    resolve_relative, sha256_hex, write_class_map, write_grid, write_json, write_jsonl,
    write_label_pgm, write_ppm, ClassMap, Dtype,
};
use crate::matching::{
    build_registry, refine_masks_builtin, InstanceRegistry, PanopticView, RegistryInstance,
};
use crate::metrics::{evaluate_views, MetricReport, PanopticFrame};
use crate::render::{render_image, RenderOutputs, SceneModel};
use crate::scene::{Camera, VoxelGrid};

pub use config::{DetectionFilter, InputPaths, PipelineConfig, RefineConfig, RefineMode};

/// Name of the `N`-th label image in a label directory.
pub fn label_path(dir: &Path, view: usize) -> PathBuf {
    dir.join(format!("labels_{view:03}.pgm"))
}

pub fn rgb_path(dir: &Path, view: usize) -> PathBuf {
    dir.join(format!("rgb_{view:03}.ppm"))
}

pub fn write_label_set(dir: &Path, labels: &[LabelImage]) -> Result<Vec<PathBuf>> {
    labels
        .iter()
        .enumerate()
        .map(|(v, l)| {
            let path = label_path(dir, v);
            write_label_pgm(&path, l)?;
            Ok(path)
        })
        .collect()
}

pub fn read_label_set(dir: &Path, count: usize) -> Result<Vec<LabelImage>> {
    (0..count)
        .map(|v| read_label_pgm(&label_path(dir, v)))
        .collect()
}

pub fn read_rgb_set(dir: &Path, count: usize) -> Result<Vec<RgbImage>> {
    (0..count).map(|v| read_ppm(&rgb_path(dir, v))).collect()
}

pub fn read_panoptic_set(dir: &Path, count: usize) -> Result<Vec<PanopticView>> {
    (0..count)
        .map(|v| {
            let (pgm, sidecar) = panoptic_paths(dir, v);
            PanopticView::read(&pgm, &sidecar)
        })
        .collect()
}

/// Reads the detection file, keeps detections scoring above the threshold,
/// suppresses overlapping boxes and loads the surviving mask grids.
pub fn load_detections(path: &Path, filter: &DetectionFilter) -> Result<Vec<RegistryInstance>> {
    let records: Vec<_> = read_detections(path)?
        .into_iter()
        .filter(|r| r.score > filter.score_threshold)
        .collect();
    let boxes = records
        .iter()
        .map(|r| Aabb::try_from(r.bbox))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::format(path, e.to_string()))?;
    let scores: Vec<f64> = records.iter().map(|r| r.score).collect();
    let mut kept = nms_3d(&boxes, &scores, filter.nms_threshold)?;
    kept.sort_unstable();
    kept.into_iter()
        .map(|i| {
            let r = &records[i];
            Ok(RegistryInstance {
                global_id: r.id,
                class: r.class,
                mask_grid: read_grid(&resolve_relative(path, &r.mask_grid))?,
                bbox: boxes[i],
            })
        })
        .collect()
}

/// Number of logit channels needed for the registry's ids.
pub fn num_labels_for(registry: &InstanceRegistry) -> usize {
    registry
        .instances
        .iter()
        .map(|i| i.global_id as usize + 1)
        .max()
        .unwrap_or(1)
        .max(2)
}

pub fn load_scene(inputs: &InputPaths) -> Result<SceneModel> {
    let density = read_grid(&inputs.density)
        .map_err(|e| e.in_stage("load", inputs.density.display().to_string()))?;
    let color = read_grid(&inputs.color)
        .map_err(|e| e.in_stage("load", inputs.color.display().to_string()))?;
    SceneModel::new(density, color, None)
        .map_err(|e| e.in_stage("load", inputs.density.display().to_string()))
}

/// Output of the matching stage.
#[derive(Clone, Debug)]
pub struct MatchOutcome {
    pub registry: InstanceRegistry,
    pub labels: Vec<LabelImage>,
    pub cameras: Vec<Camera>,
}

pub fn match_stage(config: &PipelineConfig, density: &VoxelGrid) -> Result<MatchOutcome> {
    let inputs = &config.inputs;
    let stage = |p: &Path| {
        let file = p.display().to_string();
        move |e: Error| e.in_stage("match-masks", file)
    };
    let cameras = read_cameras(&inputs.cameras).map_err(stage(&inputs.cameras))?;
    let panoptic = read_panoptic_set(&inputs.panoptic_dir, cameras.len())
        .map_err(stage(&inputs.panoptic_dir))?;
    let detections = load_detections(&inputs.detections, &config.detection)
        .map_err(stage(&inputs.detections))?;
    let views: Vec<(Camera, PanopticView)> = cameras.iter().cloned().zip(panoptic).collect();
    let (registry, labels) = build_registry(detections, density, &views, &config.matching)
        .map_err(stage(&inputs.panoptic_dir))?;
    Ok(MatchOutcome {
        registry,
        labels,
        cameras,
    })
}

/// Argmax label images of `model` seen from `cameras`, sampled at bin
/// midpoints.
pub fn render_labels(model: &SceneModel, cameras: &[Camera], k: usize) -> Result<Vec<LabelImage>> {
    let outputs = RenderOutputs {
        instance_argmax: true,
        ..Default::default()
    };
    cameras
        .iter()
        .map(|c| {
            Ok(render_image(model, c, k, None, outputs)?
                .labels
                .expect("labels requested"))
        })
        .collect()
}

pub fn refine_stage(config: &RefineConfig, rendered: &[LabelImage]) -> Result<Vec<LabelImage>> {
    match config.mode {
        RefineMode::Builtin => Ok(rendered
            .iter()
            .map(|l| refine_masks_builtin(l, config.radius))
            .collect()),
        RefineMode::External => {
            let dir = config
                .masks_dir
                .as_ref()
                .ok_or_else(|| Error::invalid("external refinement needs a masks directory"))?;
            let refined = read_label_set(dir, rendered.len())
                .map_err(|e| e.in_stage("refine", dir.display().to_string()))?;
            for (v, (a, b)) in refined.iter().zip(rendered).enumerate() {
                if (a.width, a.height) != (b.width, b.height) {
                    return Err(
                        Error::mismatch(format!("refined mask {v} has the wrong size"))
                            .in_stage("refine", label_path(dir, v).display().to_string()),
                    );
                }
            }
            Ok(refined)
        }
    }
}

/// Held-out views and their ground truth.
pub struct EvalSet {
    pub cameras: Vec<Camera>,
    pub labels: Vec<LabelImage>,
    pub semantic_map: ClassMap,
}

impl EvalSet {
    /// `None` when the config names no evaluation inputs.
    pub fn load(inputs: &InputPaths) -> Result<Option<Self>> {
        let (Some(cams), Some(dir), Some(map)) = (
            &inputs.eval_cameras,
            &inputs.eval_labels_dir,
            &inputs.eval_semantic_map,
        ) else {
            return Ok(None);
        };
        let wrap = |p: &Path| {
            let file = p.display().to_string();
            move |e: Error| e.in_stage("evaluate", file)
        };
        let cameras = read_cameras(cams).map_err(wrap(cams))?;
        let labels = read_label_set(dir, cameras.len()).map_err(wrap(dir))?;
        let semantic_map = read_class_map(map).map_err(wrap(map))?;
        Ok(Some(EvalSet {
            cameras,
            labels,
            semantic_map,
        }))
    }

    pub fn num_classes(&self, predicted: &ClassMap, background: &[u16]) -> usize {
        self.semantic_map
            .values()
            .chain(predicted.values())
            .chain(background)
            .map(|&c| c as usize + 1)
            .max()
            .unwrap_or(1)
    }

    pub fn evaluate(
        &self,
        predicted: &[LabelImage],
        semantic_map: &ClassMap,
        background: &[u16],
    ) -> Result<MetricReport> {
        let pred: Vec<_> = predicted
            .iter()
            .map(|labels| PanopticFrame {
                labels,
                semantic_map,
            })
            .collect();
        let gt: Vec<_> = self
            .labels
            .iter()
            .map(|labels| PanopticFrame {
                labels,
                semantic_map: &self.semantic_map,
            })
            .collect();
        evaluate_views(
            &pred,
            &gt,
            self.num_classes(semantic_map, background),
            background,
        )
    }
}

/// Contents of `report.json`: the final-stage metrics at top level, the
/// first-stage metrics under `stage1`, and the last-step objectives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    #[serde(flatten)]
    pub metrics: Option<MetricReport>,
    pub stage1: Option<MetricReport>,
    pub final_loss_stage1: f64,
    pub final_loss_stage2: f64,
    pub num_instances: usize,
    pub semantic_map: ClassMap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

pub struct PipelineOutcome {
    pub registry: InstanceRegistry,
    pub stage1: VoxelGrid,
    pub stage2: VoxelGrid,
    pub log_stage1: Vec<LogRecord>,
    pub log_stage2: Vec<LogRecord>,
    pub report: PipelineReport,
    pub artifacts: Vec<PathBuf>,
}

fn train_steps(
    stage: &'static str,
    cache: &FootprintCache,
    init: &VoxelGrid,
    labels: &[LabelImage],
    config: &TrainConfig,
    steps: usize,
) -> Result<crate::field::TrainOutcome> {
    cache
        .train(init, labels, config, steps)
        .map_err(|e| e.in_stage(stage, "instance grid"))
}

/// Runs match, stage-1 training, intermediate rendering, refinement,
/// stage-2 training and evaluation, writing every artifact under `out_dir`.
pub fn run_pipeline(config: &PipelineConfig, out_dir: &Path) -> Result<PipelineOutcome> {
    config.validate()?;
    let mut artifacts: Vec<PathBuf> = Vec::new();
    let scene = load_scene(&config.inputs)?;
    let eval = EvalSet::load(&config.inputs)?;

    let matched = match_stage(config, &scene.density)?;
    artifacts.extend(write_label_set(&out_dir.join("matched"), &matched.labels)?);
    let registry_path = out_dir.join("matched/registry.json");
    write_class_map(&registry_path, &matched.registry.semantic_map)?;
    artifacts.push(registry_path);

    let l = num_labels_for(&matched.registry);
    let bounds = *scene.density.bounds();
    let model = SceneModel {
        instance_logits: Some(VoxelGrid::zeros(scene.density.dims(), l, bounds)?),
        ..scene
    };
    let cache = FootprintCache::build(&model, &matched.cameras, &config.train).map_err(|e| {
        e.in_stage(
            "train-instance",
            config.inputs.cameras.display().to_string(),
        )
    })?;
    let init = model.instance_logits.clone().expect("instance grid set");
    let s1 = train_steps(
        "stage1",
        &cache,
        &init,
        &matched.labels,
        &config.train,
        config.train.steps_stage1,
    )?;
    let stage1_model = SceneModel {
        instance_logits: Some(s1.grid.clone()),
        ..model.clone()
    };
    artifacts.extend(write_trained(&out_dir.join("stage1"), &s1.grid, &s1.log)?);

    let k = config.train.samples_per_ray;
    let intermediate = render_labels(&stage1_model, &matched.cameras, k)
        .map_err(|e| e.in_stage("render", "stage1 instance grid"))?;
    artifacts.extend(write_label_set(
        &out_dir.join("stage1/render"),
        &intermediate,
    )?);
    let refined = refine_stage(&config.refine, &intermediate)?;
    artifacts.extend(write_label_set(&out_dir.join("refined"), &refined)?);

    let s2 = train_steps(
        "stage2",
        &cache,
        &s1.grid,
        &refined,
        &config.train,
        config.train.steps_stage2,
    )?;
    let stage2_model = SceneModel {
        instance_logits: Some(s2.grid.clone()),
        ..model
    };
    artifacts.extend(write_trained(&out_dir.join("stage2"), &s2.grid, &s2.log)?);

    let bg = &config.matching.background_classes;
    let semantic_map = matched.registry.semantic_map.clone();
    let (metrics, stage1_metrics) = match &eval {
        Some(eval) => {
            let mut scored = Vec::new();
            for (name, m) in [("stage1", &stage1_model), ("stage2", &stage2_model)] {
                let labels = render_labels(m, &eval.cameras, k)
                    .map_err(|e| e.in_stage("evaluate", format!("{name} instance grid")))?;
                artifacts.extend(write_label_set(&out_dir.join("eval").join(name), &labels)?);
                scored.push(
                    eval.evaluate(&labels, &semantic_map, bg)
                        .map_err(|e| e.in_stage("evaluate", format!("{name} renders")))?,
                );
            }
            let color = RenderOutputs {
                color: true,
                ..Default::default()
            };
            for (v, cam) in eval.cameras.iter().enumerate() {
                let img = render_image(&stage2_model, cam, k, None, color)?;
                let path = rgb_path(&out_dir.join("eval"), v);
                write_ppm(&path, img.color.as_ref().expect("color requested"))?;
                artifacts.push(path);
            }
            let s2m = scored.pop();
            (s2m, scored.pop())
        }
        None => (None, None),
    };

    let report = PipelineReport {
        metrics,
        stage1: stage1_metrics,
        final_loss_stage1: s1.final_loss,
        final_loss_stage2: s2.final_loss,
        num_instances: matched.registry.instances.len(),
        semantic_map,
    };
    let report_path = out_dir.join("report.json");
    write_json(&report_path, &report)?;
    artifacts.push(report_path);
    write_manifest(out_dir, &artifacts)?;
    artifacts.push(out_dir.join("manifest.json"));

    Ok(PipelineOutcome {
        registry: matched.registry,
        stage1: s1.grid,
        stage2: s2.grid,
        log_stage1: s1.log,
        log_stage2: s2.log,
        report,
        artifacts,
    })
}

/// Writes `instance.json` (with its raw payload) and `train_log.jsonl`.
pub fn write_trained(dir: &Path, grid: &VoxelGrid, log: &[LogRecord]) -> Result<Vec<PathBuf>> {
    let grid_path = dir.join("instance.json");
    write_grid(&grid_path, grid, Dtype::F32Le)?;
    let log_path = dir.join("train_log.jsonl");
    write_jsonl(&log_path, log)?;
    Ok(vec![grid_path.with_extension("f32"), grid_path, log_path])
}

/// Writes `manifest.json` listing each artifact (relative to `out_dir`)
/// with its size and SHA-256.
pub fn write_manifest(out_dir: &Path, artifacts: &[PathBuf]) -> Result<()> {
    let mut entries = BTreeMap::new();
    for path in artifacts {
        let bytes = read_bytes(path)?;
        let rel = path
            .strip_prefix(out_dir)
            .unwrap_or(path)
            .to_string_lossy()
            .replace('\\', "/");
        entries.insert(
            rel.clone(),
            ManifestEntry {
                path: rel,
                bytes: bytes.len() as u64,
                sha256: sha256_hex(&bytes),
            },
        );
    }
    let list: Vec<ManifestEntry> = entries.into_values().collect();
    write_json(&out_dir.join("manifest.json"), &list)
}
