use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{RadianceConfig, TrainConfig};
use crate::fixture::{FixtureLayout, FixtureSpec, Split};
use crate::io::read_json;
use crate::matching::MatchConfig;

/// Where the pipeline reads its inputs. Relative paths in a config file are
/// resolved against the config file's directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InputPaths {
    pub density: PathBuf,
    pub color: PathBuf,
    /// Cameras of the views with panoptic masks.
    pub cameras: PathBuf,
    /// Holds `view_NNN.pgm` with a `view_NNN.json` class sidecar per view.
    pub panoptic_dir: PathBuf,
    pub detections: PathBuf,
    /// Training-view RGB images `rgb_NNN.ppm`, for radiance fitting.
    pub rgb_dir: Option<PathBuf>,
    /// Held-out cameras for evaluation.
    pub eval_cameras: Option<PathBuf>,
    /// Held-out ground truth `labels_NNN.pgm`.
    pub eval_labels_dir: Option<PathBuf>,
    /// `{instance id -> class}` of the held-out ground truth.
    pub eval_semantic_map: Option<PathBuf>,
}

impl InputPaths {
    /// The inputs of a directory written by [`crate::fixture::Fixture::write`].
    pub fn fixture(root: &Path) -> Self {
        let layout = FixtureLayout::new(root);
        InputPaths {
            density: layout.density(),
            color: layout.color(),
            cameras: layout.cameras(Split::Train),
            panoptic_dir: layout.panoptic_dir(),
            detections: layout.detections(),
            rgb_dir: Some(root.join("gt/train")),
            eval_cameras: Some(layout.cameras(Split::Heldout)),
            eval_labels_dir: Some(root.join("gt/heldout")),
            eval_semantic_map: Some(layout.semantic_map()),
        }
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !p.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut self.density,
            &mut self.color,
            &mut self.cameras,
            &mut self.panoptic_dir,
            &mut self.detections,
        ] {
            fix(p);
        }
        for p in [
            &mut self.rgb_dir,
            &mut self.eval_cameras,
            &mut self.eval_labels_dir,
            &mut self.eval_semantic_map,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionFilter {
    /// Detections need a score above this.
    pub score_threshold: f64,
    pub nms_threshold: f64,
}

impl Default for DetectionFilter {
    fn default() -> Self {
        DetectionFilter {
            score_threshold: 0.5,
            nms_threshold: 0.15,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefineMode {
    #[default]
    Builtin,
    External,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    pub mode: RefineMode,
    /// Closing radius of the built-in refiner.
    pub radius: usize,
    /// Refined `labels_NNN.pgm` files for external mode.
    pub masks_dir: Option<PathBuf>,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            mode: RefineMode::Builtin,
            radius: 2,
            masks_dir: None,
        }
    }
}

/// Everything the command-line stages read from `--config`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub inputs: InputPaths,
    pub seed: u64,
    pub train: TrainConfig,
    pub matching: MatchConfig,
    pub detection: DetectionFilter,
    pub refine: RefineConfig,
    pub radiance: RadianceConfig,
    pub fixture: FixtureSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            inputs: InputPaths::default(),
            seed: 0,
            train: TrainConfig::default(),
            matching: MatchConfig::default(),
            detection: DetectionFilter::default(),
            refine: RefineConfig::default(),
            radiance: RadianceConfig::default(),
            fixture: FixtureSpec::default(),
        }
    }
}

impl PipelineConfig {
    /// Reads a JSON config, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut config: PipelineConfig = read_json(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        config.inputs.resolve(base);
        if let Some(dir) = &mut config.refine.masks_dir {
            if dir.is_relative() {
                *dir = base.join(&*dir);
            }
        }
        Ok(config)
    }

    /// Copies the top-level seed into every seeded stage.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.train.seed = seed;
        self.radiance.seed = seed;
        self.fixture.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.matching.validate()?;
        for (name, v) in [
            ("score_threshold", self.detection.score_threshold),
            ("nms_threshold", self.detection.nms_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        if self.refine.mode == RefineMode::External && self.refine.masks_dir.is_none() {
            return Err(Error::invalid("external refinement needs refine.masks_dir"));
        }
        Ok(())
    }
}
