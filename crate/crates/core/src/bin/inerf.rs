//! Command-line front end. Exit codes: 0 success, 2 configuration error,
//! 3 stage failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use inerf::field::{fit_radiance, FootprintCache};
use inerf::fixture::make_fixture;
use inerf::image::LabelImage;
use inerf::io::{
    read_cameras, read_class_map, read_grid, write_class_map, write_depth, write_grid, write_json,
    write_jsonl, write_ppm, Dtype,
};
use inerf::pipeline::{
    label_path, load_scene, match_stage, read_label_set, read_rgb_set, refine_stage, rgb_path,
    run_pipeline, write_label_set, write_trained, EvalSet, PipelineConfig, RefineMode,
};
use inerf::render::{render_image, RenderOutputs, SceneModel};
use inerf::scene::VoxelGrid;
use inerf::Error;

#[derive(Parser)]
#[command(
    name = "inerf",
    version,
    about = "Voxel instance fields from multi-view 2D masks"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON configuration; missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads, 0 for one per core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Read inputs from a fixture directory instead of the config paths.
    #[arg(long, global = true)]
    fixture_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Builtin,
    External,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene with ground truth and corrupted masks.
    Fixture,
    /// Fit density and color grids to the training RGB images.
    FitRadiance {
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Make panoptic ids consistent across views.
    MatchMasks,
    /// Train the instance grid on consistent label images.
    TrainInstance {
        /// Directory of `labels_NNN.pgm`, one per training camera.
        #[arg(long)]
        labels_dir: PathBuf,
        /// Grid to continue from; a zero grid otherwise.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Label count of a fresh grid; defaults to the largest id + 1.
        #[arg(long)]
        num_labels: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lambda_r: Option<f64>,
    },
    /// Render color, depth and instance labels of a trained grid.
    Render {
        #[arg(long)]
        grid: PathBuf,
        /// Cameras to render; defaults to the evaluation cameras.
        #[arg(long)]
        cameras: Option<PathBuf>,
    },
    /// Refine rendered label images.
    Refine {
        #[arg(long)]
        labels_dir: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        masks_dir: Option<PathBuf>,
        #[arg(long)]
        radius: Option<usize>,
    },
    /// Score predicted label images against the evaluation ground truth.
    Evaluate {
        #[arg(long)]
        pred_dir: PathBuf,
        /// `{id -> class}` of the predictions.
        #[arg(long)]
        semantic_map: PathBuf,
    },
    /// Run every stage.
    Pipeline,
}

enum Failure {
    Config(Error),
    Stage(Error),
}

fn config_err(e: Error) -> Failure {
    Failure::Config(e)
}

fn stage_err(e: Error) -> Failure {
    Failure::Stage(e)
}

fn load_config(common: &Common) -> Result<PipelineConfig, Failure> {
    let mut config = match &common.config {
        Some(path) => PipelineConfig::load(path).map_err(config_err)?,
        None => PipelineConfig::default(),
    };
    if let Some(dir) = &common.fixture_dir {
        config.inputs = inerf::pipeline::InputPaths::fixture(dir);
    }
    let seed = common.seed.unwrap_or(config.seed);
    let config = config.with_seed(seed);
    config.validate().map_err(config_err)?;
    Ok(config)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut config = load_config(&cli.common)?;
    let out = cli.common.out_dir.as_path();
    match cli.command {
        Command::Fixture => {
            let fixture = make_fixture(&config.fixture).map_err(|e| match e {
                Error::InvalidInput(_) => Failure::Config(e),
                e => Failure::Stage(e.in_stage("fixture", "fixture spec")),
            })?;
            let written = fixture.write(out).map_err(stage_err)?;
            println!("wrote {} fixture files to {}", written.len(), out.display());
        }
        Command::FitRadiance { steps } => {
            if let Some(s) = steps {
                config.radiance.steps = s;
            }
            let inputs = &config.inputs;
            let rgb_dir = inputs.rgb_dir.as_ref().ok_or_else(|| {
                config_err(Error::InvalidInput("inputs.rgb_dir is not set".into()))
            })?;
            let cameras = read_cameras(&inputs.cameras).map_err(|e| {
                stage_err(e.in_stage("fit-radiance", inputs.cameras.display().to_string()))
            })?;
            let images = read_rgb_set(rgb_dir, cameras.len()).map_err(|e| {
                stage_err(e.in_stage("fit-radiance", rgb_dir.display().to_string()))
            })?;
            let views: Vec<_> = cameras.into_iter().zip(images).collect();
            let (model, log) = fit_radiance(&views, &config.radiance).map_err(|e| {
                stage_err(e.in_stage("fit-radiance", rgb_dir.display().to_string()))
            })?;
            write_grid(&out.join("density.json"), &model.density, Dtype::F32Le)
                .map_err(stage_err)?;
            write_grid(&out.join("color.json"), &model.color, Dtype::F32Le).map_err(stage_err)?;
            write_jsonl(&out.join("radiance_log.jsonl"), &log).map_err(stage_err)?;
            if let Some(last) = log.last() {
                println!("L_p after {} steps: {:.6}", last.step, last.loss);
            }
        }
        Command::MatchMasks => {
            let scene = load_scene(&config.inputs).map_err(stage_err)?;
            let matched = match_stage(&config, &scene.density).map_err(stage_err)?;
            write_label_set(out, &matched.labels).map_err(stage_err)?;
            write_class_map(&out.join("registry.json"), &matched.registry.semantic_map)
                .map_err(stage_err)?;
            println!(
                "matched {} views against {} instances",
                matched.labels.len(),
                matched.registry.instances.len()
            );
        }
        Command::TrainInstance {
            labels_dir,
            init,
            num_labels,
            steps,
            lambda_r,
        } => {
            if let Some(l) = lambda_r {
                config.train.lambda_r = l;
            }
            config.train.validate().map_err(config_err)?;
            let wrap = |p: &Path| {
                let file = p.display().to_string();
                move |e: Error| stage_err(e.in_stage("train-instance", file))
            };
            let scene = load_scene(&config.inputs).map_err(stage_err)?;
            let cameras =
                read_cameras(&config.inputs.cameras).map_err(wrap(&config.inputs.cameras))?;
            let labels = read_label_set(&labels_dir, cameras.len()).map_err(wrap(&labels_dir))?;
            let grid = match &init {
                Some(path) => read_grid(path).map_err(wrap(path))?,
                None => {
                    let l = num_labels.unwrap_or_else(|| {
                        labels
                            .iter()
                            .flat_map(|l| l.ids.iter())
                            .filter(|&&id| id != LabelImage::UNLABELED)
                            .map(|&id| id as usize + 1)
                            .max()
                            .unwrap_or(1)
                            .max(2)
                    });
                    VoxelGrid::zeros(scene.density.dims(), l, *scene.density.bounds())
                        .map_err(config_err)?
                }
            };
            let model = SceneModel {
                instance_logits: Some(grid.clone()),
                ..scene
            };
            let steps = steps.unwrap_or(config.train.steps_stage1);
            let cache = FootprintCache::build(&model, &cameras, &config.train)
                .map_err(wrap(&config.inputs.cameras))?;
            let outcome = cache
                .train(&grid, &labels, &config.train, steps)
                .map_err(wrap(&labels_dir))?;
            write_trained(out, &outcome.grid, &outcome.log).map_err(stage_err)?;
            println!("final loss after {steps} steps: {:.6}", outcome.final_loss);
        }
        Command::Render { grid, cameras } => {
            let wrap = |p: &Path| {
                let file = p.display().to_string();
                move |e: Error| stage_err(e.in_stage("render", file))
            };
            let scene = load_scene(&config.inputs).map_err(stage_err)?;
            let logits = read_grid(&grid).map_err(wrap(&grid))?;
            let model =
                SceneModel::new(scene.density, scene.color, Some(logits)).map_err(wrap(&grid))?;
            let cam_path = cameras
                .or_else(|| config.inputs.eval_cameras.clone())
                .unwrap_or_else(|| config.inputs.cameras.clone());
            let cams = read_cameras(&cam_path).map_err(wrap(&cam_path))?;
            for (v, cam) in cams.iter().enumerate() {
                let img = render_image(
                    &model,
                    cam,
                    config.train.samples_per_ray,
                    None,
                    RenderOutputs::all(),
                )
                .map_err(wrap(&grid))?;
                write_ppm(&rgb_path(out, v), img.color.as_ref().expect("color"))
                    .map_err(stage_err)?;
                write_depth(
                    &out.join(format!("depth_{v:03}.json")),
                    cam.width,
                    cam.height,
                    img.depth.as_ref().expect("depth"),
                )
                .map_err(stage_err)?;
                inerf::io::write_label_pgm(
                    &label_path(out, v),
                    img.labels.as_ref().expect("labels"),
                )
                .map_err(stage_err)?;
            }
            println!("rendered {} views", cams.len());
        }
        Command::Refine {
            labels_dir,
            mode,
            masks_dir,
            radius,
        } => {
            if let Some(m) = mode {
                config.refine.mode = match m {
                    ModeArg::Builtin => RefineMode::Builtin,
                    ModeArg::External => RefineMode::External,
                };
            }
            if masks_dir.is_some() {
                config.refine.masks_dir = masks_dir;
            }
            if let Some(r) = radius {
                config.refine.radius = r;
            }
            config.validate().map_err(config_err)?;
            let count = std::fs::read_dir(&labels_dir)
                .map_err(|e| {
                    stage_err(
                        Error::Io {
                            path: labels_dir.clone(),
                            source: e,
                        }
                        .in_stage("refine", labels_dir.display().to_string()),
                    )
                })?
                .filter_map(|e| e.ok())
                .filter(|e| {
                    let name = e.file_name();
                    let name = name.to_string_lossy();
                    name.starts_with("labels_") && name.ends_with(".pgm")
                })
                .count();
            let rendered = read_label_set(&labels_dir, count)
                .map_err(|e| stage_err(e.in_stage("refine", labels_dir.display().to_string())))?;
            let refined = refine_stage(&config.refine, &rendered).map_err(stage_err)?;
            write_label_set(out, &refined).map_err(stage_err)?;
            println!("refined {} label images", refined.len());
        }
        Command::Evaluate {
            pred_dir,
            semantic_map,
        } => {
            let eval = EvalSet::load(&config.inputs)
                .map_err(stage_err)?
                .ok_or_else(|| {
                    config_err(Error::InvalidInput("evaluation inputs are not set".into()))
                })?;
            let wrap = |p: &Path| {
                let file = p.display().to_string();
                move |e: Error| stage_err(e.in_stage("evaluate", file))
            };
            let map = read_class_map(&semantic_map).map_err(wrap(&semantic_map))?;
            let pred = read_label_set(&pred_dir, eval.cameras.len()).map_err(wrap(&pred_dir))?;
            let report = eval
                .evaluate(&pred, &map, &config.matching.background_classes)
                .map_err(wrap(&pred_dir))?;
            write_json(&out.join("report.json"), &report).map_err(stage_err)?;
            println!("mIoU {:.4}  PQ {:.4}", report.miou, report.pq);
        }
        Command::Pipeline => {
            let outcome = run_pipeline(&config, out).map_err(stage_err)?;
            if let Some(m) = &outcome.report.metrics {
                println!("held-out mIoU {:.4}  PQ {:.4}", m.miou, m.pq);
            }
            println!(
                "wrote {} artifacts to {}",
                outcome.artifacts.len(),
                out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.common.threads)
        .build_global()
    {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("configuration error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Stage(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
