//! Builds a clean synthetic scene, makes its 2D masks consistent, trains an
//! instance field and scores it on held-out views.
//!
//! cargo run --release --example train_on_fixture -- [steps] [lambda_r]

use std::time::Instant;

use inerf::field::{train_instance_field, TrainConfig, TrainView};
use inerf::fixture::{make_fixture, FixtureSpec};
use inerf::matching::{build_registry, MatchConfig};
use inerf::metrics::{evaluate_views, PanopticFrame};
use inerf::render::{render_image, RenderOutputs, SceneModel};
use inerf::scene::VoxelGrid;

fn main() -> inerf::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(3000);
    let lambda_r: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.1);

    let t = Instant::now();
    let spec = FixtureSpec::default();
    let fixture = make_fixture(&spec)?;
    println!("fixture built in {:.1}s", t.elapsed().as_secs_f64());

    let t = Instant::now();
    let views: Vec<_> = fixture
        .train
        .iter()
        .zip(&fixture.panoptic)
        .map(|(v, p)| (v.camera.clone(), p.clone()))
        .collect();
    let (registry, labels) = build_registry(
        fixture.instances.clone(),
        &fixture.scene.density,
        &views,
        &MatchConfig::default(),
    )?;
    println!(
        "matched {} views in {:.1}s",
        labels.len(),
        t.elapsed().as_secs_f64()
    );

    let num_labels = registry.instances.len() + 1;
    let model = SceneModel::new(
        fixture.scene.density.clone(),
        fixture.scene.color.clone(),
        Some(VoxelGrid::zeros(spec.dims, num_labels, spec.bounds)?),
    )?;
    let config = TrainConfig {
        lambda_r,
        ..TrainConfig::default()
    };
    let train_views: Vec<TrainView> = fixture
        .train
        .iter()
        .zip(labels)
        .map(|(v, labels)| TrainView {
            camera: v.camera.clone(),
            labels,
        })
        .collect();
    let t = Instant::now();
    let outcome = train_instance_field(&model, &train_views, &config, steps)?;
    println!(
        "trained {steps} steps in {:.1}s, final loss {:.5}",
        t.elapsed().as_secs_f64(),
        outcome.final_loss
    );

    let trained = SceneModel {
        instance_logits: Some(outcome.grid),
        ..model
    };
    let outputs = RenderOutputs {
        instance_argmax: true,
        ..Default::default()
    };
    let rendered = fixture
        .heldout
        .iter()
        .map(|v| {
            Ok(
                render_image(&trained, &v.camera, config.samples_per_ray, None, outputs)?
                    .labels
                    .unwrap(),
            )
        })
        .collect::<inerf::Result<Vec<_>>>()?;
    let pred: Vec<_> = rendered
        .iter()
        .map(|l| PanopticFrame {
            labels: l,
            semantic_map: &registry.semantic_map,
        })
        .collect();
    let gt: Vec<_> = fixture
        .heldout
        .iter()
        .map(|v| PanopticFrame {
            labels: &v.labels,
            semantic_map: &fixture.semantic_map,
        })
        .collect();
    let report = evaluate_views(&pred, &gt, spec.num_classes(), &[0])?;
    println!("held-out mIoU {:.4}  PQ {:.4}", report.miou, report.pq);
    Ok(())
}
