//! Builds a synthetic scene and volume-renders color, depth and instance
//! labels from one orbit camera, writing them as image files.
//!
//! cargo run --release --example render_scene -- [out_dir]

use std::path::PathBuf;

use inerf::fixture::{make_fixture, FixtureSpec};
use inerf::io::{write_depth, write_label_pgm, write_ppm};
use inerf::render::{integration_weights, render_image, RenderOutputs, SceneModel};
use inerf::scene::VoxelGrid;

fn main() -> inerf::Result<()> {
    let out = PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "render_out".into()),
    );

    // Weights of a short ray: each sample takes what the earlier ones let through.
    let (w, t) = integration_weights(&[0.1, 0.5, 2.0, 0.0, 3.0])?;
    println!(
        "weights {w:.3?}, left over {t:.4}, total {:.6}",
        w.iter().sum::<f64>() + t
    );

    let spec = FixtureSpec::default();
    let fixture = make_fixture(&spec)?;
    // One-hot logits from the instance masks give a renderable instance grid.
    let mut logits = VoxelGrid::zeros(spec.dims, fixture.instances.len() + 1, spec.bounds)?;
    for v in 0..logits.voxel_count() {
        let row = logits.voxel_mut(v);
        row[0] = 0.5;
        for (i, inst) in fixture.instances.iter().enumerate() {
            row[i + 1] = inst.mask_grid.data()[v];
        }
    }
    let model = SceneModel {
        instance_logits: Some(logits),
        ..fixture.scene.clone()
    };

    let camera = &fixture.heldout[0].camera;
    let img = render_image(
        &model,
        camera,
        spec.samples_per_ray,
        None,
        RenderOutputs::all(),
    )?;
    let labels = img.labels.as_ref().expect("requested");
    write_ppm(&out.join("rgb.ppm"), img.color.as_ref().expect("requested"))?;
    write_depth(
        &out.join("depth.json"),
        camera.width,
        camera.height,
        img.depth.as_ref().expect("requested"),
    )?;
    write_label_pgm(&out.join("labels.pgm"), labels)?;

    let truth = &fixture.heldout[0].labels;
    let agree = labels
        .ids
        .iter()
        .zip(&truth.ids)
        .filter(|(a, b)| a == b)
        .count();
    println!(
        "rendered {}x{} view to {}; labels agree with ray casting on {:.2}% of pixels",
        camera.width,
        camera.height,
        out.display(),
        100.0 * agree as f64 / truth.ids.len() as f64
    );
    Ok(())
}
