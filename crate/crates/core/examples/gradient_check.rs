//! Compares the analytic gradient of the instance loss on the voxel grid
//! with central finite differences on a tiny random scene.
//!
//! cargo run --release --example gradient_check

use glam::DVec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use inerf::field::{backprop_ray, instance_loss, GradientBuffer, Normalization};
use inerf::render::{render_ray, SceneModel};
use inerf::scene::{Camera, SceneBounds, VoxelGrid};

fn loss(model: &SceneModel, camera: &Camera, targets: &[u16]) -> inerf::Result<f64> {
    let labels = model.num_labels().expect("instance grid");
    let logits: Vec<f64> = (0..camera.pixel_count())
        .flat_map(|p| {
            let ray = camera.generate_ray(p / camera.width, p % camera.width, None);
            render_ray(model, &ray, 32, None).instance_logits
        })
        .collect();
    Ok(instance_loss(&logits, targets, labels, Normalization::RaysTimesLabels)?.loss)
}

fn main() -> inerf::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let bounds = SceneBounds::cube(1.0);
    let mut random = |c: usize, lo: f64, hi: f64| {
        VoxelGrid::from_fn([5; 3], c, bounds, |_, o| {
            o.iter_mut().for_each(|v| *v = rng.gen_range(lo..hi))
        })
    };
    let model = SceneModel::new(
        random(1, 0.5, 3.0)?,
        random(3, 0.0, 1.0)?,
        Some(random(3, -1.0, 1.0)?),
    )?;
    let camera = Camera::look_at(DVec3::new(0.3, -2.5, 1.2), DVec3::ZERO, DVec3::Z, 4, 3, 0.7)?;
    let targets: Vec<u16> = (0..12).map(|i| (i % 3) as u16).collect();

    let grid = model.instance_logits.as_ref().expect("set above");
    let labels = grid.channels();
    let pixels: Vec<_> = (0..camera.pixel_count())
        .map(|p| render_ray(&model, &camera.generate_ray(p / 4, p % 4, None), 32, None))
        .collect();
    let logits: Vec<f64> = pixels
        .iter()
        .flat_map(|p| p.instance_logits.clone())
        .collect();
    let lg = instance_loss(&logits, &targets, labels, Normalization::RaysTimesLabels)?;
    let mut buffer = GradientBuffer::for_grid(grid);
    for (r, px) in pixels.iter().enumerate() {
        backprop_ray(
            &lg.grad[r * labels..(r + 1) * labels],
            px,
            grid,
            &mut buffer,
        )?;
    }

    let h = 1e-4;
    let mut worst: f64 = 0.0;
    let scale = buffer.data().iter().fold(0.0f64, |m, g| m.max(g.abs()));
    for i in 0..grid.data().len() {
        let mut probe = model.clone();
        let data = probe
            .instance_logits
            .as_mut()
            .expect("set above")
            .data_mut();
        data[i] += h;
        let up = loss(&probe, &camera, &targets)?;
        probe
            .instance_logits
            .as_mut()
            .expect("set above")
            .data_mut()[i] -= 2.0 * h;
        let down = loss(&probe, &camera, &targets)?;
        worst = worst.max(((up - down) / (2.0 * h) - buffer.data()[i]).abs());
    }
    println!(
        "{} parameters, largest gradient {scale:.3e}, largest deviation from finite differences {:.3e} (relative {:.1e})",
        grid.data().len(),
        worst,
        worst / scale
    );
    Ok(())
}
