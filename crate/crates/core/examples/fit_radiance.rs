//! Fits density and color grids to the rendered views of a synthetic scene
//! and compares held-out renders with the ground truth.
//!
//! cargo run --release --example fit_radiance -- [steps] [dims]

use inerf::field::{fit_radiance, RadianceConfig};
use inerf::fixture::{make_fixture, FixtureSpec};
use inerf::render::{render_image, RenderOutputs};

fn main() -> inerf::Result<()> {
    let arg = |i: usize, d: usize| {
        std::env::args()
            .nth(i)
            .and_then(|s| s.parse().ok())
            .unwrap_or(d)
    };
    let (steps, dims) = (arg(1, 400), arg(2, 32));
    let spec = FixtureSpec {
        width: 64,
        height: 64,
        ..FixtureSpec::default()
    };
    let fixture = make_fixture(&spec)?;
    let views: Vec<_> = fixture
        .train
        .iter()
        .map(|v| (v.camera.clone(), v.rgb.clone()))
        .collect();
    let config = RadianceConfig {
        dims: [dims; 3],
        steps,
        ..RadianceConfig::default()
    };
    let (model, log) = fit_radiance(&views, &config)?;
    for rec in log.iter().step_by((log.len() / 8).max(1)) {
        println!("step {:5}: L_p {:.5}", rec.step, rec.loss);
    }
    let color = RenderOutputs {
        color: true,
        ..Default::default()
    };
    for view in &fixture.heldout {
        let img = render_image(&model, &view.camera, config.samples_per_ray, None, color)?;
        let pred = img.color.expect("requested");
        let mse: f64 = pred
            .pixels
            .iter()
            .zip(&view.rgb.pixels)
            .map(|(a, b)| (0..3).map(|c| (a[c] - b[c]).powi(2)).sum::<f64>() / 3.0)
            .sum::<f64>()
            / pred.pixels.len() as f64;
        println!("held-out PSNR {:.2} dB", -10.0 * mse.log10());
    }
    Ok(())
}
