//! Makes independently labeled 2D panoptic masks consistent across views by
//! matching them against projected 3D instances, then refines one view.
//!
//! cargo run --release --example match_masks -- [drop] [noise]

use inerf::fixture::{make_fixture, CorruptionSpec, FixtureSpec};
use inerf::matching::{build_registry, refine_masks_builtin, MatchConfig};

fn main() -> inerf::Result<()> {
    let arg = |i: usize, d: f64| {
        std::env::args()
            .nth(i)
            .and_then(|s| s.parse().ok())
            .unwrap_or(d)
    };
    let spec = FixtureSpec {
        objects: FixtureSpec::standard_objects(4),
        corruption: CorruptionSpec {
            drop_probability: arg(1, 0.1),
            label_noise: arg(2, 0.05),
            ..CorruptionSpec::default()
        },
        ..FixtureSpec::default()
    };
    let fixture = make_fixture(&spec)?;
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
    for inst in &registry.instances {
        println!(
            "instance {} -> class {}",
            inst.global_id, registry.semantic_map[&inst.global_id]
        );
    }
    for (v, (matched, truth)) in labels.iter().zip(&fixture.train).enumerate().take(5) {
        let local: Vec<u16> = fixture.panoptic[v].classes.keys().copied().collect();
        let agree = matched
            .ids
            .iter()
            .zip(&truth.labels.ids)
            .filter(|(a, b)| a == b)
            .count();
        println!(
            "view {v}: local ids {local:?}, {:.2}% of pixels carry the true global id",
            100.0 * agree as f64 / truth.labels.ids.len() as f64
        );
    }
    let refined = refine_masks_builtin(&labels[0], 2);
    let changed = refined
        .ids
        .iter()
        .zip(&labels[0].ids)
        .filter(|(a, b)| a != b)
        .count();
    println!("closing with radius 2 changed {changed} pixels of view 0");
    Ok(())
}
