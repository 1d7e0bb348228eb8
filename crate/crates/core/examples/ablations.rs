//! Runs the full pipeline on corrupted fixtures over several seeds and
//! compares the patch regularizer on and off, and refined against unrefined.
//!
//! cargo run --release --example ablations -- [seeds] [drop] [erosion] [noise]

use std::time::Instant;

use inerf::fixture::{make_fixture, CorruptionSpec, FixtureSpec};
use inerf::pipeline::{run_pipeline, InputPaths, PipelineConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let arg = |i: usize, d: f64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let seeds = arg(1, 5.0) as u64;
    let corruption = CorruptionSpec {
        drop_probability: arg(2, 0.1),
        erosion_radius: arg(3, 1.0) as usize,
        label_noise: arg(4, 0.05),
        permute_ids: true,
    };

    let (mut reg_wins, mut refine_wins) = (0, 0);
    for seed in 0..seeds {
        let t = Instant::now();
        let dir = tempfile::tempdir()?;
        let spec = FixtureSpec {
            corruption,
            seed,
            ..FixtureSpec::default()
        };
        make_fixture(&spec)?.write(dir.path())?;

        let mut pq = Vec::new();
        for lambda_r in [0.1, 0.0] {
            let mut config = PipelineConfig {
                inputs: InputPaths::fixture(dir.path()),
                ..PipelineConfig::default()
            }
            .with_seed(seed);
            config.train.lambda_r = lambda_r;
            let out = dir.path().join(format!("run_{lambda_r}"));
            let report = run_pipeline(&config, &out)?.report;
            let s1 = report.stage1.expect("evaluation inputs").pq;
            let s2 = report.metrics.expect("evaluation inputs").pq;
            pq.push((s1, s2));
        }
        let ((reg_s1, reg_s2), (plain_s1, _)) = (pq[0], pq[1]);
        reg_wins += usize::from(reg_s1 > plain_s1);
        refine_wins += usize::from(reg_s2 >= reg_s1);
        println!(
            "seed {seed}: PQ stage1 lambda_r=0.1 {reg_s1:.4} lambda_r=0 {plain_s1:.4}  stage2 {reg_s2:.4}  ({:.0}s)",
            t.elapsed().as_secs_f64()
        );
    }
    println!("regularizer wins {reg_wins}/{seeds}, refinement holds {refine_wins}/{seeds}");
    Ok(())
}
