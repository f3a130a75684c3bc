//! Runs every stage of a config file, the library equivalent of `mfpi all`.
//!
//! ```text
//! cargo run --release --example run_experiment -- configs/smoke.toml /tmp/mfpi-runs
//! ```

use std::path::PathBuf;

use mfpi_deeponet::experiment::{ExperimentConfig, Run};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let config = args.next().map(PathBuf::from).unwrap_or_else(|| {
        PathBuf::from(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/../../configs/smoke.toml"
        ))
    });
    let root = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("mfpi-runs"));
    let mut run = Run::open(ExperimentConfig::load(&config)?, &root, false)?;
    run.all()?;
    let manifest = run.manifest();
    for key in ["mae_physics_mean", "mae_baseline_mean"] {
        if let Some(v) = manifest.metric("evaluate", key) {
            println!("{key} = {v:.5}");
        }
    }
    println!("artifacts in {}", run.path("").display());
    Ok(())
}
