//! Simulates one run of each benchmark and writes it as CSV.
//!
//! ```text
//! cargo run --example simulate_systems -- /tmp/trajectories
//! ```

use std::path::PathBuf;

use mfpi_deeponet::systems::{
    dataset_grids, euler_simulate, pendulum_energy, steps_for_horizon, SystemKind, SystemSpec,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("mfpi-trajectories"));
    std::fs::create_dir_all(&out)?;
    for kind in [
        SystemKind::Pendulum,
        SystemKind::DrivenOscillator,
        SystemKind::ChaoticJerk,
    ] {
        let system = SystemSpec::default_for(kind);
        let policy = dataset_grids(kind)[0].policy;
        let dt = 1e-3;
        let steps = steps_for_horizon(kind.default_horizon(), dt);
        let traj = euler_simulate(&system, &policy, &kind.default_initial_state(), dt, steps)?;
        let x = traj.x();
        let (lo, hi) = x
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                (a.min(v), b.max(v))
            });
        println!(
            "{:<18} {} steps, policy {}, x in [{lo:.3}, {hi:.3}], x(T) = {:.4}",
            kind.name(),
            traj.steps(),
            policy.label(),
            x[steps - 1]
        );
        if let Some(e0) = pendulum_energy(&system, x[0], traj.derivs[1][0]) {
            let e1 = pendulum_energy(&system, x[steps - 1], traj.derivs[1][steps - 1]).unwrap();
            println!("{:<18} energy {e0:.4} -> {e1:.4}", "");
        }
        traj.save(&out.join(format!("{}.csv", kind.name())))?;
    }
    println!("wrote {}", out.display());
    Ok(())
}
