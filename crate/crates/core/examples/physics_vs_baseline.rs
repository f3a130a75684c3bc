//! Trains a data-only DeepONet and a physics-informed one on a shortened
//! pendulum problem and compares their test error.

use mfpi_deeponet::data::{
    build_operator_dataset, build_operator_dataset_with, build_surrogate_dataset,
};
use mfpi_deeponet::deeponet::{
    evaluate_mae, train_operator, DeepOnetConfig, MaeUnit, PhysicsLossConfig,
};
use mfpi_deeponet::surrogate::{train_surrogate, SurrogateConfig};
use mfpi_deeponet::systems::{
    dataset_grids, euler_simulate, Role, SystemKind, SystemSpec, Trajectory,
};

fn simulate(role: Role) -> mfpi_deeponet::Result<Vec<Trajectory>> {
    dataset_grids(SystemKind::Pendulum)
        .into_iter()
        .filter(|g| g.role == role)
        .map(|g| euler_simulate(&SystemSpec::pendulum(), &g.policy, &[1.0, 0.0], 1e-3, 3001))
        .collect()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let train = simulate(Role::Train)?;
    let test = simulate(Role::Test)?;
    let (surrogate, _) = train_surrogate(
        &build_surrogate_dataset(&train, 2)?,
        &SurrogateConfig {
            hidden: vec![32, 32],
            epochs: 10,
            ..SurrogateConfig::default()
        },
    )?;
    let train_ds = build_operator_dataset(&train, 50, 100)?;
    let test_ds = build_operator_dataset_with(&test, 50, 100, &train_ds.stats)?;
    let cfg = DeepOnetConfig {
        branch_hidden: vec![64],
        trunk_hidden: vec![32, 32],
        latent: 32,
        trunk_frequency: 10.0,
        epochs: 200,
        ..DeepOnetConfig::default()
    };
    for (name, physics, surrogate) in [
        ("baseline", PhysicsLossConfig::baseline(), None),
        ("physics", PhysicsLossConfig::default(), Some(&surrogate)),
    ] {
        let (model, history) = train_operator(&train_ds, surrogate, &cfg, &physics)?;
        let mae = evaluate_mae(&model, &test_ds, MaeUnit::Native)?;
        println!(
            "{name:<9} final data loss {:.2e}, test MAE {:.5} rad",
            history.data.last().unwrap(),
            mae.mean
        );
    }
    Ok(())
}
