//! Fits the short-term-dependency surrogate on the pendulum training grid
//! and compares it with the true dynamics.

use mfpi_deeponet::data::build_surrogate_dataset;
use mfpi_deeponet::surrogate::{train_surrogate, SurrogateConfig, SurrogateModel};
use mfpi_deeponet::systems::{dataset_grids, euler_simulate, Role, SystemKind, SystemSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let system = SystemSpec::pendulum();
    let trajs = dataset_grids(SystemKind::Pendulum)
        .into_iter()
        .filter(|g| g.role == Role::Train)
        .map(|g| euler_simulate(&system, &g.policy, &[1.0, 0.0], 1e-3, 5001))
        .collect::<Result<Vec<_>, _>>()?;
    let ds = build_surrogate_dataset(&trajs, 2)?;
    let cfg = SurrogateConfig {
        hidden: vec![32, 32],
        epochs: 20,
        ..SurrogateConfig::default()
    };
    let (model, history) = train_surrogate(&ds, &cfg)?;
    for (e, l) in history.epoch_loss.iter().enumerate().step_by(5) {
        println!("epoch {e:>3}  loss {l:.3e}");
    }
    let std = ds.stats.target.std[0];
    let rmse = model.oracle_rmse(&system, &trajs)?;
    println!(
        "{} samples, oracle rmse {rmse:.4} ({:.2}% of target std)",
        ds.len(),
        100.0 * rmse / std
    );
    let path = std::env::temp_dir().join("mfpi-surrogate.txt");
    model.save(&path)?;
    let back = SurrogateModel::load(&path)?;
    println!(
        "saved to {}, reload matches: {}",
        path.display(),
        back.params.checksum() == model.params.checksum()
    );
    Ok(())
}
