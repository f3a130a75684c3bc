//! Recovers derivatives of a noisy pendulum trajectory with a
//! Savitzky–Golay filter and reports the error per derivative order.

use mfpi_deeponet::data::{add_noise, smooth_trajectory, NoiseSpec, SgFilterSpec};
use mfpi_deeponet::systems::{euler_simulate, ControlPolicy, SystemSpec};

fn rmse(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() - 600;
    // skip the edges, where the fit extrapolates
    let s: f64 = (300..300 + n).map(|i| (a[i] - b[i]).powi(2)).sum();
    (s / n as f64).sqrt()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let clean = euler_simulate(
        &SystemSpec::pendulum(),
        &ControlPolicy::Feedback { gain: 0.5 },
        &[1.0, 0.0],
        1e-3,
        10_001,
    )?;
    let noisy = add_noise(
        &clean,
        &NoiseSpec {
            sigma: 0.002,
            seed: 7,
        },
    )?;
    println!(
        "{:>7} {:>5} {:>10} {:>10} {:>10}",
        "window", "order", "x", "x'", "x''"
    );
    for window in [51, 151, 301, 601] {
        for polyorder in [3, 5] {
            let smooth = smooth_trajectory(&noisy, &SgFilterSpec::new(window, polyorder, 0, 1e-3))?;
            let err: Vec<f64> = (0..3)
                .map(|k| rmse(&smooth.derivs[k], &clean.derivs[k]))
                .collect();
            println!(
                "{window:>7} {polyorder:>5} {:>10.2e} {:>10.2e} {:>10.2e}",
                err[0], err[1], err[2]
            );
        }
    }
    Ok(())
}
