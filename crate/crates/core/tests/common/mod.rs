#![allow(dead_code)]

use mfpi_deeponet::autodiff::ParamStore;
use mfpi_deeponet::systems::{
    euler_simulate, steps_for_horizon, ControlPolicy, SystemSpec, Trajectory,
};

/// Relative error with a floor on the denominator so that gradients that
/// are numerically zero compare in absolute terms.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Worst relative error between `analytic` and five-point central
/// differences of `f` over every scalar in `params`.
pub fn max_fd_error(
    params: &ParamStore,
    analytic: &ParamStore,
    h: f64,
    floor: f64,
    mut f: impl FnMut(&ParamStore) -> f64,
) -> f64 {
    let names: Vec<String> = params.iter().map(|(n, _)| n.to_string()).collect();
    let mut worst = 0.0f64;
    let mut probe = params.clone();
    for name in names {
        let len = params.get(&name).unwrap().len();
        for i in 0..len {
            let orig = params.get(&name).unwrap().data()[i];
            let mut at = |x: f64| {
                probe.get_mut(&name).unwrap().data_mut()[i] = x;
                f(&probe)
            };
            let fd = (at(orig - 2.0 * h) - 8.0 * at(orig - h) + 8.0 * at(orig + h)
                - at(orig + 2.0 * h))
                / (12.0 * h);
            probe.get_mut(&name).unwrap().data_mut()[i] = orig;
            let g = analytic.get(&name).unwrap().data()[i];
            worst = worst.max(rel_err(g, fd, floor));
        }
    }
    worst
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        for (rank, &i) in idx.iter().enumerate() {
            r[i] = rank as f64;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Closed form of `0.5 ẍ + ẋ + 50 x = 4 sin(10 t)`, `x(0) = 1`, `ẋ(0) = 0`.
/// The forcing sits exactly at the undamped natural frequency.
pub fn oscillator_exact(t: f64) -> f64 {
    let wd = 99f64.sqrt();
    let particular = -0.4 * (10.0 * t).cos();
    let homogeneous = (-t).exp() * (1.4 * (wd * t).cos() + 1.4 / wd * (wd * t).sin());
    particular + homogeneous
}

pub fn oscillator_euler_error(dt: f64) -> f64 {
    let policy = ControlPolicy::Sinusoid {
        amplitude: 1.0,
        frequency: 10.0,
    };
    let steps = steps_for_horizon(5.0, dt);
    let traj = euler_simulate(
        &SystemSpec::driven_oscillator(),
        &policy,
        &[1.0, 0.0],
        dt,
        steps,
    )
    .unwrap();
    traj.x()
        .iter()
        .enumerate()
        .map(|(i, x)| (x - oscillator_exact(traj.time(i))).abs())
        .fold(0.0, f64::max)
}

/// `x[t]` from `x[t-1], x[t-2]` and `u[t-2]` alone.
pub fn pendulum_from_history(traj: &Trajectory, t: usize) -> f64 {
    let (x, u, dt) = (traj.x(), &traj.controls, traj.dt);
    let v = (x[t - 1] - x[t - 2]) / dt;
    let a = traj
        .meta
        .system
        .highest_derivative(&[x[t - 2], v], u[t - 2]);
    x[t - 1] + dt * (v + dt * a)
}

/// `x[t]` from `x[t-1], x[t-2], x[t-3]` and `u[t-3]` alone.
pub fn jerk_from_history(traj: &Trajectory, t: usize) -> f64 {
    let (x, u, dt) = (traj.x(), &traj.controls, traj.dt);
    let v2 = (x[t - 1] - x[t - 2]) / dt;
    let v3 = (x[t - 2] - x[t - 3]) / dt;
    let a3 = (v2 - v3) / dt;
    let j = traj
        .meta
        .system
        .highest_derivative(&[x[t - 3], v3, a3], u[t - 3]);
    x[t - 1] + dt * (v2 + dt * (a3 + dt * j))
}
