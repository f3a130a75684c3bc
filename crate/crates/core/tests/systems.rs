mod common;

use common::{jerk_from_history, oscillator_euler_error, oscillator_exact, pendulum_from_history};
use mfpi_deeponet::data::{build_surrogate_dataset, savgol, SgFilterSpec};
use mfpi_deeponet::systems::{
    dataset_grids, euler_simulate, steps_for_horizon, ControlPolicy, Role, SystemKind, SystemSpec,
    Trajectory,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn closed_form_satisfies_the_ode() {
    let h = 1e-4;
    for i in 0..50 {
        let t = 0.1 * i as f64;
        let x = oscillator_exact(t);
        let v = (oscillator_exact(t + h) - oscillator_exact(t - h)) / (2.0 * h);
        let a = (oscillator_exact(t + h) - 2.0 * x + oscillator_exact(t - h)) / (h * h);
        let r = 0.5 * a + v + 50.0 * x - 4.0 * (10.0 * t).sin();
        assert!(r.abs() < 1e-4, "t={t}: residual {r}");
    }
}

#[test]
fn euler_error_is_first_order() {
    let coarse = oscillator_euler_error(2e-3);
    let fine = oscillator_euler_error(1e-3);
    let ratio = coarse / fine;
    assert!((1.8..2.2).contains(&ratio), "ratio {ratio}");
}

fn pendulum_run(gain: f64) -> Trajectory {
    euler_simulate(
        &SystemSpec::pendulum(),
        &ControlPolicy::Feedback { gain },
        &[1.0, 0.0],
        1e-3,
        10_001,
    )
    .unwrap()
}

fn jerk_run(amplitude: f64, frequency: f64) -> Trajectory {
    let policy = ControlPolicy::Sinusoid {
        amplitude,
        frequency,
    };
    euler_simulate(
        &SystemSpec::chaotic_jerk(),
        &policy,
        &[0.0, 0.0, 0.0],
        1e-3,
        20_001,
    )
    .unwrap()
}

#[test]
fn short_history_determines_the_next_sample() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pend = pendulum_run(0.45);
    let jerk = jerk_run(1.27, 2.18);
    for _ in 0..200 {
        let t = rng.random_range(2..pend.steps());
        assert!((pendulum_from_history(&pend, t) - pend.x()[t]).abs() < 1e-12);
        let t = rng.random_range(3..jerk.steps());
        assert!((jerk_from_history(&jerk, t) - jerk.x()[t]).abs() < 1e-12);
    }
}

#[test]
fn lower_rows_follow_euler_exactly() {
    let traj = jerk_run(1.09, 2.0);
    for k in 0..3 {
        for t in 0..traj.steps() - 1 {
            assert_eq!(
                traj.derivs[k][t + 1],
                traj.derivs[k][t] + traj.dt * traj.derivs[k + 1][t]
            );
        }
    }
}

#[test]
fn surrogate_targets_are_the_stored_top_row() {
    let traj = pendulum_run(0.35);
    let ds = build_surrogate_dataset(std::slice::from_ref(&traj), 2).unwrap();
    for (i, s) in ds.samples().enumerate().step_by(997) {
        let t = i + 1;
        assert_eq!(s.target, traj.derivs[2][t]);
        let recomputed = traj
            .meta
            .system
            .highest_derivative(&s.input[..2], s.input[3]);
        assert_eq!(recomputed, s.target);
    }
}

#[test]
fn default_grids_have_expected_sizes() {
    for (kind, train, test) in [
        (SystemKind::Pendulum, 5, 10),
        (SystemKind::DrivenOscillator, 5, 10),
        (SystemKind::ChaoticJerk, 10, 5),
    ] {
        let g = dataset_grids(kind);
        assert_eq!(g.iter().filter(|e| e.role == Role::Train).count(), train);
        assert_eq!(g.iter().filter(|e| e.role == Role::Test).count(), test);
    }
}

#[test]
fn pendulum_without_control_or_damping_conserves_energy_to_first_order() {
    let SystemSpec::Pendulum {
        m, l, inertia, g, ..
    } = SystemSpec::pendulum()
    else {
        unreachable!()
    };
    let system = SystemSpec::Pendulum {
        m,
        l,
        inertia,
        b: 0.0,
        g,
    };
    let energy = |dt: f64| {
        let steps = steps_for_horizon(2.0, dt);
        let traj = euler_simulate(
            &system,
            &ControlPolicy::Feedback { gain: 0.0 },
            &[0.5, 0.0],
            dt,
            steps,
        )
        .unwrap();
        let e = |i: usize| {
            mfpi_deeponet::systems::pendulum_energy(&system, traj.x()[i], traj.derivs[1][i])
                .unwrap()
        };
        (e(steps - 1) - e(0)).abs()
    };
    // explicit Euler gains energy, linearly in dt
    let ratio = energy(2e-3) / energy(1e-3);
    assert!((1.8..2.2).contains(&ratio), "ratio {ratio}");
}

fn polynomial(c: [f64; 4], t: f64) -> (f64, f64) {
    (
        c[0] + t * (c[1] + t * (c[2] + t * c[3])),
        c[1] + t * (2.0 * c[2] + t * 3.0 * c[3]),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn savgol_reproduces_cubics(
        c in prop::array::uniform4(-2.0f64..2.0),
        half in 2usize..30,
        polyorder in 3usize..=5,
        len in 80usize..200,
    ) {
        let window = 2 * half + 1;
        prop_assume!(window >= polyorder + 2);
        let dt = 0.01;
        let series: Vec<f64> = (0..len).map(|i| polynomial(c, i as f64 * dt).0).collect();
        let smooth = savgol(&series, &SgFilterSpec::new(window, polyorder, 0, dt)).unwrap();
        let deriv = savgol(&series, &SgFilterSpec::new(window, polyorder, 1, dt)).unwrap();
        for i in 0..len {
            let (v, d) = polynomial(c, i as f64 * dt);
            prop_assert!((smooth[i] - v).abs() <= 1e-10, "value at {i}");
            prop_assert!((deriv[i] - d).abs() <= 1e-8, "slope at {i}");
        }
    }
}
