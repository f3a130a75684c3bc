mod common;

use common::{max_fd_error, spearman};
use mfpi_deeponet::autodiff::{Activation, ParamStore, Tape};
use mfpi_deeponet::data::{build_operator_dataset, build_surrogate_dataset, OperatorDataset};
use mfpi_deeponet::deeponet::{
    combined_loss_and_grads, data_loss, init_operator, operator_forward, operator_jets,
    physics_loss, residuals_with, train_operator, CollocationPoint, DeepOnetConfig, DeepOnetModel,
    PhysicsLossConfig,
};
use mfpi_deeponet::surrogate::{train_surrogate, SurrogateConfig, SurrogateModel};
use mfpi_deeponet::systems::{euler_simulate, ControlPolicy, SystemSpec, Trajectory};
use mfpi_deeponet::Tensor;

fn pendulum_runs(gains: &[f64], dt: f64, steps: usize) -> Vec<Trajectory> {
    gains
        .iter()
        .map(|&gain| {
            let policy = ControlPolicy::Feedback { gain };
            euler_simulate(&SystemSpec::pendulum(), &policy, &[1.0, 0.0], dt, steps).unwrap()
        })
        .collect()
}

fn small_surrogate(trajs: &[Trajectory]) -> SurrogateModel {
    let ds = build_surrogate_dataset(trajs, 2).unwrap();
    let cfg = SurrogateConfig {
        hidden: vec![8],
        epochs: 3,
        batch_size: 64,
        ..SurrogateConfig::default()
    };
    train_surrogate(&ds, &cfg).unwrap().0
}

fn tiny_config() -> DeepOnetConfig {
    DeepOnetConfig {
        branch_hidden: vec![8],
        trunk_hidden: vec![8],
        latent: 4,
        epochs: 20,
        batch_size: 8,
        ..DeepOnetConfig::default()
    }
}

struct Fixture {
    ds: OperatorDataset,
    surrogate: SurrogateModel,
}

fn fixture() -> Fixture {
    let trajs = pendulum_runs(&[0.35, 0.55, 0.75], 0.01, 301);
    Fixture {
        ds: build_operator_dataset(&trajs, 4, 6).unwrap(),
        surrogate: small_surrogate(&trajs),
    }
}

/// Moves every parameter off its initial value so no gradient is
/// accidentally zero.
fn perturb(model: &mut DeepOnetModel) {
    let mut k = 0.0;
    for store in [&mut model.branch, &mut model.trunk, &mut model.bias] {
        for (_, t) in store.iter_mut() {
            for v in t.data_mut() {
                k += 1.0;
                *v += 0.05 * (k * 0.7f64).sin();
            }
        }
    }
}

#[test]
fn combined_loss_gradients_match_central_differences() {
    let f = fixture();
    let physics = PhysicsLossConfig {
        w_data: 1.0,
        w_physics: 0.1,
        collocation: 1,
    };
    let mut model = init_operator(&f.ds, &tiny_config(), &physics).unwrap();
    perturb(&mut model);
    let samples = &f.ds.samples[..5];
    let points = [
        CollocationPoint { traj: 0, index: 17 },
        CollocationPoint {
            traj: 1,
            index: 150,
        },
        CollocationPoint {
            traj: 2,
            index: 299,
        },
    ];
    let (_, _, grads) =
        combined_loss_and_grads(&model, Some(&f.surrogate), &f.ds, samples, &points).unwrap();
    let total = |m: &DeepOnetModel| {
        data_loss(m, &f.ds, samples).unwrap()
            + 0.1 * physics_loss(m, &f.surrogate, &f.ds, &points).unwrap()
    };
    type Pick = fn(&mut DeepOnetModel) -> &mut ParamStore;
    let groups: [(Pick, &ParamStore); 3] = [
        (|m| &mut m.branch, &grads.branch),
        (|m| &mut m.trunk, &grads.trunk),
        (|m| &mut m.bias, &grads.bias),
    ];
    for (pick, analytic) in groups {
        let mut probe = model.clone();
        let params = pick(&mut probe).clone();
        let err = max_fd_error(&params, analytic, 1e-4, 1e-8, |p| {
            *pick(&mut probe) = p.clone();
            total(&probe)
        });
        assert!(err < 1e-4, "relative error {err}");
    }
}

#[test]
fn zero_physics_weight_is_bit_identical_to_no_surrogate() {
    let f = fixture();
    let cfg = tiny_config();
    let off = PhysicsLossConfig {
        w_physics: 0.0,
        ..PhysicsLossConfig::default()
    };
    let none = train_operator(&f.ds, None, &cfg, &off).unwrap();
    let some = train_operator(&f.ds, Some(&f.surrogate), &cfg, &off).unwrap();
    let no_points = PhysicsLossConfig {
        w_physics: 0.1,
        collocation: 0,
        ..PhysicsLossConfig::default()
    };
    let empty = train_operator(&f.ds, Some(&f.surrogate), &cfg, &no_points).unwrap();
    for (model, history) in [&some, &empty] {
        assert_eq!(model.branch.checksum(), none.0.branch.checksum());
        assert_eq!(model.trunk.checksum(), none.0.trunk.checksum());
        assert_eq!(model.bias.checksum(), none.0.bias.checksum());
        assert_eq!(history.data, none.1.data);
    }
    assert_eq!(none.0.surrogate_checksum, None);
}

#[test]
fn operator_training_leaves_surrogate_untouched() {
    let f = fixture();
    let before = f.surrogate.params.checksum();
    let (model, history) = train_operator(
        &f.ds,
        Some(&f.surrogate),
        &tiny_config(),
        &PhysicsLossConfig::default(),
    )
    .unwrap();
    assert_eq!(f.surrogate.params.checksum(), before);
    assert_eq!(model.surrogate_checksum.as_deref(), Some(before.as_str()));
    assert!(history.physics.iter().all(|p| *p > 0.0));
}

#[test]
fn same_seed_same_operator() {
    let f = fixture();
    let physics = PhysicsLossConfig::default();
    let a = train_operator(&f.ds, Some(&f.surrogate), &tiny_config(), &physics).unwrap();
    let b = train_operator(&f.ds, Some(&f.surrogate), &tiny_config(), &physics).unwrap();
    assert_eq!(a.0.to_text(), b.0.to_text());
    let other = DeepOnetConfig {
        seed: 1,
        ..tiny_config()
    };
    let c = train_operator(&f.ds, Some(&f.surrogate), &other, &physics).unwrap();
    assert_ne!(a.0.trunk.checksum(), c.0.trunk.checksum());
}

/// Branch output fixed at 1 and trunk `sin(τ)`, so `x̂(t) = σ (sin(s t) + b) + μ`.
fn sine_model(ds: &OperatorDataset) -> DeepOnetModel {
    let cfg = DeepOnetConfig {
        branch_hidden: vec![],
        trunk_hidden: vec![1],
        latent: 1,
        activation: Activation::Sin,
        ..DeepOnetConfig::default()
    };
    let mut m = init_operator(ds, &cfg, &PhysicsLossConfig::baseline()).unwrap();
    let w = ds.branch_width();
    m.branch.insert("l0.weight", Tensor::zeros(&[1, w]));
    m.branch.insert("l0.bias", Tensor::row(&[1.0]));
    m.trunk.insert("l0.weight", Tensor::row(&[1.0]));
    m.trunk.insert("l0.bias", Tensor::row(&[0.0]));
    m.trunk.insert("l1.weight", Tensor::row(&[1.0]));
    m.trunk.insert("l1.bias", Tensor::row(&[0.0]));
    m.bias.insert("bias", Tensor::scalar(0.25));
    m
}

#[test]
fn physical_jets_carry_powers_of_the_time_scale() {
    let f = fixture();
    let m = sine_model(&f.ds);
    let s = m.time_scale();
    let (sy, my) = (m.stats.target.std[0], m.stats.target.mean[0]);
    let b = &f.ds.branch_inputs[0];
    for i in 0..20 {
        let t = 0.13 * i as f64;
        let d = operator_jets(&m, b, t, 3).unwrap();
        let tau = s * t;
        let expected = [
            sy * (tau.sin() + 0.25) + my,
            sy * s * tau.cos(),
            -sy * s * s * tau.sin(),
            -sy * s.powi(3) * tau.cos(),
        ];
        for k in 0..4 {
            assert!((d[k] - expected[k]).abs() < 1e-12, "t={t} k={k}");
        }
        assert!((operator_forward(&m, b, t).unwrap() - expected[0]).abs() < 1e-12);
    }
}

#[test]
fn physical_jets_match_differences_in_seconds() {
    let f = fixture();
    let (mut m, _) =
        train_operator(&f.ds, None, &tiny_config(), &PhysicsLossConfig::baseline()).unwrap();
    perturb(&mut m);
    let b = &f.ds.branch_inputs[1];
    let h = 1e-4;
    for t in [0.2, 1.1, 2.7] {
        let d = operator_jets(&m, b, t, 3).unwrap();
        let around = |dt: f64| operator_jets(&m, b, t + dt, 3).unwrap();
        let (up, down) = (around(h), around(-h));
        for k in 1..=3 {
            let fd = (up[k - 1] - down[k - 1]) / (2.0 * h);
            assert!(
                (fd - d[k]).abs() < 1e-5 * (1.0 + d[k].abs()),
                "t={t} k={k}: {fd} vs {}",
                d[k]
            );
        }
    }
}

#[test]
fn surrogate_input_gradients_match_central_differences() {
    let f = fixture();
    let s = &f.surrogate;
    let raw = [0.3, -0.7, 0.1, -0.05];
    let mut tape = Tape::new();
    let bound = s.bind_frozen(&mut tape);
    let x = tape.leaf(Tensor::row(&raw));
    let y = s.predict_tape(&mut tape, &bound, x).unwrap();
    let g = tape.backward(y).unwrap();
    let analytic = g.get(x).unwrap().data().to_vec();
    let h = 1e-5;
    for i in 0..raw.len() {
        let mut up = raw;
        let mut down = raw;
        up[i] += h;
        down[i] -= h;
        let fd =
            (s.predict_batch(&up).unwrap()[0] - s.predict_batch(&down).unwrap()[0]) / (2.0 * h);
        assert!(common::rel_err(analytic[i], fd, 1e-6) < 1e-5, "input {i}");
    }
}

#[test]
fn true_dynamics_residual_shrinks_with_data_loss() {
    let trajs = pendulum_runs(&[0.35, 0.45, 0.55, 0.65, 0.75], 0.01, 1001);
    let ds = build_operator_dataset(&trajs, 20, 40).unwrap();
    let system = SystemSpec::pendulum();
    let points: Vec<CollocationPoint> = (0..ds.trajectories())
        .flat_map(|traj| {
            (1..1001)
                .step_by(37)
                .map(move |index| CollocationPoint { traj, index })
        })
        .collect();
    let mut losses = Vec::new();
    let mut residuals = Vec::new();
    for epochs in [1, 10, 40, 120, 300] {
        let cfg = DeepOnetConfig {
            branch_hidden: vec![16],
            trunk_hidden: vec![32, 32],
            latent: 16,
            lr: 3e-3,
            lr_decay: 1.0,
            epochs,
            batch_size: 50,
            ..DeepOnetConfig::default()
        };
        let (m, _) = train_operator(&ds, None, &cfg, &PhysicsLossConfig::baseline()).unwrap();
        losses.push(data_loss(&m, &ds, &ds.samples).unwrap());
        let r = residuals_with(&m, &ds, &points, |state, window| {
            system.highest_derivative(state, *window.last().unwrap())
        })
        .unwrap();
        residuals.push(r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64);
    }
    let rho = spearman(&losses, &residuals);
    assert!(rho > 0.0, "losses {losses:?} residuals {residuals:?}");
}
