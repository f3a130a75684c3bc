mod common;

use common::max_fd_error;
use mfpi_deeponet::autodiff::{
    forward_with_jets, init_mlp, mlp_forward, mlp_jets_tape, mlp_tape, Activation, Jet3,
    ParamStore, Tape,
};
use mfpi_deeponet::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-1.5..1.5))
        .collect();
    Tensor::new(vec![rows, cols], data).unwrap()
}

fn mse_and_grads(p: &ParamStore, x: &Tensor, y: &Tensor, act: Activation) -> (f64, ParamStore) {
    let layers = p.len() / 2;
    let mut tape = Tape::new();
    let bound = p.bind(&mut tape);
    let xv = tape.constant(x.clone());
    let yv = tape.constant(y.clone());
    let out = mlp_tape(&mut tape, &bound, xv, layers, act).unwrap();
    let d = tape.sub(out, yv).unwrap();
    let sq = tape.square(d);
    let loss = tape.mean(sq);
    let grads = tape.backward(loss).unwrap();
    (
        tape.value(loss).item().unwrap(),
        p.collect_grads(&bound, &grads).unwrap(),
    )
}

fn mse(p: &ParamStore, x: &Tensor, y: &Tensor, act: Activation) -> f64 {
    let out = mlp_forward(p, x, act).unwrap();
    out.data()
        .iter()
        .zip(y.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / y.len() as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mlp_gradients_match_central_differences(
        seed in 0u64..10_000,
        hidden in prop::collection::vec(1usize..=12, 0..=2),
        inputs in 1usize..=4,
        outputs in 1usize..=3,
        act in prop_oneof![Just(Activation::Tanh), Just(Activation::Sin)],
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let widths = [vec![inputs], hidden, vec![outputs]].concat();
        let mut p = init_mlp(&widths, &mut rng);
        // non-zero biases so their gradients are exercised away from zero
        for (name, t) in p.iter_mut() {
            if name.ends_with("bias") {
                t.data_mut().iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
            }
        }
        let x = random_rows(&mut rng, 5, inputs);
        let y = random_rows(&mut rng, 5, outputs);
        let (_, g) = mse_and_grads(&p, &x, &y, act);
        let err = max_fd_error(&p, &g, 1e-3, 1e-8, |q| mse(q, &x, &y, act));
        prop_assert!(err < 1e-5, "relative error {err}");
    }

    #[test]
    fn jet_coefficients_match_time_differences(seed in 0u64..10_000, t in -1.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = init_mlp(&[2, 6, 5, 1], &mut rng);
        let static_in = [rng.random_range(-1.0..1.0)];
        let h = 1e-3;
        let f = |s: f64| forward_with_jets(&p, &static_in, s, Activation::Tanh, 3).unwrap()[0];
        let j = f(t);
        let (up, down) = (f(t + h), f(t - h));
        // each coefficient is the derivative of the previous one
        for k in 1..=3 {
            let fd = (up.coeff(k - 1) - down.coeff(k - 1)) / (2.0 * h);
            prop_assert!((fd - j.coeff(k)).abs() < 1e-5 * (1.0 + j.coeff(k).abs()), "k={k}: {fd} vs {}", j.coeff(k));
        }
    }

    #[test]
    fn jet_algebra_matches_closed_forms(a in -2.0f64..2.0, b in -2.0f64..2.0, t in -1.0f64..1.0) {
        // f(t) = tanh(a t + b) sin(t)
        let x = Jet3::time(t);
        let f = (x.scale(a) + Jet3::constant(b)).tanh() * x.sin();
        let g = |s: f64| (a * s + b).tanh() * s.sin();
        let h = 1e-3;
        let d1 = (g(t + h) - g(t - h)) / (2.0 * h);
        let d2 = (g(t + h) - 2.0 * g(t) + g(t - h)) / (h * h);
        prop_assert!((f.v0 - g(t)).abs() < 1e-14);
        prop_assert!((f.v1 - d1).abs() < 1e-5);
        prop_assert!((f.v2 - d2).abs() < 1e-4);
    }

    #[test]
    fn params_text_round_trip(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = init_mlp(&[3, 4, 2], &mut rng);
        let back = ParamStore::from_text(&p.to_text()).unwrap();
        prop_assert_eq!(back.checksum(), p.checksum());
    }
}

#[test]
fn tape_jets_agree_with_scalar_jets() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let p = init_mlp(&[1, 8, 8, 3], &mut rng);
    let times = [0.1, 0.4, 0.9];
    let mut tape = Tape::new();
    let bound = p.bind_frozen(&mut tape);
    let t = tape.constant(Tensor::column(&times));
    let jet = mlp_jets_tape(&mut tape, &bound, t, 0, 3, Activation::Tanh, 3).unwrap();
    for (r, &time) in times.iter().enumerate() {
        let scalar = forward_with_jets(&p, &[], time, Activation::Tanh, 3).unwrap();
        for k in 0..=3 {
            let c = jet.coeff(&mut tape, k);
            let v = tape.value(c).row_slice(r).to_vec();
            for (j, s) in scalar.iter().enumerate() {
                assert!((v[j] - s.coeff(k)).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn relu_jets_are_piecewise_linear() {
    let mut p = ParamStore::new();
    p.insert("l0.weight", Tensor::column(&[2.0, -1.0]));
    p.insert("l0.bias", Tensor::row(&[0.0, 0.0]));
    p.insert("l1.weight", Tensor::row(&[1.0, 1.0]));
    p.insert("l1.bias", Tensor::scalar(0.0));
    // relu(2t) + relu(-t)
    let at = |t: f64| forward_with_jets(&p, &[], t, Activation::Relu, 2).unwrap()[0];
    assert_eq!((at(0.5).v0, at(0.5).v1, at(0.5).v2), (1.0, 2.0, 0.0));
    assert_eq!((at(-0.5).v0, at(-0.5).v1, at(-0.5).v2), (0.5, -1.0, 0.0));
}
