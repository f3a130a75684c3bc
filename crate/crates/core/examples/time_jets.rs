//! Time derivatives of a network output by jet propagation, compared with
//! repeated finite differences.

use mfpi_deeponet::autodiff::{forward_with_jets, init_mlp, Activation};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // input 0 is time, input 1 a fixed feature
    let p = init_mlp(&[2, 32, 32, 1], &mut rng);
    let feature = [0.4];
    let f = |t: f64| forward_with_jets(&p, &feature, t, Activation::Sin, 1).map(|j| j[0].v0);
    let h = 1e-3;
    println!(
        "{:>5} {:>12} {:>12} {:>12} {:>12}",
        "t", "d1", "d1 fd", "d3", "d3 fd"
    );
    for i in 0..5 {
        let t = 0.2 * i as f64;
        let jet = forward_with_jets(&p, &feature, t, Activation::Sin, 3)?[0];
        let d1 = (f(t + h)? - f(t - h)?) / (2.0 * h);
        let d3 = (f(t + 2.0 * h)? - 2.0 * f(t + h)? + 2.0 * f(t - h)? - f(t - 2.0 * h)?)
            / (2.0 * h * h * h);
        println!(
            "{t:>5.1} {:>12.6} {d1:>12.6} {:>12.4} {d3:>12.4}",
            jet.coeff(1),
            jet.coeff(3)
        );
    }
    Ok(())
}
