//! Reverse-mode gradients of an MLP loss, checked against central
//! differences.

use mfpi_deeponet::autodiff::{init_mlp, mlp_forward, mlp_tape, Activation, ParamStore, Tape};
use mfpi_deeponet::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn loss(p: &ParamStore, x: &Tensor, y: &Tensor) -> f64 {
    let out = mlp_forward(p, x, Activation::Tanh).unwrap();
    out.data()
        .iter()
        .zip(y.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / y.len() as f64
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let p = init_mlp(&[3, 16, 16, 2], &mut rng);
    let x = Tensor::new(
        vec![4, 3],
        (0..12).map(|i| (i as f64 * 0.37).sin()).collect(),
    )?;
    let y = Tensor::new(
        vec![4, 2],
        (0..8).map(|i| (i as f64 * 0.91).cos()).collect(),
    )?;

    let mut tape = Tape::new();
    let bound = p.bind(&mut tape);
    let xv = tape.constant(x.clone());
    let yv = tape.constant(y.clone());
    let out = mlp_tape(&mut tape, &bound, xv, 3, Activation::Tanh)?;
    let d = tape.sub(out, yv)?;
    let sq = tape.square(d);
    let l = tape.mean(sq);
    let grads = p.collect_grads(&bound, &tape.backward(l)?)?;
    println!(
        "loss {:.6}, tape nodes {}",
        tape.value(l).item()?,
        tape.len()
    );

    let h = 1e-5;
    for (name, g) in grads.iter() {
        let mut worst: f64 = 0.0;
        for i in 0..g.len() {
            let mut up = p.clone();
            let mut down = p.clone();
            up.get_mut(name).unwrap().data_mut()[i] += h;
            down.get_mut(name).unwrap().data_mut()[i] -= h;
            let fd = (loss(&up, &x, &y) - loss(&down, &x, &y)) / (2.0 * h);
            worst = worst.max((fd - g.data()[i]).abs());
        }
        println!(
            "{name:<10} {:>4} entries, max |fd - grad| = {worst:.2e}",
            g.len()
        );
    }
    Ok(())
}
