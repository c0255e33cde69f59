//! The reverse-mode tape on its own: a finite-difference check of a small
//! expression, then a two-layer regressor fitted with Adam.
//!
//! cargo run --release --example autodiff

use ehrgraph::tensor::{gradcheck, uniform_init, AdamState, Param, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> ehrgraph::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let inputs = [uniform_init(&[4, 3], 1.0, &mut rng), uniform_init(&[3, 2], 1.0, &mut rng)];
    let report = gradcheck::check(&inputs, 1e-5, |_, v| {
        let y = v[0].matmul(v[1])?.tanh();
        Ok(y.log_softmax().sum())
    })?;
    println!("gradcheck max relative error {:.2e}", report.max_rel_error());

    // y = sin(x0) + x1², sampled on a grid.
    let xs: Vec<Vec<f64>> = (0..64).map(|i| vec![(i % 8) as f64 / 4.0 - 1.0, (i / 8) as f64 / 4.0 - 1.0]).collect();
    let ys: Vec<Vec<f64>> = xs.iter().map(|x| vec![x[0].sin() + x[1] * x[1]]).collect();
    let (x, y) = (Tensor::matrix(&xs)?, Tensor::matrix(&ys)?);
    let mut w0 = Param::new(uniform_init(&[2, 16], 0.5, &mut rng));
    let mut w1 = Param::new(uniform_init(&[16, 1], 0.5, &mut rng));
    let mut adam = AdamState::new(0.02);
    for step in 0..=300 {
        let tape = Tape::new();
        let (a, b) = (tape.leaf(w0.value.clone()), tape.leaf(w1.value.clone()));
        let pred = tape.constant(x.clone()).matmul(a)?.tanh().matmul(b)?;
        let loss = pred.sub(tape.constant(y.clone()))?.square().mean();
        tape.backward(loss)?;
        w0.zero_grad();
        w1.zero_grad();
        w0.accumulate(&tape.grad(a));
        w1.accumulate(&tape.grad(b));
        adam.step(&mut [&mut w0, &mut w1]);
        if step % 100 == 0 {
            println!("step {step:3} mse {:.5}", loss.item());
        }
    }
    Ok(())
}
