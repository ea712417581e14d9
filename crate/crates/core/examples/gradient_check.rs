//! Compares tape gradients of a small conv / batch-norm / pooling stack with
//! central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tsmt::tensor::{BatchNormMode, ConvGeometry, Tape, Tensor, Var};

fn build(tape: &mut Tape, x: Var, w: Var, gamma: Var, beta: Var) -> Var {
    let y = tape.conv3d(x, w, None, ConvGeometry::new([1, 1, 1], [0, 1, 1], 1)).unwrap();
    let (mut mean, mut var) = (Tensor::zeros(&[3]), Tensor::full(&[3], 1.0));
    let y = tape
        .batch_norm(y, gamma, beta, &mut mean, &mut var, BatchNormMode::Train, 0.1, 1e-5)
        .unwrap();
    let y = tape.relu(y);
    let y = tape.max_pool3d(y, [1, 2, 2], [1, 2, 2]).unwrap();
    let sq = tape.mul(y, y).unwrap();
    tape.sum(sq)
}

fn loss_at(inputs: &[Tensor; 4]) -> f64 {
    let mut tape = Tape::new();
    let v: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let l = build(&mut tape, v[0], v[1], v[2], v[3]);
    tape.value(l).data()[0]
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut random = |shape: &[usize]| Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0));
    let inputs = [random(&[2, 2, 4, 6, 6]), random(&[3, 2, 3, 3, 3]), random(&[3]), random(&[3])];

    let mut tape = Tape::new();
    let v: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = build(&mut tape, v[0], v[1], v[2], v[3]);
    tape.backward_leaves(loss).unwrap();

    let h = 1e-5;
    for (k, name) in ["input", "weight", "gamma", "beta"].iter().enumerate() {
        let analytic = tape.grad(v[k]).unwrap();
        let mut worst: f64 = 0.0;
        for j in 0..inputs[k].numel() {
            let mut plus = inputs.clone();
            let mut minus = inputs.clone();
            plus[k].data_mut()[j] += h;
            minus[k].data_mut()[j] -= h;
            let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
            let a = analytic.data()[j];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8));
        }
        println!("{name:>6}: {} entries, worst relative error {worst:.2e}", inputs[k].numel());
    }
}
