//! Finite-difference oracles shared by the gradient tests and the acceptance suite.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tsmt::tensor::{Tape, Tensor, Var};

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-scale..scale))
}

/// `||a - b|| / max(||a||, ||b||)`, with a floor so all-zero pairs compare as equal.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-12)
}

/// Builds `sum(build(inputs) * projection)` on a fresh tape.
fn projected_loss(
    inputs: &[Tensor],
    projection: &Tensor,
    requires_grad: bool,
    build: &dyn Fn(&mut Tape, &[Var]) -> Var,
) -> (Tape, Vec<Var>, Var) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone(), requires_grad))
        .collect();
    let out = build(&mut tape, &vars);
    let loss = if tape.value(out).numel() == 1 {
        out
    } else {
        let p = tape.constant(projection.clone());
        let prod = tape.mul(out, p).expect("projection shape");
        tape.sum(prod)
    };
    (tape, vars, loss)
}

/// Largest relative error between tape gradients and central differences over
/// every element of every input.
pub fn check_gradients(
    inputs: &[Tensor],
    seed: u64,
    build: impl Fn(&mut Tape, &[Var]) -> Var,
) -> f64 {
    let build: &dyn Fn(&mut Tape, &[Var]) -> Var = &build;
    let probe = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = build(&mut tape, &vars);
        tape.value(out).shape().to_vec()
    };
    let projection = random_tensor(&mut rng(seed ^ 0x5eed), &probe, 1.0);
    let (mut tape, vars, loss) = projected_loss(inputs, &projection, true, build);
    tape.backward_leaves(loss).expect("backward");
    let mut worst: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = tape
            .grad(vars[i])
            .map(|g| g.into_data())
            .unwrap_or_else(|| vec![0.0; input.numel()]);
        let mut numeric = vec![0.0; input.numel()];
        for j in 0..input.numel() {
            let eval = |delta: f64| {
                let mut perturbed = inputs.to_vec();
                perturbed[i].data_mut()[j] += delta;
                let (tape, _, loss) = projected_loss(&perturbed, &projection, false, build);
                tape.value(loss).data()[0]
            };
            numeric[j] = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
        }
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    worst
}

use tsmt::tensor::{BatchNormMode, ConvGeometry};

/// One randomized gradient check per layer kernel; each returns the worst
/// relative error for the given seed.
pub fn kernel_checks() -> Vec<(&'static str, fn(u64) -> f64)> {
    vec![
        ("conv3d", check_conv3d),
        ("conv3d_grouped", check_conv3d_grouped),
        ("conv2d", check_conv2d),
        ("conv_transpose2d", check_conv_transpose2d),
        ("batch_norm_train", check_batch_norm_train),
        ("batch_norm_eval", check_batch_norm_eval),
        ("linear", check_linear),
        ("relu_composite", check_relu_composite),
        ("softmax_cross_entropy", check_softmax_cross_entropy),
        ("max_pool", check_max_pool),
        ("adaptive_avg_pool_stack", check_avg_pool_stack),
        ("weighted_squared_error", check_weighted_squared_error),
    ]
}

pub fn check_conv3d(seed: u64) -> f64 {
    let mut r = rng(seed);
    let inputs = [
        random_tensor(&mut r, &[2, 3, 5, 6, 6], 1.0),
        random_tensor(&mut r, &[4, 3, 3, 3, 3], 0.5),
        random_tensor(&mut r, &[4], 0.5),
    ];
    let stride = [1 + (seed % 2) as usize, 1, 1 + (seed % 3 == 0) as usize];
    check_gradients(&inputs, seed, move |t, v| {
        t.conv3d(v[0], v[1], Some(v[2]), ConvGeometry::new(stride, [0, 1, 1], 1))
            .unwrap()
    })
}

pub fn check_conv3d_grouped(seed: u64) -> f64 {
    let mut r = rng(seed);
    let inputs = [
        random_tensor(&mut r, &[2, 3, 3, 4, 4], 1.0),
        random_tensor(&mut r, &[6, 1, 3, 3, 3], 0.5),
        random_tensor(&mut r, &[6], 0.5),
    ];
    check_gradients(&inputs, seed, |t, v| {
        t.conv3d(v[0], v[1], Some(v[2]), ConvGeometry::new([1, 1, 1], [0, 1, 1], 3))
            .unwrap()
    })
}

pub fn check_conv2d(seed: u64) -> f64 {
    let mut r = rng(seed);
    let inputs = [
        random_tensor(&mut r, &[2, 3, 6, 5], 1.0),
        random_tensor(&mut r, &[4, 3, 3, 3], 0.5),
        random_tensor(&mut r, &[4], 0.5),
    ];
    let stride = 1 + (seed % 2) as usize;
    check_gradients(&inputs, seed, move |t, v| {
        t.conv2d(v[0], v[1], Some(v[2]), stride, 1).unwrap()
    })
}

pub fn check_conv_transpose2d(seed: u64) -> f64 {
    let mut r = rng(seed);
    let inputs = [
        random_tensor(&mut r, &[2, 3, 3, 4], 1.0),
        random_tensor(&mut r, &[3, 2, 4, 4], 0.5),
        random_tensor(&mut r, &[2], 0.5),
    ];
    let output_padding = (seed % 2) as usize;
    check_gradients(&inputs, seed, move |t, v| {
        t.conv_transpose2d(v[0], v[1], Some(v[2]), 2, 1, output_padding)
            .unwrap()
    })
}

fn batch_norm_case(seed: u64, mode: BatchNormMode) -> f64 {
    let mut r = rng(seed);
    let inputs = [
        random_tensor(&mut r, &[3, 2, 2, 3], 2.0),
        random_tensor(&mut r, &[2], 1.5),
        random_tensor(&mut r, &[2], 1.0),
    ];
    let mean = random_tensor(&mut r, &[2], 0.5);
    let var = Tensor::from_fn(&[2], |i| 0.5 + i as f64);
    check_gradients(&inputs, seed, move |t, v| {
        let (mut m, mut s) = (mean.clone(), var.clone());
        t.batch_norm(v[0], v[1], v[2], &mut m, &mut s, mode, 0.1, 1e-5)
            .unwrap()
    })
}

pub fn check_batch_norm_train(seed: u64) -> f64 {
    batch_norm_case(seed, BatchNormMode::Train)
}

pub fn check_batch_norm_eval(seed: u64) -> f64 {
    batch_norm_case(seed, BatchNormMode::Eval)
}

pub fn check_linear(seed: u64) -> f64 {
    let mut r = rng(seed);
    let inputs = [
        random_tensor(&mut r, &[3, 5], 1.0),
        random_tensor(&mut r, &[4, 5], 1.0),
        random_tensor(&mut r, &[4], 1.0),
    ];
    check_gradients(&inputs, seed, |t, v| t.linear(v[0], v[1], Some(v[2])).unwrap())
}

pub fn check_relu_composite(seed: u64) -> f64 {
    let mut r = rng(seed);
    let inputs = [
        random_tensor(&mut r, &[3, 6], 1.0),
        random_tensor(&mut r, &[5, 6], 1.0),
        random_tensor(&mut r, &[5], 1.0),
    ];
    check_gradients(&inputs, seed, |t, v| {
        let h = t.linear(v[0], v[1], Some(v[2])).unwrap();
        let a = t.relu(h);
        t.mul(a, h).unwrap()
    })
}

pub fn check_softmax_cross_entropy(seed: u64) -> f64 {
    let mut r = rng(seed);
    let inputs = [random_tensor(&mut r, &[6, 2], 3.0)];
    let labels: Vec<f64> = (0..6).map(|i| ((seed as usize + i) % 2) as f64).collect();
    check_gradients(&inputs, seed, move |t, v| {
        let p = t.softmax(v[0], 1).unwrap();
        t.cross_entropy(p, &labels).unwrap()
    })
}

pub fn check_max_pool(seed: u64) -> f64 {
    let mut r = rng(seed);
    let inputs = [
        random_tensor(&mut r, &[2, 2, 5, 5], 1.0),
        random_tensor(&mut r, &[1, 2, 3, 4, 5], 1.0),
    ];
    check_gradients(&inputs, seed, |t, v| {
        let a = t.max_pool2d(v[0], 2, 2).unwrap();
        let b = t.max_pool3d(v[1], [1, 2, 2], [1, 2, 2]).unwrap();
        let a = t.sum(a);
        let b = t.sum(b);
        let sa = t.scale(a, 0.7);
        t.add(sa, b).unwrap()
    })
}

pub fn check_avg_pool_stack(seed: u64) -> f64 {
    let mut r = rng(seed);
    let inputs = [
        random_tensor(&mut r, &[2, 2, 3, 3], 1.0),
        random_tensor(&mut r, &[2, 3, 3, 3], 1.0),
    ];
    check_gradients(&inputs, seed, |t, v| {
        let s = t.stack(&[v[0], v[1]], 1).unwrap();
        let sq = t.mul(s, s).unwrap();
        t.adaptive_avg_pool2d(sq).unwrap()
    })
}

pub fn check_weighted_squared_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let inputs = [random_tensor(&mut r, &[3, 1, 4, 4], 1.0)];
    let target = random_tensor(&mut r, &[3, 1, 4, 4], 1.0);
    let weights: Vec<f64> = (0..16).map(|_| r.random_range(0.0..1.0)).collect();
    check_gradients(&inputs, seed, move |t, v| {
        t.weighted_squared_error(v[0], &target, &weights).unwrap()
    })
}
