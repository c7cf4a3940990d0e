#![allow(dead_code)]

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use temi::heads::{Arch, HeadEnsemble};
use temi::objective::{loss_and_grad, LossMode, ObjectiveState};
use temi::rng::rng_for;
use temi::features::{generate_synthetic, FeatureSet, SynthConfig};
use temi::TrainConfig;

pub const FD_STEP: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Largest relative error between analytic student gradients of the ensemble
/// loss and central finite differences, over every parameter of every head,
/// on one random instance.
pub fn gradient_check(mode: LossMode, seed: u64) -> f64 {
    let mut rng = rng_for(seed, 99);
    let input = rng.random_range(2..=6);
    let arch = Arch::new(input, rng.random_range(2..=8), rng.random_range(2..=8), rng.random_range(2..=5)).unwrap();
    let heads = rng.random_range(1..=3);
    let tau = [0.1, 0.5, 1.0][rng.random_range(0..3)];
    let beta = rng.random_range(0.55..=1.0);
    let batch = rng.random_range(2..=5);
    let mut ens = HeadEnsemble::init(arch, heads, tau, seed).unwrap();
    for pair in &mut ens.heads {
        for v in pair.teacher.iter_mut() {
            *v += 0.3 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let mut state = ObjectiveState::new(heads, arch.classes, mode, beta, 0.9, 4.0).unwrap();
    for h in 0..heads {
        let raw: Vec<f64> = (0..arch.classes).map(|_| rng.random_range(0.2..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let q = ndarray::Array1::from_iter(raw.iter().map(|v| v / total));
        state.set_marginal(h, q.view()).unwrap();
    }
    let x = Array2::from_shape_fn((batch, input), |_| rng.sample(StandardNormal));
    let xp = Array2::from_shape_fn((batch, input), |_| rng.sample(StandardNormal));

    let out = loss_and_grad(&ens, &state, x.view(), xp.view()).unwrap();
    let mut worst: f64 = 0.0;
    for h in 0..heads {
        let pass = &out.heads[h];
        let student = &ens.heads[h].student;
        let mut g = student.backward(x.view(), &pass.cache_x, pass.grad_x.view()).unwrap();
        let gxp = student.backward(xp.view(), &pass.cache_xp, pass.grad_xp.view()).unwrap();
        g.iter_mut().zip(gxp.iter()).for_each(|(a, b)| *a += b);
        let analytic: Vec<f64> = g.iter().copied().collect();
        for (k, &a) in analytic.iter().enumerate() {
            let eval = |delta: f64| {
                let mut e = ens.clone();
                *e.heads[h].student.iter_mut().nth(k).unwrap() += delta;
                loss_and_grad(&e, &state, x.view(), xp.view()).unwrap().total
            };
            let numeric = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(a, numeric));
        }
    }
    worst
}

pub fn separable_fixture(seed: u64) -> FeatureSet {
    generate_synthetic(&SynthConfig { n_per_class: 250, classes: 8, dim: 64, separation: 8.0, noise: 1.0, seed })
        .unwrap()
        .standardize()
}

/// 50-NN true-positive rate close to 0.70.
pub fn noisy_fixture(seed: u64) -> FeatureSet {
    generate_synthetic(&SynthConfig { n_per_class: 250, classes: 8, dim: 64, separation: 3.8, noise: 1.0, seed })
        .unwrap()
        .standardize()
}

/// 16 heads, beta 0.6, 50 epochs; narrower heads, smaller batches and a
/// larger step than the full-scale defaults so a run fits in seconds on one
/// core.
pub fn desk_config(mode: LossMode, clusters: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        mode,
        clusters,
        seed,
        beta: 0.6,
        heads: 16,
        epochs: 50,
        warmup_epochs: 5,
        batch_size: 32,
        lr: 1e-2,
        hidden1: 32,
        hidden2: 32,
        ..TrainConfig::default()
    }
}
