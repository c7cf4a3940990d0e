use std::f64::consts::PI;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::heads::softmax_rows;
use crate::rng::{rng_for, stream};

/// Linear-probe optimizer settings: Adam with decoupled weight decay and a
/// cosine learning-rate decay to zero.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 1e-3,
            epochs: 100,
            batch_size: 256,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeResult {
    pub train_accuracy: f64,
    pub eval_accuracy: f64,
    /// Mean cross-entropy over the training set before training and after
    /// every epoch.
    pub loss_history: Vec<f64>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, wd: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let (bc1, bc2) = (1.0 - B1.powi(self.t), 1.0 - B2.powi(self.t));
        for i in 0..params.len() {
            params[i] *= 1.0 - lr * wd;
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * grads[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * grads[i] * grads[i];
            params[i] -= lr * (self.m[i] / bc1) / ((self.v[i] / bc2).sqrt() + EPS);
        }
    }
}

struct Linear {
    w: Array2<f64>,
    b: Array1<f64>,
}

impl Linear {
    fn probs(&self, x: &Array2<f64>) -> Array2<f64> {
        softmax_rows((x.dot(&self.w) + &self.b).view(), 1.0)
    }

    fn mean_loss(&self, x: &Array2<f64>, y: &[usize]) -> f64 {
        let p = self.probs(x);
        y.iter().enumerate().map(|(i, &c)| -p[[i, c]].max(1e-300).ln()).sum::<f64>() / y.len() as f64
    }

    fn accuracy(&self, x: &Array2<f64>, y: &[usize]) -> f64 {
        let p = self.probs(x);
        let hits = p
            .rows()
            .into_iter()
            .zip(y)
            .filter(|(row, &c)| crate::metrics::diagnostics::argmax(*row) == c)
            .count();
        hits as f64 / y.len() as f64
    }
}

/// Trains a softmax-regression layer on `train` and reports accuracy on both
/// sets.
pub fn linear_probe(train: &FeatureSet, eval: &FeatureSet, cfg: &ProbeConfig) -> Result<ProbeResult> {
    let (ytr, yev) = match (train.labels(), eval.labels()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::arg("linear probing needs labels on both feature sets")),
    };
    if train.d() != eval.d() {
        return Err(Error::arg("train and eval features differ in dimension"));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::arg("probe needs at least one epoch and a positive batch size"));
    }
    let classes = train.num_classes().unwrap_or(0).max(eval.num_classes().unwrap_or(0)).max(2);
    let x = train.data();
    let d = train.d();
    let mut model = Linear {
        w: Array2::zeros((d, classes)),
        b: Array1::zeros(classes),
    };
    let mut adam_w = Adam::new(d * classes);
    let mut adam_b = Adam::new(classes);
    let mut rng = rng_for(cfg.seed, stream::PROBE);
    let mut order: Vec<usize> = (0..train.n()).collect();
    let steps_per_epoch = train.n().div_ceil(cfg.batch_size);
    let total_steps = (cfg.epochs * steps_per_epoch) as f64;
    let mut step = 0usize;
    let mut loss_history = vec![model.mean_loss(x, ytr)];
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let xb = x.select(Axis(0), batch);
            let mut g = model.probs(&xb);
            for (r, &i) in batch.iter().enumerate() {
                g[[r, ytr[i]]] -= 1.0;
            }
            g /= batch.len() as f64;
            let gw = xb.t().dot(&g);
            let gb = g.sum_axis(Axis(0));
            let lr = cfg.lr * 0.5 * (1.0 + (PI * step as f64 / total_steps).cos());
            adam_w.step(model.w.as_slice_mut().expect("standard layout"), gw.as_standard_layout().as_slice().expect("standard layout"), lr, cfg.weight_decay);
            adam_b.step(model.b.as_slice_mut().expect("standard layout"), gb.as_slice().expect("standard layout"), lr, cfg.weight_decay);
            step += 1;
        }
        loss_history.push(model.mean_loss(x, ytr));
    }
    Ok(ProbeResult {
        train_accuracy: model.accuracy(x, ytr),
        eval_accuracy: model.accuracy(eval.data(), yev),
        loss_history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{generate_synthetic, SynthConfig};
    use rand::Rng;

    fn split(fs: &FeatureSet) -> (FeatureSet, FeatureSet) {
        let labels = fs.labels().unwrap();
        let (tr, ev): (Vec<usize>, Vec<usize>) = (0..fs.n()).partition(|i| i % 2 == 0);
        let pick = |rows: &[usize]| {
            FeatureSet::new(
                fs.data().select(Axis(0), rows),
                Some(rows.iter().map(|&i| labels[i]).collect()),
                "",
            )
            .unwrap()
        };
        (pick(&tr), pick(&ev))
    }

    #[test]
    fn separable_two_class() {
        let fs = generate_synthetic(&SynthConfig { n_per_class: 100, classes: 2, dim: 5, separation: 12.0, noise: 1.0, seed: 1 })
            .unwrap()
            .standardize();
        let (tr, ev) = split(&fs);
        let r = linear_probe(&tr, &ev, &ProbeConfig { lr: 1e-2, epochs: 200, batch_size: 16, ..ProbeConfig::default() }).unwrap();
        assert_eq!(r.eval_accuracy, 1.0, "{} {:?}", r.train_accuracy, &r.loss_history[r.loss_history.len() - 3..]);
        assert_eq!(r.train_accuracy, 1.0);
        let first = r.loss_history[0];
        assert!(*r.loss_history.last().unwrap() < 0.1 * first, "{:?}", r.loss_history);
    }

    #[test]
    fn shuffled_labels_are_chance() {
        let fs = generate_synthetic(&SynthConfig { n_per_class: 400, classes: 4, dim: 8, separation: 3.0, noise: 1.0, seed: 2 })
            .unwrap()
            .standardize();
        let mut rng = rng_for(11, 0);
        let random: Vec<usize> = (0..fs.n()).map(|_| rng.random_range(0..4)).collect();
        let fs = fs.with_labels(Some(random)).unwrap();
        let (tr, ev) = split(&fs);
        let r = linear_probe(&tr, &ev, &ProbeConfig { epochs: 20, ..ProbeConfig::default() }).unwrap();
        assert!((r.eval_accuracy - 0.25).abs() < 0.05, "{}", r.eval_accuracy);
    }

    #[test]
    fn train_accuracy_is_optimistic() {
        let fs = generate_synthetic(&SynthConfig { n_per_class: 60, classes: 3, dim: 10, separation: 2.0, noise: 1.0, seed: 4 })
            .unwrap()
            .standardize();
        let (tr, ev) = split(&fs);
        let r = linear_probe(&tr, &ev, &ProbeConfig { epochs: 40, ..ProbeConfig::default() }).unwrap();
        assert!(r.train_accuracy >= r.eval_accuracy);
    }

    #[test]
    fn labels_required() {
        let fs = generate_synthetic(&SynthConfig { n_per_class: 5, classes: 2, dim: 2, separation: 1.0, noise: 1.0, seed: 0 }).unwrap();
        let unlabeled = fs.clone().with_labels(None).unwrap();
        assert!(matches!(linear_probe(&fs, &unlabeled, &ProbeConfig::default()), Err(Error::Argument(_))));
    }
}
