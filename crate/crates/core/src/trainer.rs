//! The self-distillation training loop.
//!
//! Every step draws a batch of anchors, pairs each anchor with a uniformly
//! chosen mined neighbor, evaluates the configured loss on all heads,
//! updates every student with AdamW (learning rate warmed up linearly),
//! moves every teacher toward its student and refreshes each head's class
//! marginal from the teacher outputs of the batch. The teacher of the head
//! with the lowest smoothed loss produces the final assignments.

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::heads::{AdamW, Arch, HeadEnsemble};
use crate::knn::NeighborTable;
use crate::metrics::diagnostics::argmax;
use crate::objective::{entropy, loss_and_grad, validate_beta, LossMode, ObjectiveState};
use crate::rng::{rng_for, stream};

/// Smoothing factor of the per-head loss EMA used for head selection.
pub const LOSS_SMOOTHING: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub teacher_momentum: f64,
    pub marginal_momentum: f64,
    pub beta: f64,
    pub tau: f64,
    pub heads: usize,
    /// Neighbors per example the table was mined with (informational).
    pub knn_k: usize,
    pub clusters: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub scan_lambda: f64,
    pub seed: u64,
    pub mode: LossMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            warmup_epochs: 20,
            batch_size: 512,
            lr: 1e-4,
            weight_decay: 1e-4,
            teacher_momentum: 0.996,
            marginal_momentum: 0.9,
            beta: 0.6,
            tau: 0.1,
            heads: 50,
            knn_k: 50,
            clusters: 10,
            hidden1: 512,
            hidden2: 512,
            scan_lambda: 4.0,
            seed: 0,
            mode: LossMode::Temi,
        }
    }
}

impl TrainConfig {
    /// Smaller ensemble and schedule for CPU-scale runs.
    pub fn desk() -> Self {
        Self {
            heads: 16,
            epochs: 50,
            batch_size: 128,
            warmup_epochs: 5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::arg("epochs must be at least 1"));
        }
        if self.warmup_epochs >= self.epochs {
            return Err(Error::arg(format!(
                "warmup epochs ({}) must be fewer than epochs ({})",
                self.warmup_epochs, self.epochs
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::arg("batch size must be at least 2"));
        }
        if self.clusters < 2 {
            return Err(Error::arg("need at least 2 clusters"));
        }
        if self.heads < 1 {
            return Err(Error::arg("need at least one head"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::arg("learning rate and weight decay must be finite and nonnegative"));
        }
        if !(self.teacher_momentum > 0.0 && self.teacher_momentum < 1.0) {
            return Err(Error::arg("teacher momentum must lie in (0, 1)"));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::arg("temperature must be positive"));
        }
        validate_beta(self.beta)?;
        Ok(())
    }

    pub fn arch(&self, input: usize) -> Result<Arch> {
        Arch::new(input, self.hidden1, self.hidden2, self.clusters)
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub head_losses: Vec<f64>,
    /// Mean per-head teacher agreement over the batch.
    pub mean_weight: f64,
    /// Mean over heads of the entropy of the EMA class marginal.
    pub marginal_entropy: f64,
    /// Smoothed loss of the currently best head.
    pub best_smoothed_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub ensemble: HeadEnsemble,
    pub optimizers: Vec<AdamW>,
    pub state: ObjectiveState,
    pub best_head: usize,
    pub smoothed_losses: Vec<f64>,
    /// Cluster of every example under the best head's teacher.
    pub assignments: Vec<usize>,
    pub probs: Array2<f64>,
    pub log: Vec<StepRecord>,
    pub steps_per_epoch: usize,
}

/// Pairs each anchor with one of its mined neighbors, chosen uniformly.
pub fn sample_pairs<R: Rng>(nt: &NeighborTable, anchors: &[usize], rng: &mut R) -> Vec<(usize, usize)> {
    anchors
        .iter()
        .map(|&x| (x, nt.indices()[[x, rng.random_range(0..nt.k())]]))
        .collect()
}

fn gather(data: &Array2<f64>, rows: impl Iterator<Item = usize>) -> Array2<f64> {
    let rows: Vec<usize> = rows.collect();
    data.select(Axis(0), &rows)
}

/// Teacher assignments and probabilities of head `head` for every row of
/// `fs`. Ties go to the lowest class index.
pub fn predict(ensemble: &HeadEnsemble, head: usize, fs: &FeatureSet) -> Result<(Vec<usize>, Array2<f64>)> {
    let probs = ensemble.teacher_probs(head, fs.data().view())?;
    let assignments = probs.rows().into_iter().map(argmax).collect();
    Ok((assignments, probs))
}

fn lr_at(cfg: &TrainConfig, step: usize, warmup_steps: usize) -> f64 {
    if step < warmup_steps {
        cfg.lr * (step + 1) as f64 / warmup_steps as f64
    } else {
        cfg.lr
    }
}

pub fn train(fs: &FeatureSet, nt: &NeighborTable, cfg: &TrainConfig) -> Result<TrainResult> {
    cfg.validate()?;
    if nt.n() != fs.n() {
        return Err(Error::arg(format!(
            "neighbor table covers {} examples, feature set has {}",
            nt.n(),
            fs.n()
        )));
    }
    let arch = cfg.arch(fs.d())?;
    let mut ensemble = HeadEnsemble::init(arch, cfg.heads, cfg.tau, cfg.seed)?;
    let mut optimizers: Vec<AdamW> = (0..cfg.heads).map(|_| AdamW::new(arch, cfg.lr, cfg.weight_decay)).collect();
    let mut state = ObjectiveState::new(cfg.heads, cfg.clusters, cfg.mode, cfg.beta, cfg.marginal_momentum, cfg.scan_lambda)?;
    let mut shuffle_rng = rng_for(cfg.seed, stream::SHUFFLE);
    let mut pair_rng = rng_for(cfg.seed, stream::PAIRS);

    let n = fs.n();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let warmup_steps = cfg.warmup_epochs * steps_per_epoch;
    let data = fs.data();
    let mut smoothed: Option<Vec<f64>> = None;
    let mut log = Vec::with_capacity(cfg.epochs * steps_per_epoch);
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        for anchors in order.chunks(cfg.batch_size) {
            let pairs = sample_pairs(nt, anchors, &mut pair_rng);
            let x = gather(data, pairs.iter().map(|p| p.0));
            let xp = gather(data, pairs.iter().map(|p| p.1));
            let out = loss_and_grad(&ensemble, &state, x.view(), xp.view())?;
            if !out.total.is_finite() || out.heads.iter().any(|h| !h.loss.is_finite()) {
                return Err(Error::Divergence {
                    step,
                    detail: format!("loss became {}", out.total),
                });
            }
            let lr = lr_at(cfg, step, warmup_steps);
            ensemble
                .heads
                .par_iter_mut()
                .zip(optimizers.par_iter_mut())
                .zip(out.heads.par_iter())
                .try_for_each(|((pair, opt), pass)| -> Result<()> {
                    let mut grads = pair.student.backward(x.view(), &pass.cache_x, pass.grad_x.view())?;
                    let gxp = pair.student.backward(xp.view(), &pass.cache_xp, pass.grad_xp.view())?;
                    grads.iter_mut().zip(gxp.iter()).for_each(|(a, b)| *a += b);
                    opt.step_with_lr(&mut pair.student, &grads, lr);
                    Ok(())
                })?;
            if ensemble.heads.iter().any(|h| !h.student.is_finite()) {
                return Err(Error::Divergence {
                    step,
                    detail: "non-finite student parameters".into(),
                });
            }
            ensemble.teacher_ema_update(cfg.teacher_momentum)?;
            for (i, pass) in out.heads.iter().enumerate() {
                let both = concatenate(Axis(0), &[pass.teacher_x.view(), pass.teacher_xp.view()])
                    .expect("teacher halves share a width");
                state.update_marginal(i, both.view())?;
            }

            let losses = out.head_losses();
            let sm = smoothed.get_or_insert_with(|| losses.clone());
            for (s, &l) in sm.iter_mut().zip(&losses) {
                *s = LOSS_SMOOTHING * *s + (1.0 - LOSS_SMOOTHING) * l;
            }
            let marginal_entropy =
                state.marginals().rows().into_iter().map(entropy).sum::<f64>() / cfg.heads as f64;
            log.push(StepRecord {
                step,
                epoch,
                lr,
                loss: out.total,
                mean_weight: out.mean_weight(),
                head_losses: losses,
                marginal_entropy,
                best_smoothed_loss: sm.iter().cloned().fold(f64::INFINITY, f64::min),
            });
            step += 1;
        }
    }

    let smoothed_losses = smoothed.expect("at least one step ran");
    let best_head = best_index(&smoothed_losses);
    let (assignments, probs) = predict(&ensemble, best_head, fs)?;
    Ok(TrainResult {
        ensemble,
        optimizers,
        state,
        best_head,
        smoothed_losses,
        assignments,
        probs,
        log,
        steps_per_epoch,
    })
}

/// Index of the smallest value; ties go to the lowest index.
fn best_index(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// Teacher probabilities of every head on `x`, for ensemble-level analysis.
pub fn all_teacher_probs(ensemble: &HeadEnsemble, x: ArrayView2<'_, f64>) -> Result<Vec<Array2<f64>>> {
    (0..ensemble.num_heads())
        .into_par_iter()
        .map(|h| ensemble.teacher_probs(h, x))
        .collect()
}
