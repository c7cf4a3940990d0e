//! Exact checks of the expected-pmi objective on small discrete models.
//!
//! A [`DiscreteModel`] draws a latent class `c ~ p(c)` and then two
//! independent examples `x, x' ~ p(x|c)`. Everything is finite, so the
//! expected pmi of a classifier `q(c|x)` can be summed exactly and compared
//! with the mutual information of the pair.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::heads::softmax_rows;
use crate::metrics::{diagnostics::argmax, hungarian_acc};
use crate::objective::EPS;
use crate::rng::{derive_seed, rng_for, stream};

const DIST_TOL: f64 = 1e-9;

fn check_distribution(v: impl IntoIterator<Item = f64>, what: &str) -> Result<()> {
    let mut total = 0.0;
    for p in v {
        if !p.is_finite() || p < 0.0 {
            return Err(Error::invalid(format!("{what} has an invalid entry {p}")));
        }
        total += p;
    }
    if (total - 1.0).abs() > DIST_TOL {
        return Err(Error::invalid(format!("{what} sums to {total}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteModel {
    p_c: Array1<f64>,
    /// `C x n_x`; row `c` is `p(x|c)`.
    p_x_given_c: Array2<f64>,
    p_x: Array1<f64>,
    /// `n_x x n_x`.
    joint: Array2<f64>,
    /// `n_x x C`; row `x` is `p(c|x)`.
    posterior: Array2<f64>,
}

impl DiscreteModel {
    pub fn new(p_c: Array1<f64>, p_x_given_c: Array2<f64>) -> Result<Self> {
        let (classes, n_x) = p_x_given_c.dim();
        if classes != p_c.len() || classes < 1 || n_x < 1 {
            return Err(Error::invalid(format!(
                "prior of length {} does not match a {classes}x{n_x} conditional table",
                p_c.len()
            )));
        }
        check_distribution(p_c.iter().copied(), "class prior")?;
        for (c, row) in p_x_given_c.rows().into_iter().enumerate() {
            check_distribution(row.iter().copied(), &format!("p(x|c={c})"))?;
        }
        let p_x = p_x_given_c.t().dot(&p_c);
        if let Some(x) = p_x.iter().position(|&p| p <= 0.0) {
            return Err(Error::invalid(format!("example {x} has zero probability")));
        }
        let weighted = &p_x_given_c * &p_c.view().insert_axis(Axis(1));
        let joint = weighted.t().dot(&p_x_given_c);
        let posterior = &weighted.t() / &p_x.view().insert_axis(Axis(1));
        Ok(Self { p_c, p_x_given_c, p_x, joint, posterior })
    }

    /// Each class owns a contiguous block of examples with `p(x|c)` uniform
    /// on the block, so every `p(c|x)` is one-hot. Blocks are as equal as
    /// possible, earlier classes taking the remainder.
    pub fn one_hot(n_x: usize, p_c: &[f64]) -> Result<Self> {
        let classes = p_c.len();
        if classes < 1 || n_x < classes {
            return Err(Error::arg(format!("cannot split {n_x} examples into {classes} non-empty classes")));
        }
        let mut table = Array2::zeros((classes, n_x));
        let mut start = 0;
        for c in 0..classes {
            let size = n_x / classes + usize::from(c < n_x % classes);
            for x in start..start + size {
                table[[c, x]] = 1.0 / size as f64;
            }
            start += size;
        }
        Self::new(Array1::from(p_c.to_vec()), table)
    }

    pub fn balanced_one_hot(n_x: usize, classes: usize) -> Result<Self> {
        Self::one_hot(n_x, &vec![1.0 / classes as f64; classes])
    }

    /// A model whose conditionals overlap, violating the one-hot condition.
    pub fn random_soft<R: Rng>(n_x: usize, classes: usize, rng: &mut R) -> Result<Self> {
        let p_c = normalized((0..classes).map(|_| 0.1 + rng.random::<f64>()).collect());
        let mut table = Array2::zeros((classes, n_x));
        for mut row in table.rows_mut() {
            let r = normalized((0..n_x).map(|_| 0.05 + rng.random::<f64>()).collect());
            row.assign(&r);
        }
        Self::new(p_c, table)
    }

    pub fn n_x(&self) -> usize {
        self.p_x.len()
    }

    pub fn classes(&self) -> usize {
        self.p_c.len()
    }

    pub fn p_c(&self) -> &Array1<f64> {
        &self.p_c
    }

    pub fn p_x_given_c(&self) -> &Array2<f64> {
        &self.p_x_given_c
    }

    pub fn p_x(&self) -> &Array1<f64> {
        &self.p_x
    }

    pub fn joint(&self) -> &Array2<f64> {
        &self.joint
    }

    pub fn posterior(&self) -> &Array2<f64> {
        &self.posterior
    }

    /// `Some(c_x)` for every example when the model is in one-hot mode.
    pub fn hard_labels(&self) -> Option<Vec<usize>> {
        self.posterior
            .rows()
            .into_iter()
            .map(|row| {
                let c = argmax(row);
                (row[c] == 1.0).then_some(c)
            })
            .collect()
    }

    /// `I(x; x')`, summed directly from the joint.
    pub fn mutual_information(&self) -> f64 {
        let n = self.n_x();
        let mut mi = 0.0;
        for x in 0..n {
            for xp in 0..n {
                let p = self.joint[[x, xp]];
                if p > 0.0 {
                    mi += p * (p / (self.p_x[x] * self.p_x[xp])).ln();
                }
            }
        }
        mi
    }

    fn check_classifier(&self, q: ArrayView2<'_, f64>) -> Result<()> {
        if q.nrows() != self.n_x() || q.ncols() < 1 {
            return Err(Error::invalid(format!("classifier has {} rows for {} examples", q.nrows(), self.n_x())));
        }
        for (x, row) in q.rows().into_iter().enumerate() {
            check_distribution(row.iter().copied(), &format!("q(c|x={x})"))?;
        }
        Ok(())
    }

    fn classifier_marginal(&self, q: ArrayView2<'_, f64>) -> Array1<f64> {
        q.t().dot(&self.p_x)
    }
}

fn normalized(v: Vec<f64>) -> Array1<f64> {
    let total: f64 = v.iter().sum();
    Array1::from(v) / total
}

/// `S(x,x') = sum_c q(c|x) q(c|x') / q(c)`; terms with a zero numerator are
/// skipped and zero marginals are clamped.
fn ratio_table(q: ArrayView2<'_, f64>, qc: &Array1<f64>) -> Array2<f64> {
    let scaled = &q / &qc.mapv(|v| v.max(EPS)).view().insert_axis(Axis(0));
    scaled.dot(&q.t())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpectedPmi {
    pub value: f64,
    /// Set when some pair with positive probability had no shared class
    /// mass and its log ratio was clamped.
    pub clamped: bool,
}

/// `E_{p(x,x')}[log sum_c q(c|x) q(c|x') / q(c)]` with `q(c)` the classifier
/// marginal under `p(x)`.
pub fn exact_expected_pmi(model: &DiscreteModel, q: ArrayView2<'_, f64>) -> Result<ExpectedPmi> {
    model.check_classifier(q)?;
    Ok(expected_pmi_unchecked(model, q))
}

fn expected_pmi_unchecked(model: &DiscreteModel, q: ArrayView2<'_, f64>) -> ExpectedPmi {
    let s = ratio_table(q, &model.classifier_marginal(q));
    let mut value = 0.0;
    let mut clamped = false;
    for (p, s) in model.joint.iter().zip(s.iter()) {
        if *p > 0.0 {
            if *s < EPS {
                clamped = true;
            }
            value += p * s.max(EPS).ln();
        }
    }
    ExpectedPmi { value, clamped }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LemmaCheck {
    pub lhs: f64,
    pub mi: f64,
    pub kl: f64,
    pub residual: f64,
}

/// Evaluates both sides of `E[pmi] = I(x;x') - KL(p(x,x') || q(x,x'))` with
/// `q(x,x') = p(x) p(x') S(x,x')`, each by its own direct summation and with
/// no clamping. Infinite sides agree when both are `-inf`.
pub fn lemma_check(model: &DiscreteModel, q: ArrayView2<'_, f64>) -> Result<LemmaCheck> {
    model.check_classifier(q)?;
    let qc = model.classifier_marginal(q);
    let n = model.n_x();
    let mut lhs = 0.0;
    let mut kl = 0.0;
    for x in 0..n {
        for xp in 0..n {
            let p = model.joint[[x, xp]];
            if p <= 0.0 {
                continue;
            }
            let s: f64 = (0..qc.len())
                .filter(|&c| qc[c] > 0.0)
                .map(|c| q[[x, c]] * q[[xp, c]] / qc[c])
                .sum();
            lhs += p * s.ln();
            let joint_q = model.p_x[x] * model.p_x[xp] * s;
            kl += p * (p / joint_q).ln();
        }
    }
    let mi = model.mutual_information();
    let rhs = mi - kl;
    let residual = if lhs == rhs { 0.0 } else { (lhs - rhs).abs() };
    Ok(LemmaCheck { lhs, mi, kl, residual })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Exhaustive,
    Gradient,
}

impl std::str::FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exhaustive" => Ok(Self::Exhaustive),
            "gradient" => Ok(Self::Gradient),
            other => Err(Error::arg(format!("unknown optimizer {other:?}; expected exhaustive or gradient"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientConfig {
    pub step: f64,
    pub iterations: usize,
    pub restarts: usize,
    /// Ascent counts as stalled after this many steps without improvement.
    pub patience: usize,
    /// Divide each example's logit gradient by `p(x)`, so rare examples move
    /// as fast as common ones.
    pub per_example: bool,
    pub seed: u64,
}

impl Default for GradientConfig {
    fn default() -> Self {
        Self { step: 0.5, iterations: 5000, restarts: 8, patience: 10_000, per_example: true, seed: 0 }
    }
}

/// Largest `C^n_x` the exhaustive search accepts.
pub const MAX_ENUMERATION: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoremVerdict {
    pub optimizer: Optimizer,
    pub recovered: bool,
    pub matched_accuracy: f64,
    /// Every classifier row puts at least `1 - 1e-3` on one class.
    pub one_hot: bool,
    pub objective: f64,
    pub mutual_information: f64,
    /// `I(x;x') - objective`, the KL gap left by the optimizer.
    pub kl_gap: f64,
    pub lemma_residual: f64,
    pub assignments: Vec<usize>,
    /// Restart that produced the reported classifier (gradient only).
    pub restart: Option<usize>,
    /// Gradient ascent ran `patience` steps without improving.
    pub stalled: bool,
    #[serde(skip)]
    pub classifier: Array2<f64>,
}

const ONE_HOT_TOL: f64 = 1e-3;

/// Maximizes the exact expected pmi over classifiers with as many classes as
/// the model and checks whether the maximizer equals `p(c|x)` up to a
/// relabeling. Models that are not one-hot still get a verdict, with
/// accuracy measured against the argmax of `p(c|x)`.
pub fn theorem_check(model: &DiscreteModel, optimizer: Optimizer, cfg: &GradientConfig) -> Result<TheoremVerdict> {
    let (q, restart, stalled) = match optimizer {
        Optimizer::Exhaustive => (exhaustive_argmax(model)?, None, false),
        Optimizer::Gradient => {
            let (q, r, stalled) = gradient_argmax(model, cfg)?;
            (q, Some(r), stalled)
        }
    };
    let objective = expected_pmi_unchecked(model, q.view()).value;
    let mi = model.mutual_information();
    let lemma = lemma_check(model, q.view())?;
    let assignments: Vec<usize> = q.rows().into_iter().map(argmax).collect();
    let truth: Vec<usize> = model.posterior.rows().into_iter().map(argmax).collect();
    let matched_accuracy = hungarian_acc(&assignments, &truth)?.acc;
    let one_hot = q.rows().into_iter().all(|row| row[argmax(row)] >= 1.0 - ONE_HOT_TOL);
    Ok(TheoremVerdict {
        optimizer,
        recovered: matched_accuracy == 1.0 && one_hot,
        matched_accuracy,
        one_hot,
        objective,
        mutual_information: mi,
        kl_gap: mi - objective,
        lemma_residual: lemma.residual,
        assignments,
        restart,
        stalled,
        classifier: q,
    })
}

fn one_hot_rows(labels: &[usize], classes: usize) -> Array2<f64> {
    let mut q = Array2::zeros((labels.len(), classes));
    for (x, &c) in labels.iter().enumerate() {
        q[[x, c]] = 1.0;
    }
    q
}

/// Best one-hot classifier by enumeration; ties keep the first in
/// lexicographic order of labels.
pub fn exhaustive_argmax(model: &DiscreteModel) -> Result<Array2<f64>> {
    let (n, c) = (model.n_x(), model.classes());
    let total = (0..n).try_fold(1usize, |acc, _| acc.checked_mul(c).filter(|&t| t <= MAX_ENUMERATION));
    let Some(total) = total else {
        return Err(Error::arg(format!("{c}^{n} classifiers is too many to enumerate")));
    };
    let mut labels = vec![0usize; n];
    let mut best: Option<(f64, Vec<usize>)> = None;
    for code in 0..total {
        let mut rest = code;
        for l in labels.iter_mut().rev() {
            *l = rest % c;
            rest /= c;
        }
        let value = expected_pmi_unchecked(model, one_hot_rows(&labels, c).view()).value;
        if best.as_ref().is_none_or(|(b, _)| value > *b) {
            best = Some((value, labels.clone()));
        }
    }
    let (_, labels) = best.expect("at least one classifier");
    Ok(one_hot_rows(&labels, c))
}

/// Gradient of the exact expected pmi with respect to the classifier table.
pub fn expected_pmi_grad(model: &DiscreteModel, q: ArrayView2<'_, f64>) -> Array2<f64> {
    let qc = model.classifier_marginal(q).mapv(|v| v.max(EPS));
    let s = ratio_table(q, &qc).mapv(|v| v.max(EPS));
    // r(x,x') = P(x,x') / S(x,x')
    let r = &model.joint / &s;
    let inv_qc = qc.mapv(|v| 1.0 / v);
    // direct term: sum_x' (r(x,x') + r(x',x)) q(c|x') / q(c)
    let rs = &r + &r.t();
    let direct = rs.dot(&q) * &inv_qc.view().insert_axis(Axis(0));
    // through q(c): dF/dq(c) = -sum r q(c|x) q(c|x') / q(c)^2
    let rq = r.dot(&q);
    let d_qc = Array1::from_iter((0..qc.len()).map(|c| {
        -(0..q.nrows()).map(|x| q[[x, c]] * rq[[x, c]]).sum::<f64>() * inv_qc[c] * inv_qc[c]
    }));
    direct + &model.p_x.view().insert_axis(Axis(1)).dot(&d_qc.view().insert_axis(Axis(0)))
}

fn softmax_table(logits: &Array2<f64>) -> Array2<f64> {
    softmax_rows(logits.view(), 1.0)
}

struct Ascent {
    q: Array2<f64>,
    value: f64,
    stalled: bool,
}

fn ascend(model: &DiscreteModel, cfg: &GradientConfig, restart: usize) -> Ascent {
    let (n, c) = (model.n_x(), model.classes());
    let mut rng = rng_for(derive_seed(cfg.seed, stream::THEOREM), restart as u64);
    let mut logits = Array2::from_shape_fn((n, c), |_| StandardNormal.sample(&mut rng));
    let mut best = f64::NEG_INFINITY;
    let mut since_best = 0usize;
    let mut stalled = false;
    for _ in 0..cfg.iterations {
        let q = softmax_table(&logits);
        let value = expected_pmi_unchecked(model, q.view()).value;
        if value > best {
            best = value;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stalled = true;
                break;
            }
        }
        let g = expected_pmi_grad(model, q.view());
        // chain rule through each row's softmax
        let inner = (&q * &g).sum_axis(Axis(1));
        let mut dl = &q * &(&g - &inner.view().insert_axis(Axis(1)));
        if cfg.per_example {
            dl /= &model.p_x.view().insert_axis(Axis(1));
        }
        logits.scaled_add(cfg.step, &dl);
    }
    let q = softmax_table(&logits);
    let value = expected_pmi_unchecked(model, q.view()).value;
    Ascent { q, value, stalled }
}

/// Full-batch gradient ascent on per-example logits from several random
/// starts; the restart with the highest final objective wins.
pub fn gradient_argmax(model: &DiscreteModel, cfg: &GradientConfig) -> Result<(Array2<f64>, usize, bool)> {
    if !(cfg.step > 0.0) || cfg.iterations == 0 || cfg.restarts == 0 || cfg.patience == 0 {
        return Err(Error::arg("gradient ascent needs a positive step, iterations, restarts and patience"));
    }
    let runs: Vec<Ascent> = (0..cfg.restarts).into_par_iter().map(|r| ascend(model, cfg, r)).collect();
    let (restart, best) = runs
        .into_iter()
        .enumerate()
        .reduce(|a, b| if b.1.value > a.1.value { b } else { a })
        .expect("at least one restart");
    if !best.value.is_finite() {
        return Err(Error::Numeric(format!("gradient ascent ended at objective {}", best.value)));
    }
    Ok((best.q, restart, best.stalled))
}
