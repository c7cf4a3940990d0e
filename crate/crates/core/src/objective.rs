//! The pointwise-mutual-information loss family.
//!
//! For a pair `(x, x')`, head `i` scores agreement between its student on one
//! member and its teacher on the other:
//!
//! ```text
//! pmi_i(x, x') = log sum_c (q_s(c|x) q_t(c|x'))^beta / q~_i(c)
//! L_i(x, x')   = -(pmi_i(x, x') + pmi_i(x', x)) / 2
//! ```
//!
//! where `q~_i` is an EMA of the teacher's batch-mean class distribution.
//! WPMI multiplies `L_i` by the teacher agreement `w_i = <q_t(.|x), q_t(.|x')>`
//! of the same head, TEMI by the mean of `w_j` over all heads, and the SCAN
//! baseline replaces the whole expression by a dot-product consistency term
//! minus `lambda` times the entropy of the batch-mean student prediction.
//!
//! Gradients are taken with respect to the raw student outputs only; teacher
//! probabilities, marginals and pair weights are constants.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::heads::{softmax_rows, ForwardCache, HeadEnsemble};

/// Clamp for log arguments and marginal denominators.
pub const EPS: f64 = 1e-8;

/// Tolerance used when validating probability vectors.
const PROB_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    Pmi,
    Wpmi,
    Temi,
    Scan,
}

impl LossMode {
    pub const ALL: [LossMode; 4] = [LossMode::Pmi, LossMode::Wpmi, LossMode::Temi, LossMode::Scan];

    pub fn name(self) -> &'static str {
        match self {
            LossMode::Pmi => "pmi",
            LossMode::Wpmi => "wpmi",
            LossMode::Temi => "temi",
            LossMode::Scan => "scan",
        }
    }
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossMode::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::arg(format!("unknown loss mode {s:?} (expected pmi, wpmi, temi or scan)")))
    }
}

/// Checks that `beta` lies in the half-open interval `(0.5, 1]`.
pub fn validate_beta(beta: f64) -> Result<()> {
    if beta > 0.5 && beta <= 1.0 {
        Ok(())
    } else {
        Err(Error::arg(format!("beta must lie in (0.5, 1], got {beta}")))
    }
}

fn check_prob(p: ArrayView1<'_, f64>, what: &str) -> Result<()> {
    if p.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::arg(format!("{what} has negative or non-finite entries")));
    }
    let sum = p.sum();
    if (sum - 1.0).abs() > PROB_TOL {
        return Err(Error::arg(format!("{what} sums to {sum}, not 1")));
    }
    Ok(())
}

fn check_probs(vs: &[(ArrayView1<'_, f64>, &str)]) -> Result<usize> {
    let c = vs[0].0.len();
    for (v, what) in vs {
        if v.len() != c {
            return Err(Error::arg(format!("{what} has {} classes, expected {c}", v.len())));
        }
        check_prob(*v, what)?;
    }
    Ok(c)
}

/// `log sum_c (p_s(c) p_t(c))^beta / max(q(c), eps)`, with the sum clamped
/// below at `eps`.
pub fn pmi(p_s: ArrayView1<'_, f64>, p_t: ArrayView1<'_, f64>, q: ArrayView1<'_, f64>, beta: f64) -> Result<f64> {
    check_probs(&[(p_s, "student distribution"), (p_t, "teacher distribution"), (q, "class marginal")])?;
    let sum: f64 = p_s
        .iter()
        .zip(p_t)
        .zip(q)
        .map(|((&s, &t), &qc)| (s * t).powf(beta) / qc.max(EPS))
        .sum();
    Ok(sum.max(EPS).ln())
}

/// The symmetrized per-pair loss `-(pmi(x, x') + pmi(x', x)) / 2`, where
/// `s_*` are student and `t_*` teacher distributions.
pub fn symmetrized_loss(
    s_x: ArrayView1<'_, f64>,
    t_x: ArrayView1<'_, f64>,
    s_xp: ArrayView1<'_, f64>,
    t_xp: ArrayView1<'_, f64>,
    q: ArrayView1<'_, f64>,
    beta: f64,
) -> Result<f64> {
    Ok(-0.5 * (pmi(s_x, t_xp, q, beta)? + pmi(s_xp, t_x, q, beta)?))
}

/// Teacher agreement `sum_c t_x(c) t_xp(c)` of one head.
pub fn instance_weight(t_x: ArrayView1<'_, f64>, t_xp: ArrayView1<'_, f64>) -> f64 {
    t_x.dot(&t_xp)
}

/// Mean teacher agreement over heads; `teacher_pairs[j]` holds head `j`'s
/// teacher distributions for the two pair members.
pub fn temi_weight(teacher_pairs: &[(ArrayView1<'_, f64>, ArrayView1<'_, f64>)]) -> f64 {
    let total: f64 = teacher_pairs.iter().map(|(a, b)| instance_weight(*a, *b)).sum();
    total / teacher_pairs.len() as f64
}

/// Shannon entropy in nats; zero entries contribute nothing.
pub fn entropy(p: ArrayView1<'_, f64>) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

/// SCAN clustering loss for one direction:
/// `-log max(<s_x, t_xp>, eps) - lambda * H(batch_mean_s)`.
pub fn scan_loss(
    s_x: ArrayView1<'_, f64>,
    t_xp: ArrayView1<'_, f64>,
    batch_mean_s: ArrayView1<'_, f64>,
    lambda: f64,
) -> Result<f64> {
    check_probs(&[(s_x, "student distribution"), (t_xp, "teacher distribution"), (batch_mean_s, "batch mean")])?;
    let consistency = -s_x.dot(&t_xp).max(EPS).ln();
    Ok(consistency - lambda * entropy(batch_mean_s))
}

/// Per-head EMA class marginals and the loss configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveState {
    marginals: Array2<f64>,
    pub marginal_momentum: f64,
    pub beta: f64,
    pub mode: LossMode,
    pub scan_lambda: f64,
}

impl ObjectiveState {
    /// Uniform marginals for `heads` heads over `classes` classes.
    pub fn new(heads: usize, classes: usize, mode: LossMode, beta: f64, marginal_momentum: f64, scan_lambda: f64) -> Result<Self> {
        validate_beta(beta)?;
        if !(marginal_momentum > 0.0 && marginal_momentum < 1.0) {
            return Err(Error::arg(format!("marginal momentum must lie in (0, 1), got {marginal_momentum}")));
        }
        if !(scan_lambda >= 0.0 && scan_lambda.is_finite()) {
            return Err(Error::arg(format!("scan lambda must be nonnegative, got {scan_lambda}")));
        }
        if heads == 0 || classes < 2 {
            return Err(Error::arg("need at least one head and two classes"));
        }
        Ok(Self {
            marginals: Array2::from_elem((heads, classes), 1.0 / classes as f64),
            marginal_momentum,
            beta,
            mode,
            scan_lambda,
        })
    }

    pub fn marginal(&self, head: usize) -> ArrayView1<'_, f64> {
        self.marginals.row(head)
    }

    pub fn marginals(&self) -> &Array2<f64> {
        &self.marginals
    }

    pub fn set_marginal(&mut self, head: usize, q: ArrayView1<'_, f64>) -> Result<()> {
        check_prob(q, "class marginal")?;
        self.marginals.row_mut(head).assign(&q);
        Ok(())
    }

    /// `q~ <- m q~ + (1 - m) mean_b teacher_probs[b]` for one head.
    pub fn update_marginal(&mut self, head: usize, teacher_probs: ArrayView2<'_, f64>) -> Result<()> {
        if teacher_probs.nrows() == 0 {
            return Err(Error::arg("marginal update needs a nonempty batch"));
        }
        if teacher_probs.ncols() != self.marginals.ncols() {
            return Err(Error::arg("teacher batch has the wrong number of classes"));
        }
        let mean = teacher_probs.mean_axis(Axis(0)).expect("nonempty batch");
        let m = self.marginal_momentum;
        self.marginals
            .row_mut(head)
            .zip_mut_with(&mean, |q, &b| *q = m * *q + (1.0 - m) * b);
        Ok(())
    }
}

/// One direction of the pmi term from raw student outputs: returns the value
/// and writes `d value / d logits` into `grad`.
///
/// With `u = logits / tau`, `s = softmax(u)` and `a_c` the normalized summands,
/// `d log S / d u_j = beta (a_j - s_j)`.
fn directional_pmi(
    logits: ArrayView1<'_, f64>,
    teacher: ArrayView1<'_, f64>,
    q: ArrayView1<'_, f64>,
    beta: f64,
    tau: f64,
    grad: &mut [f64],
) -> f64 {
    let c = logits.len();
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let shifted: Vec<f64> = logits.iter().map(|&z| (z - max) / tau).collect();
    let log_norm = shifted.iter().map(|u| u.exp()).sum::<f64>().ln();
    let mut terms = vec![0.0; c];
    let mut sum = 0.0;
    for k in 0..c {
        let t = teacher[k];
        if t > 0.0 {
            terms[k] = (beta * (shifted[k] - log_norm + t.ln()) - q[k].max(EPS).ln()).exp();
            sum += terms[k];
        }
    }
    if sum < EPS {
        grad.iter_mut().for_each(|g| *g = 0.0);
        return EPS.ln();
    }
    for k in 0..c {
        let s = (shifted[k] - log_norm).exp();
        grad[k] = beta * (terms[k] / sum - s) / tau;
    }
    sum.ln()
}

/// Everything computed for one head on one batch.
#[derive(Debug, Clone)]
pub struct HeadPass {
    pub cache_x: ForwardCache,
    pub cache_xp: ForwardCache,
    pub teacher_x: Array2<f64>,
    pub teacher_xp: Array2<f64>,
    /// This head's batch loss (before averaging over heads).
    pub loss: f64,
    /// Gradient of the ensemble loss with respect to the student's raw
    /// outputs on `x` and `x'`.
    pub grad_x: Array2<f64>,
    pub grad_xp: Array2<f64>,
    /// Per-pair teacher agreement of this head.
    pub weights: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct EnsembleLoss {
    /// Mean over heads of the per-head batch losses.
    pub total: f64,
    pub heads: Vec<HeadPass>,
}

impl EnsembleLoss {
    pub fn head_losses(&self) -> Vec<f64> {
        self.heads.iter().map(|h| h.loss).collect()
    }

    pub fn mean_weight(&self) -> f64 {
        let n: usize = self.heads.iter().map(|h| h.weights.len()).sum();
        self.heads.iter().map(|h| h.weights.sum()).sum::<f64>() / n as f64
    }
}

/// Loss for a single head given its raw student outputs and (constant)
/// teacher probabilities, together with gradients of `scale * loss` with
/// respect to the student outputs.
///
/// `pair_weights` multiplies each pair's symmetrized loss; it is ignored by
/// [`LossMode::Scan`].
#[allow(clippy::too_many_arguments)]
pub fn head_loss_and_grad(
    mode: LossMode,
    logits_x: ArrayView2<'_, f64>,
    logits_xp: ArrayView2<'_, f64>,
    teacher_x: ArrayView2<'_, f64>,
    teacher_xp: ArrayView2<'_, f64>,
    q: ArrayView1<'_, f64>,
    beta: f64,
    tau: f64,
    scan_lambda: f64,
    pair_weights: ArrayView1<'_, f64>,
    scale: f64,
) -> (f64, Array2<f64>, Array2<f64>) {
    let (b, c) = logits_x.dim();
    let mut grad_x = Array2::zeros((b, c));
    let mut grad_xp = Array2::zeros((b, c));
    let mut gx = vec![0.0; c];
    let mut gxp = vec![0.0; c];
    let (beta, q_used) = match mode {
        LossMode::Scan => (1.0, Array1::ones(c)),
        _ => (beta, q.to_owned()),
    };
    let mut loss = 0.0;
    for r in 0..b {
        let w = if mode == LossMode::Scan { 1.0 } else { pair_weights[r] };
        let fwd = directional_pmi(logits_x.row(r), teacher_xp.row(r), q_used.view(), beta, tau, &mut gx);
        let bwd = directional_pmi(logits_xp.row(r), teacher_x.row(r), q_used.view(), beta, tau, &mut gxp);
        loss += -0.5 * w * (fwd + bwd);
        let coef = -0.5 * w * scale / b as f64;
        for k in 0..c {
            grad_x[[r, k]] = coef * gx[k];
            grad_xp[[r, k]] = coef * gxp[k];
        }
    }
    loss /= b as f64;

    if mode == LossMode::Scan && scan_lambda != 0.0 {
        // Entropy of the mean student prediction over both pair members.
        let s_x = softmax_rows(logits_x, tau);
        let s_xp = softmax_rows(logits_xp, tau);
        let rows = 2 * b;
        let mean = (s_x.sum_axis(Axis(0)) + s_xp.sum_axis(Axis(0))) / rows as f64;
        loss -= scan_lambda * entropy(mean.view());
        let log_mean: Array1<f64> = mean.mapv(|m| m.max(EPS).ln());
        // d(-lambda H)/du_j = lambda/N * s_j (log m_j - sum_c s_c log m_c)
        let coef = scale * scan_lambda / rows as f64 / tau;
        for (s, g) in [(&s_x, &mut grad_x), (&s_xp, &mut grad_xp)] {
            for (srow, mut grow) in s.rows().into_iter().zip(g.rows_mut()) {
                let avg = srow.dot(&log_mean);
                for k in 0..c {
                    grow[k] += coef * srow[k] * (log_mean[k] - avg);
                }
            }
        }
    }
    (loss, grad_x, grad_xp)
}

/// Evaluates the ensemble loss on a batch of pairs `(x[b], xp[b])` and the
/// gradients of the head-averaged loss with respect to every student's raw
/// outputs. Heads are processed in parallel; results are collected in head
/// order so the outcome does not depend on the thread count.
pub fn loss_and_grad(
    ensemble: &HeadEnsemble,
    state: &ObjectiveState,
    x: ArrayView2<'_, f64>,
    xp: ArrayView2<'_, f64>,
) -> Result<EnsembleLoss> {
    let num_heads = ensemble.num_heads();
    if state.marginals.nrows() != num_heads || state.marginals.ncols() != ensemble.arch.classes {
        return Err(Error::arg("objective state does not match the ensemble"));
    }
    if x.dim() != xp.dim() || x.nrows() == 0 {
        return Err(Error::arg("pair batch halves must be nonempty and equally shaped"));
    }
    let tau = ensemble.tau;
    let teachers: Vec<(Array2<f64>, Array2<f64>, Array1<f64>)> = ensemble
        .heads
        .par_iter()
        .map(|h| -> Result<_> {
            let tx = h.teacher.probs_batch(x, tau)?;
            let txp = h.teacher.probs_batch(xp, tau)?;
            let w: Array1<f64> = tx
                .rows()
                .into_iter()
                .zip(txp.rows())
                .map(|(a, b)| instance_weight(a, b))
                .collect();
            Ok((tx, txp, w))
        })
        .collect::<Result<_>>()?;

    let ensemble_weight: Array1<f64> = {
        let mut acc = Array1::zeros(x.nrows());
        for (_, _, w) in &teachers {
            acc += w;
        }
        acc / num_heads as f64
    };
    let ones = Array1::ones(x.nrows());
    let scale = 1.0 / num_heads as f64;

    let heads: Vec<HeadPass> = ensemble
        .heads
        .par_iter()
        .zip(teachers.into_par_iter())
        .enumerate()
        .map(|(i, (h, (tx, txp, w)))| -> Result<HeadPass> {
            let cache_x = h.student.forward_batch(x)?;
            let cache_xp = h.student.forward_batch(xp)?;
            let pair_weights = match state.mode {
                LossMode::Pmi | LossMode::Scan => ones.view(),
                LossMode::Wpmi => w.view(),
                LossMode::Temi => ensemble_weight.view(),
            };
            let (loss, grad_x, grad_xp) = head_loss_and_grad(
                state.mode,
                cache_x.logits.view(),
                cache_xp.logits.view(),
                tx.view(),
                txp.view(),
                state.marginal(i),
                state.beta,
                tau,
                state.scan_lambda,
                pair_weights,
                scale,
            );
            Ok(HeadPass {
                cache_x,
                cache_xp,
                teacher_x: tx,
                teacher_xp: txp,
                loss,
                grad_x,
                grad_xp,
                weights: w,
            })
        })
        .collect::<Result<_>>()?;
    let total = heads.iter().map(|h| h.loss).sum::<f64>() / num_heads as f64;
    Ok(EnsembleLoss { total, heads })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn v(x: &[f64]) -> Array1<f64> {
        Array1::from(x.to_vec())
    }

    #[test]
    fn pmi_hand_values() {
        let half = v(&[0.5, 0.5]);
        let one = v(&[1.0, 0.0]);
        let other = v(&[0.0, 1.0]);
        assert!((pmi(one.view(), one.view(), half.view(), 1.0).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(pmi(half.view(), half.view(), half.view(), 1.0).unwrap(), 0.0);
        assert_eq!(pmi(one.view(), other.view(), half.view(), 1.0).unwrap(), EPS.ln());
        let p = v(&[0.8, 0.2]);
        let expected = ((0.64f64.powf(0.6) + 0.04f64.powf(0.6)) / 0.5).ln();
        let got = pmi(p.view(), p.view(), half.view(), 0.6).unwrap();
        assert!((got - expected).abs() < 1e-14);
        // 0.5986 when rounded from four-digit intermediate terms
        assert!((got - 0.5986).abs() < 1e-3, "{got}");
    }

    #[test]
    fn pmi_rejects_non_distributions() {
        let half = v(&[0.5, 0.5]);
        let bad = v(&[0.7, 0.7]);
        assert!(matches!(pmi(bad.view(), half.view(), half.view(), 1.0), Err(Error::Argument(_))));
        let neg = v(&[1.5, -0.5]);
        assert!(pmi(half.view(), neg.view(), half.view(), 1.0).is_err());
        let three = v(&[0.2, 0.3, 0.5]);
        assert!(pmi(half.view(), three.view(), half.view(), 1.0).is_err());
    }

    #[test]
    fn symmetrized_examples() {
        let s = v(&[0.7, 0.2, 0.1]);
        let t = v(&[0.5, 0.25, 0.25]);
        let q = v(&[0.4, 0.4, 0.2]);
        let l = symmetrized_loss(s.view(), t.view(), s.view(), t.view(), q.view(), 0.8).unwrap();
        assert!((l + pmi(s.view(), t.view(), q.view(), 0.8).unwrap()).abs() < 1e-15);
        let s2 = v(&[0.1, 0.1, 0.8]);
        let t2 = v(&[0.3, 0.3, 0.4]);
        let ab = symmetrized_loss(s.view(), t.view(), s2.view(), t2.view(), q.view(), 0.8).unwrap();
        let ba = symmetrized_loss(s2.view(), t2.view(), s.view(), t.view(), q.view(), 0.8).unwrap();
        assert_eq!(ab, ba);

        let mut onehot = Array1::zeros(10);
        onehot[3] = 1.0;
        let uniform = Array1::from_elem(10, 0.1);
        let l = symmetrized_loss(onehot.view(), onehot.view(), onehot.view(), onehot.view(), uniform.view(), 1.0).unwrap();
        assert!((l + 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn weights() {
        let a = v(&[1.0, 0.0, 0.0]);
        let b = v(&[0.0, 1.0, 0.0]);
        let u = Array1::from_elem(4, 0.25);
        assert_eq!(instance_weight(a.view(), a.view()), 1.0);
        assert_eq!(instance_weight(a.view(), b.view()), 0.0);
        assert_eq!(instance_weight(u.view(), u.view()), 0.25);
        assert_eq!(temi_weight(&[(a.view(), b.view())]), instance_weight(a.view(), b.view()));
        assert_eq!(temi_weight(&[(a.view(), a.view()), (a.view(), b.view())]), 0.5);
        let s = v(&[0.6, 0.3, 0.1]);
        let w = instance_weight(s.view(), a.view());
        assert_eq!(temi_weight(&[(s.view(), a.view()); 5]), w);
    }

    #[test]
    fn marginal_updates() {
        let mut st = ObjectiveState::new(1, 2, LossMode::Temi, 0.6, 0.9, 0.0).unwrap();
        st.update_marginal(0, array![[0.5, 0.5]].view()).unwrap();
        assert_eq!(st.marginal(0).to_vec(), vec![0.5, 0.5]);
        st.update_marginal(0, array![[0.9, 0.1], [0.7, 0.3]].view()).unwrap();
        assert!((st.marginal(0)[0] - 0.53).abs() < 1e-15);
        assert!((st.marginal(0)[1] - 0.47).abs() < 1e-15);

        let target = array![[0.1, 0.9]];
        let mut gap = (st.marginal(0)[0] - 0.1).abs();
        for _ in 0..100 {
            st.update_marginal(0, target.view()).unwrap();
            let next = (st.marginal(0)[0] - 0.1).abs();
            assert!(next <= 0.9 * gap + 1e-15);
            gap = next;
            assert!((st.marginal(0).sum() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn state_validation() {
        assert!(ObjectiveState::new(1, 2, LossMode::Pmi, 0.5, 0.9, 0.0).is_err());
        assert!(ObjectiveState::new(1, 2, LossMode::Pmi, 1.01, 0.9, 0.0).is_err());
        assert!(ObjectiveState::new(1, 2, LossMode::Pmi, 1.0, 1.0, 0.0).is_err());
        assert!(ObjectiveState::new(1, 2, LossMode::Scan, 1.0, 0.9, -1.0).is_err());
        assert!(ObjectiveState::new(1, 2, LossMode::Pmi, 0.55, 0.9, 0.0).is_ok());
    }

    #[test]
    fn scan_examples() {
        let a = v(&[1.0, 0.0]);
        let b = v(&[0.0, 1.0]);
        let u2 = v(&[0.5, 0.5]);
        assert_eq!(scan_loss(a.view(), a.view(), u2.view(), 0.0).unwrap(), 0.0);
        assert_eq!(scan_loss(a.view(), b.view(), u2.view(), 0.0).unwrap(), -EPS.ln());
        let mut one = Array1::zeros(10);
        one[0] = 1.0;
        let u10 = Array1::from_elem(10, 0.1);
        let l = scan_loss(one.view(), one.view(), u10.view(), 4.0).unwrap();
        assert!((l + 4.0 * 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("TEMI".parse::<LossMode>().unwrap(), LossMode::Temi);
        assert!("dino".parse::<LossMode>().is_err());
    }

    #[test]
    fn directional_gradient_matches_softmax_form() {
        let logits = array![0.3, -0.2, 0.5];
        let t = array![0.2, 0.5, 0.3];
        let q = array![0.3, 0.3, 0.4];
        let mut g = vec![0.0; 3];
        let val = directional_pmi(logits.view(), t.view(), q.view(), 0.7, 0.5, &mut g);
        let s = softmax_rows(logits.view().insert_axis(Axis(0)), 0.5);
        let direct = pmi(s.row(0), t.view(), q.view(), 0.7).unwrap();
        assert!((val - direct).abs() < 1e-13);
        let h = 1e-6;
        for k in 0..3 {
            let mut up = logits.clone();
            up[k] += h;
            let mut dn = logits.clone();
            dn[k] -= h;
            let mut scratch = vec![0.0; 3];
            let fd = (directional_pmi(up.view(), t.view(), q.view(), 0.7, 0.5, &mut scratch)
                - directional_pmi(dn.view(), t.view(), q.view(), 0.7, 0.5, &mut scratch))
                / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-8);
        }
    }
}
