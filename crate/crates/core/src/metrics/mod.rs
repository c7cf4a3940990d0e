//! Clustering metrics and prediction diagnostics.
//!
//! Entropies use natural logarithms. NMI and AMI normalize by the arithmetic
//! mean of the two label entropies; AMI subtracts the exact expected mutual
//! information under the hypergeometric permutation model.

pub(crate) mod diagnostics;
pub mod hungarian;
mod sweep;

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};

pub use diagnostics::{diagnostics, weight_separation, Diagnostics, WeightSeparation};
pub use sweep::{beta_scan, BetaScanRow};

/// Counts of (predicted cluster, true class) co-occurrences over compacted
/// label ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Contingency {
    /// `table[i][j]`: points in predicted cluster `i` with true class `j`.
    pub table: Vec<Vec<u64>>,
    pub n: u64,
    /// Original label of each row / column.
    pub pred_labels: Vec<usize>,
    pub true_labels: Vec<usize>,
}

fn compact(labels: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let uniq: BTreeMap<usize, usize> = labels
        .iter()
        .copied()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(i, l)| (l, i))
        .collect();
    let ids = labels.iter().map(|l| uniq[l]).collect();
    (ids, uniq.into_keys().collect())
}

impl Contingency {
    pub fn new(pred: &[usize], truth: &[usize]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::arg(format!(
                "prediction has {} labels, ground truth {}",
                pred.len(),
                truth.len()
            )));
        }
        let (p, pred_labels) = compact(pred);
        let (t, true_labels) = compact(truth);
        let mut table = vec![vec![0u64; true_labels.len()]; pred_labels.len()];
        for (&i, &j) in p.iter().zip(&t) {
            table[i][j] += 1;
        }
        Ok(Self {
            table,
            n: pred.len() as u64,
            pred_labels,
            true_labels,
        })
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.table.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        let mut sums = vec![0u64; self.true_labels.len()];
        for row in &self.table {
            for (s, &v) in sums.iter_mut().zip(row) {
                *s += v;
            }
        }
        sums
    }

    /// True when the two labelings are the same partition.
    pub fn is_bijection(&self) -> bool {
        self.table.iter().all(|r| r.iter().filter(|&&v| v > 0).count() == 1)
            && (0..self.true_labels.len()).all(|j| self.table.iter().filter(|r| r[j] > 0).count() == 1)
    }
}

fn entropy_of_counts(counts: &[u64], n: u64) -> f64 {
    let n = n as f64;
    -counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            p * p.ln()
        })
        .sum::<f64>()
}

fn mutual_information(ct: &Contingency) -> f64 {
    let n = ct.n as f64;
    let a = ct.row_sums();
    let b = ct.col_sums();
    let mut mi = 0.0;
    for (i, row) in ct.table.iter().enumerate() {
        for (j, &nij) in row.iter().enumerate() {
            if nij > 0 {
                let nij = nij as f64;
                mi += nij / n * (n * nij / (a[i] as f64 * b[j] as f64)).ln();
            }
        }
    }
    mi.max(0.0)
}

/// Result of Hungarian matching between clusters and classes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Matching {
    pub acc: f64,
    /// Matched `(predicted label, true label)` pairs.
    pub mapping: Vec<(usize, usize)>,
}

impl Matching {
    pub fn map(&self, pred: usize) -> Option<usize> {
        self.mapping.iter().find(|(p, _)| *p == pred).map(|&(_, t)| t)
    }
}

/// Accuracy under the best one-to-one map from clusters to classes.
pub fn hungarian_acc(pred: &[usize], truth: &[usize]) -> Result<Matching> {
    let ct = Contingency::new(pred, truth)?;
    if ct.n == 0 {
        return Err(Error::arg("cannot score empty labelings"));
    }
    let weights: Vec<Vec<i64>> = ct
        .table
        .iter()
        .map(|r| r.iter().map(|&v| v as i64).collect())
        .collect();
    let assignment = hungarian::max_weight_assignment(&weights);
    let mut matched = 0u64;
    let mut mapping = Vec::new();
    for (i, &j) in assignment.iter().enumerate() {
        if j < ct.true_labels.len() {
            matched += ct.table[i][j];
            mapping.push((ct.pred_labels[i], ct.true_labels[j]));
        }
    }
    Ok(Matching {
        acc: matched as f64 / ct.n as f64,
        mapping,
    })
}

fn check_pair(pred: &[usize], truth: &[usize]) -> Result<Contingency> {
    if pred.len() < 2 {
        return Err(Error::arg("metrics need at least two points"));
    }
    Contingency::new(pred, truth)
}

/// Normalized mutual information, arithmetic-mean normalization.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let ct = check_pair(pred, truth)?;
    let (hu, hv) = (entropy_of_counts(&ct.row_sums(), ct.n), entropy_of_counts(&ct.col_sums(), ct.n));
    // Same partition: exactly 1, including the single-cluster case.
    if ct.is_bijection() {
        return Ok(1.0);
    }
    let norm = 0.5 * (hu + hv);
    Ok((mutual_information(&ct) / norm).min(1.0))
}

fn choose2(v: u64) -> f64 {
    let v = v as f64;
    v * (v - 1.0) / 2.0
}

/// Adjusted Rand index.
pub fn ari(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let ct = check_pair(pred, truth)?;
    let sum_comb: f64 = ct.table.iter().flatten().map(|&v| choose2(v)).sum();
    let sum_a: f64 = ct.row_sums().into_iter().map(choose2).sum();
    let sum_b: f64 = ct.col_sums().into_iter().map(choose2).sum();
    let expected = sum_a * sum_b / choose2(ct.n);
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        return Ok(if ct.is_bijection() { 1.0 } else { 0.0 });
    }
    Ok((sum_comb - expected) / (max - expected))
}

/// `ln(k!)` for `k = 0..=n`.
fn log_factorials(n: u64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n as usize + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for k in 1..=n {
        acc += (k as f64).ln();
        out.push(acc);
    }
    out
}

/// Expected mutual information of two random labelings with the given
/// cluster sizes.
pub fn expected_mutual_information(row_sums: &[u64], col_sums: &[u64], n: u64) -> f64 {
    let lf = log_factorials(n);
    let nf = n as f64;
    let mut emi = 0.0;
    for &a in row_sums {
        for &b in col_sums {
            let lo = (a + b).saturating_sub(n).max(1);
            let hi = a.min(b);
            let base = lf[a as usize] + lf[b as usize] + lf[(n - a) as usize] + lf[(n - b) as usize] - lf[n as usize];
            for nij in lo..=hi {
                let log_p = base
                    - lf[nij as usize]
                    - lf[(a - nij) as usize]
                    - lf[(b - nij) as usize]
                    - lf[(n + nij - a - b) as usize];
                let nijf = nij as f64;
                let term = nijf / nf * (nf * nijf / (a as f64 * b as f64)).ln();
                emi += term * log_p.exp();
            }
        }
    }
    emi
}

/// Adjusted mutual information, arithmetic-mean normalization.
pub fn ami(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let ct = check_pair(pred, truth)?;
    if ct.is_bijection() {
        return Ok(1.0);
    }
    let a = ct.row_sums();
    let b = ct.col_sums();
    let mi = mutual_information(&ct);
    let emi = expected_mutual_information(&a, &b, ct.n);
    let norm = 0.5 * (entropy_of_counts(&a, ct.n) + entropy_of_counts(&b, ct.n));
    let mut denom = norm - emi;
    denom = if denom < 0.0 { denom.min(-f64::EPSILON) } else { denom.max(f64::EPSILON) };
    Ok(((mi - emi) / denom).min(1.0))
}

/// Scores of a predicted labeling against ground truth.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub n: usize,
    pub num_clusters: usize,
    pub num_classes: usize,
    pub acc: f64,
    pub nmi: f64,
    pub ari: f64,
    pub ami: f64,
    /// Fraction of each true class recovered by its matched cluster,
    /// keyed by class label.
    pub per_class_accuracy: BTreeMap<usize, f64>,
    pub mapping: Vec<(usize, usize)>,
    pub contingency: Vec<Vec<u64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<Diagnostics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_separation: Option<WeightSeparation>,
}

impl EvalReport {
    pub fn new(pred: &[usize], truth: &[usize]) -> Result<Self> {
        let ct = check_pair(pred, truth)?;
        let matching = hungarian_acc(pred, truth)?;
        let mut per_class = BTreeMap::new();
        let col_sums = ct.col_sums();
        for (j, &label) in ct.true_labels.iter().enumerate() {
            let hit = matching
                .mapping
                .iter()
                .find(|(_, t)| *t == label)
                .map(|(p, _)| {
                    let i = ct.pred_labels.binary_search(p).expect("mapped label exists");
                    ct.table[i][j]
                })
                .unwrap_or(0);
            per_class.insert(label, hit as f64 / col_sums[j] as f64);
        }
        Ok(Self {
            n: pred.len(),
            num_clusters: ct.pred_labels.len(),
            num_classes: ct.true_labels.len(),
            acc: matching.acc,
            nmi: nmi(pred, truth)?,
            ari: ari(pred, truth)?,
            ami: ami(pred, truth)?,
            per_class_accuracy: per_class,
            mapping: matching.mapping,
            contingency: ct.table,
            diagnostics: None,
            weight_separation: None,
        })
    }
}
