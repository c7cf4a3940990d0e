use ndarray::{ArrayView2, Axis};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::knn::NeighborTable;
use crate::objective::{entropy, instance_weight};

/// Confidence and cluster-utilization statistics of a probability matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    /// `H(mean_x q(c|x))`.
    pub marginal_entropy: f64,
    /// `mean_x H(q(c|x))`.
    pub conditional_entropy: f64,
    pub msp_mean: f64,
    pub msp_median: f64,
    /// `KL(mean_x q(c|x) || uniform)`, i.e. `log C` minus the marginal entropy.
    pub kl_to_uniform: f64,
    /// KL divergence from the argmax histogram to the uniform distribution.
    pub hard_kl_to_uniform: f64,
    /// Share of points in the most populated cluster.
    pub largest_cluster_fraction: f64,
    /// Clusters holding at least one point.
    pub occupied_clusters: usize,
}

/// Index of the largest entry; ties go to the lowest index.
pub(crate) fn argmax(row: ndarray::ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

pub fn diagnostics(probs: ArrayView2<'_, f64>) -> Result<Diagnostics> {
    let (n, c) = probs.dim();
    if n == 0 || c == 0 {
        return Err(Error::arg("diagnostics need a nonempty probability matrix"));
    }
    let mean = probs.mean_axis(Axis(0)).expect("nonempty");
    let conditional = probs.rows().into_iter().map(entropy).sum::<f64>() / n as f64;
    let mut msp: Vec<f64> = probs.rows().into_iter().map(|r| r.iter().cloned().fold(f64::MIN, f64::max)).collect();
    let msp_mean = msp.iter().sum::<f64>() / n as f64;
    msp.sort_by(f64::total_cmp);
    let msp_median = if n % 2 == 1 {
        msp[n / 2]
    } else {
        0.5 * (msp[n / 2 - 1] + msp[n / 2])
    };
    let mut hist = vec![0usize; c];
    for r in probs.rows() {
        hist[argmax(r)] += 1;
    }
    let kl = hist
        .iter()
        .filter(|&&h| h > 0)
        .map(|&h| {
            let p = h as f64 / n as f64;
            p * (p * c as f64).ln()
        })
        .sum::<f64>()
        .max(0.0);
    let marginal_entropy = entropy(mean.view());
    Ok(Diagnostics {
        marginal_entropy,
        conditional_entropy: conditional,
        msp_mean,
        msp_median,
        kl_to_uniform: ((c as f64).ln() - marginal_entropy).max(0.0),
        hard_kl_to_uniform: kl,
        largest_cluster_fraction: *hist.iter().max().expect("c > 0") as f64 / n as f64,
        occupied_clusters: hist.iter().filter(|&&h| h > 0).count(),
    })
}

/// Mean teacher agreement over mined pairs that do and do not share a
/// ground-truth label.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightSeparation {
    pub mean_w_true: Option<f64>,
    pub mean_w_false: Option<f64>,
    pub true_pairs: usize,
    pub false_pairs: usize,
}

pub fn weight_separation(nt: &NeighborTable, teacher_probs: ArrayView2<'_, f64>, truth: &[usize]) -> Result<WeightSeparation> {
    if truth.len() != nt.n() || teacher_probs.nrows() != nt.n() {
        return Err(Error::arg("neighbor table, probabilities and labels disagree in length"));
    }
    let (mut sum_t, mut sum_f, mut n_t, mut n_f) = (0.0, 0.0, 0usize, 0usize);
    for i in 0..nt.n() {
        for &j in nt.neighbors(i) {
            let w = instance_weight(teacher_probs.row(i), teacher_probs.row(j));
            if truth[i] == truth[j] {
                sum_t += w;
                n_t += 1;
            } else {
                sum_f += w;
                n_f += 1;
            }
        }
    }
    Ok(WeightSeparation {
        mean_w_true: (n_t > 0).then(|| sum_t / n_t as f64),
        mean_w_false: (n_f > 0).then(|| sum_f / n_f as f64),
        true_pairs: n_t,
        false_pairs: n_f,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knn::mine_knn;
    use crate::FeatureSet;
    use ndarray::{array, Array2};

    #[test]
    fn uniform_rows() {
        let p = Array2::from_elem((6, 4), 0.25);
        let d = diagnostics(p.view()).unwrap();
        let log4 = 4f64.ln();
        assert!((d.marginal_entropy - log4).abs() < 1e-12);
        assert!((d.conditional_entropy - log4).abs() < 1e-12);
        assert_eq!(d.msp_mean, 0.25);
        assert_eq!(d.msp_median, 0.25);
        assert!(d.kl_to_uniform.abs() < 1e-12);
        // Ties resolve to class 0, so the argmax histogram is degenerate.
        assert!((d.hard_kl_to_uniform - log4).abs() < 1e-12);
    }

    #[test]
    fn same_one_hot_rows() {
        let p = array![[0.0, 1.0, 0.0], [0.0, 1.0, 0.0]];
        let d = diagnostics(p.view()).unwrap();
        assert_eq!(d.conditional_entropy, 0.0);
        assert_eq!(d.marginal_entropy, 0.0);
        assert!((d.kl_to_uniform - 3f64.ln()).abs() < 1e-12);
        assert!((d.hard_kl_to_uniform - 3f64.ln()).abs() < 1e-12);
        assert_eq!(d.largest_cluster_fraction, 1.0);
    }

    #[test]
    fn balanced_one_hot_rows() {
        let p = Array2::from_shape_fn((9, 3), |(i, j)| if i % 3 == j { 1.0 } else { 0.0 });
        let d = diagnostics(p.view()).unwrap();
        assert_eq!(d.conditional_entropy, 0.0);
        assert!((d.marginal_entropy - 3f64.ln()).abs() < 1e-12);
        assert!(d.kl_to_uniform.abs() < 1e-12);
        assert!(d.hard_kl_to_uniform.abs() < 1e-12);
        assert_eq!(d.occupied_clusters, 3);
    }

    fn fixture() -> (NeighborTable, Vec<usize>) {
        let fs = FeatureSet::new(
            array![[1.0, 0.0], [0.9, 0.1], [0.8, 0.3], [0.0, 1.0], [0.1, 0.9], [0.4, 0.6]],
            None,
            "",
        )
        .unwrap();
        (mine_knn(&fs, 3).unwrap(), vec![0, 0, 0, 1, 1, 1])
    }

    #[test]
    fn perfect_and_uniform_teachers() {
        let (nt, truth) = fixture();
        let perfect = Array2::from_shape_fn((6, 2), |(i, j)| if truth[i] == j { 1.0 } else { 0.0 });
        let ws = weight_separation(&nt, perfect.view(), &truth).unwrap();
        assert_eq!(ws.mean_w_true, Some(1.0));
        assert_eq!(ws.mean_w_false, Some(0.0));
        let uniform = Array2::from_elem((6, 2), 0.5);
        let ws = weight_separation(&nt, uniform.view(), &truth).unwrap();
        assert_eq!(ws.mean_w_true, Some(0.5));
        assert_eq!(ws.mean_w_false, Some(0.5));
    }

    #[test]
    fn missing_false_pairs() {
        let (nt, _) = fixture();
        let ws = weight_separation(&nt, Array2::from_elem((6, 2), 0.5).view(), &[0; 6]).unwrap();
        assert_eq!(ws.mean_w_false, None);
        assert_eq!(ws.false_pairs, 0);
    }
}
