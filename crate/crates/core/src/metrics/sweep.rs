use serde::Serialize;

use crate::error::Result;
use crate::features::FeatureSet;
use crate::knn::NeighborTable;
use crate::metrics::{diagnostics, hungarian_acc};
use crate::objective::validate_beta;
use crate::trainer::{train, TrainConfig};

/// Entropy statistics of one training run in a beta sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BetaScanRow {
    pub beta: f64,
    /// `H(q(c))` of the selected teacher over the training set.
    pub marginal_entropy: f64,
    /// `mean_x H(q(c|x))`.
    pub conditional_entropy: f64,
    pub kl_to_uniform: f64,
    pub largest_cluster_fraction: f64,
    /// Hungarian accuracy, when labels are available.
    pub acc: Option<f64>,
}

/// Trains one run per beta, with everything else in `cfg` fixed, and reports
/// how confident and how balanced the selected head ends up.
pub fn beta_scan(fs: &FeatureSet, nt: &NeighborTable, cfg: &TrainConfig, betas: &[f64]) -> Result<Vec<BetaScanRow>> {
    for &b in betas {
        validate_beta(b)?;
    }
    betas
        .iter()
        .map(|&beta| {
            let run = train(fs, nt, &TrainConfig { beta, ..cfg.clone() })?;
            let d = diagnostics(run.probs.view())?;
            let acc = match fs.labels() {
                Some(truth) => Some(hungarian_acc(&run.assignments, truth)?.acc),
                None => None,
            };
            Ok(BetaScanRow {
                beta,
                marginal_entropy: d.marginal_entropy,
                conditional_entropy: d.conditional_entropy,
                kl_to_uniform: d.kl_to_uniform,
                largest_cluster_fraction: d.largest_cluster_fraction,
                acc,
            })
        })
        .collect()
}
