use ndarray::{Array2, ArrayView1, Axis};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::rng::{derive_seed, rng_for, stream};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub restarts: usize,
    pub max_iters: usize,
    /// Stop once the relative inertia decrease falls below this.
    pub tol: f64,
    pub seed: u64,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self { k, restarts: 10, max_iters: 300, tol: 1e-6, seed }
    }

    fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::arg("k-means needs k >= 2"));
        }
        if self.restarts < 1 || self.max_iters < 1 {
            return Err(Error::arg("k-means needs at least one restart and one iteration"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::arg("k-means tolerance must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Array2<f64>,
    pub inertia: f64,
    /// Restart that produced this result.
    pub restart: usize,
    /// Inertia after every assignment step of the winning restart.
    pub inertia_history: Vec<f64>,
}

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid and its squared distance; ties go to the lowest index.
fn nearest(x: ArrayView1<'_, f64>, centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.rows().into_iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus_seed<R: Rng>(data: &Array2<f64>, k: usize, rng: &mut R) -> Array2<f64> {
    let n = data.nrows();
    let mut centroids = Array2::zeros((k, data.ncols()));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&data.row(first));
    let mut d2: Vec<f64> = data.rows().into_iter().map(|x| sq_dist(x, data.row(first))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).assign(&data.row(pick));
        for (i, x) in data.rows().into_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(x, data.row(pick)));
        }
    }
    centroids
}

fn lloyd<R: Rng>(data: &Array2<f64>, cfg: &KMeansConfig, rng: &mut R) -> (Vec<usize>, Array2<f64>, f64, Vec<f64>) {
    let (n, d) = data.dim();
    let k = cfg.k;
    let mut centroids = plus_plus_seed(data, k, rng);
    let mut assign = vec![0usize; n];
    let mut dist = vec![0.0f64; n];
    let mut history: Vec<f64> = Vec::new();
    for _ in 0..cfg.max_iters {
        for (i, x) in data.rows().into_iter().enumerate() {
            let (j, dd) = nearest(x, &centroids);
            assign[i] = j;
            dist[i] = dd;
        }
        let inertia: f64 = dist.iter().sum();
        if let Some(&prev) = history.last() {
            debug_assert!(inertia <= prev * (1.0 + 1e-9) + 1e-12, "inertia rose from {prev} to {inertia}");
        }
        let converged = history
            .last()
            .is_some_and(|&prev| prev - inertia <= cfg.tol * prev.max(f64::MIN_POSITIVE));
        history.push(inertia);
        if converged || inertia == 0.0 {
            break;
        }

        let mut sums = Array2::<f64>::zeros((k, d));
        let mut counts = vec![0usize; k];
        for (i, x) in data.rows().into_iter().enumerate() {
            let mut row = sums.row_mut(assign[i]);
            row += &x;
            counts[assign[i]] += 1;
        }
        for j in 0..k {
            if counts[j] > 0 {
                let mean = &sums.row(j) / counts[j] as f64;
                centroids.row_mut(j).assign(&mean);
            }
        }
        for i in 0..n {
            dist[i] = sq_dist(data.row(i), centroids.row(assign[i]));
        }
        // Empty clusters take the point farthest from its centroid, drawn
        // from clusters that can spare one.
        for j in 0..k {
            if counts[j] > 0 {
                continue;
            }
            let donor = (0..n)
                .filter(|&i| counts[assign[i]] > 1)
                .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)));
            if let Some(i) = donor {
                counts[assign[i]] -= 1;
                assign[i] = j;
                counts[j] = 1;
                dist[i] = 0.0;
                centroids.row_mut(j).assign(&data.row(i));
            }
        }
    }
    let inertia = *history.last().expect("at least one iteration");
    // Final assignment consistent with the returned centroids.
    for (i, x) in data.rows().into_iter().enumerate() {
        assign[i] = nearest(x, &centroids).0;
    }
    (assign, centroids, inertia, history)
}

/// Lloyd's algorithm with k-means++ seeding; the restart with the lowest
/// inertia wins (ties by restart index).
pub fn kmeans(fs: &FeatureSet, cfg: &KMeansConfig) -> Result<KMeansResult> {
    cfg.validate()?;
    if fs.n() < cfg.k {
        return Err(Error::arg(format!("k = {} exceeds the {} available points", cfg.k, fs.n())));
    }
    let base = derive_seed(cfg.seed, stream::KMEANS);
    let data = fs.data();
    let runs: Vec<_> = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| lloyd(data, cfg, &mut rng_for(base, r as u64)))
        .collect();
    let (restart, (assignments, centroids, inertia, inertia_history)) = runs
        .into_iter()
        .enumerate()
        .reduce(|best, cur| if cur.1 .2 < best.1 .2 { cur } else { best })
        .expect("at least one restart");
    Ok(KMeansResult {
        assignments,
        centroids,
        inertia,
        restart,
        inertia_history,
    })
}

/// Sum of squared distances of every row to its assigned centroid.
pub fn inertia_of(fs: &FeatureSet, assignments: &[usize], centroids: &Array2<f64>) -> f64 {
    fs.data()
        .axis_iter(Axis(0))
        .zip(assignments)
        .map(|(x, &j)| sq_dist(x, centroids.row(j)))
        .sum()
}
