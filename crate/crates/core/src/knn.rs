//! Exact cosine k-nearest-neighbor mining.
//!
//! The table is stored on disk as `b"TEMIKNN0"`, version `u32`, `n: u64`,
//! `k: u32`, then `n*k` `i64` indices and `n*k` `f32` similarities.

use std::cmp::Ordering;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use rayon::prelude::*;

use crate::binio;
use crate::error::{Error, Result};
use crate::features::FeatureSet;

pub const KNN_MAGIC: &[u8; 8] = b"TEMIKNN0";
pub const KNN_VERSION: u32 = 1;

/// Rows with a norm below this are treated as having this norm.
const MIN_NORM: f64 = 1e-12;

/// The `k` most cosine-similar examples of every example, most similar first.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborTable {
    idx: Array2<usize>,
    sim: Array2<f32>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct KnnOptions {
    /// Allow an example to be its own neighbor.
    pub include_self: bool,
}

impl NeighborTable {
    pub fn new(idx: Array2<usize>, sim: Array2<f32>) -> Result<Self> {
        if idx.dim() != sim.dim() {
            return Err(Error::invalid("index and similarity tables differ in shape"));
        }
        let n = idx.nrows();
        if idx.ncols() == 0 {
            return Err(Error::invalid("neighbor table with k = 0"));
        }
        if let Some(&bad) = idx.iter().find(|&&j| j >= n) {
            return Err(Error::invalid(format!("neighbor index {bad} out of range for n = {n}")));
        }
        for (i, row) in sim.rows().into_iter().enumerate() {
            if row.iter().any(|s| !(-1.0..=1.0).contains(s)) {
                return Err(Error::invalid(format!("row {i}: similarity outside [-1, 1]")));
            }
            if row.windows(2).into_iter().any(|w| w[0] < w[1]) {
                return Err(Error::invalid(format!("row {i}: similarities not sorted")));
            }
        }
        Ok(Self { idx, sim })
    }

    pub fn n(&self) -> usize {
        self.idx.nrows()
    }

    pub fn k(&self) -> usize {
        self.idx.ncols()
    }

    pub fn indices(&self) -> &Array2<usize> {
        &self.idx
    }

    pub fn similarities(&self) -> &Array2<f32> {
        &self.sim
    }

    pub fn neighbors(&self, i: usize) -> ArrayView1<'_, usize> {
        self.idx.row(i)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        binio::expect_magic(r, KNN_MAGIC)?;
        binio::expect_version(r, KNN_VERSION)?;
        let n = binio::to_usize(binio::read_u64(r)?, "row count")?;
        let k = binio::read_u32(r)? as usize;
        let total = n.checked_mul(k).ok_or_else(|| Error::format("header dimensions overflow"))?;
        let mut idx = Vec::with_capacity(total.min(1 << 24));
        for _ in 0..total {
            let j = binio::read_i64(r)?;
            let j = usize::try_from(j).map_err(|_| Error::invalid(format!("negative neighbor index {j}")))?;
            idx.push(j);
        }
        let mut sim = Vec::with_capacity(total.min(1 << 24));
        for _ in 0..total {
            sim.push(binio::read_f32(r)?);
        }
        binio::expect_eof(r)?;
        let shape_err = |e: ndarray::ShapeError| Error::format(e.to_string());
        Self::new(
            Array2::from_shape_vec((n, k), idx).map_err(shape_err)?,
            Array2::from_shape_vec((n, k), sim).map_err(shape_err)?,
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(KNN_MAGIC)?;
        binio::write_u32(w, KNN_VERSION)?;
        binio::write_u64(w, self.n() as u64)?;
        binio::write_u32(w, self.k() as u32)?;
        for &j in &self.idx {
            binio::write_i64(w, j as i64)?;
        }
        for &s in &self.sim {
            binio::write_f32(w, s)?;
        }
        Ok(())
    }
}

/// Orders candidates by descending similarity, then ascending index.
fn rank(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// Unit-normalizes every row; near-zero rows are scaled by `1 / MIN_NORM`.
pub(crate) fn normalize_rows(data: &Array2<f64>) -> Array2<f64> {
    let mut out = data.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let norm = row.dot(&row).sqrt().max(MIN_NORM);
        row.mapv_inplace(|v| v / norm);
    }
    out
}

/// Mines the exact top-`k` cosine neighbors of every row, excluding the row
/// itself.
pub fn mine_knn(fs: &FeatureSet, k: usize) -> Result<NeighborTable> {
    mine_knn_with(fs, k, KnnOptions::default())
}

pub fn mine_knn_with(fs: &FeatureSet, k: usize, opts: KnnOptions) -> Result<NeighborTable> {
    let n = fs.n();
    let max_k = if opts.include_self { n } else { n - 1 };
    if k < 1 || k > max_k {
        return Err(Error::arg(format!("k = {k} outside [1, {max_k}] for n = {n}")));
    }
    let unit = normalize_rows(fs.data());
    let rows: Vec<(Vec<usize>, Vec<f32>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let query = unit.row(i);
            let mut cands: Vec<(f64, usize)> = unit
                .rows()
                .into_iter()
                .enumerate()
                .filter(|&(j, _)| opts.include_self || j != i)
                .map(|(j, row)| (query.dot(&row).clamp(-1.0, 1.0), j))
                .collect();
            if k < cands.len() {
                cands.select_nth_unstable_by(k - 1, rank);
                cands.truncate(k);
            }
            cands.sort_unstable_by(rank);
            cands.into_iter().map(|(s, j)| (j, s as f32)).unzip()
        })
        .collect();
    let mut idx = Array2::zeros((n, k));
    let mut sim = Array2::zeros((n, k));
    for (i, (ri, rs)) in rows.into_iter().enumerate() {
        idx.row_mut(i).assign(&ArrayView1::from(&ri));
        sim.row_mut(i).assign(&ArrayView1::from(&rs));
    }
    Ok(NeighborTable { idx, sim })
}

/// Fraction of `(x, neighbor)` entries whose labels agree.
pub fn true_positive_rate(nt: &NeighborTable, labels: &[usize]) -> Result<f64> {
    if labels.len() != nt.n() {
        return Err(Error::arg(format!("{} labels for a table of {} rows", labels.len(), nt.n())));
    }
    let hits = nt
        .idx
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, row)| row.iter().filter(|&&j| labels[j] == labels[i]).count())
        .sum::<usize>();
    Ok(hits as f64 / (nt.n() * nt.k()) as f64)
}
