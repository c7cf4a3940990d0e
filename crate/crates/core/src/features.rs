//! Feature sets: loading, saving, standardization and synthetic generation.
//!
//! On disk a feature set uses the `TEMIFEAT` layout (all little-endian):
//!
//! | field   | type            |
//! |---------|-----------------|
//! | magic   | `b"TEMIFEAT"`   |
//! | version | `u32` = 1       |
//! | n       | `u64`           |
//! | d       | `u32`           |
//! | flags   | `u32`, bit 0 = labels present |
//! | payload | `n*d` `f32`, row-major |
//! | labels  | `n` `i32` (only if flagged) |
//!
//! In memory the matrix is held as `f64`. Saving rounds to `f32`, so a
//! load/save cycle reproduces the file byte for byte, and a save/load cycle
//! is the identity on matrices whose entries are already `f32` values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::binio;
use crate::error::{Error, Result};
use crate::rng::{rng_for, stream};

pub const FEATURE_MAGIC: &[u8; 8] = b"TEMIFEAT";
pub const FEATURE_VERSION: u32 = 1;
const FLAG_LABELS: u32 = 1;

/// Dimensions whose standard deviation falls below this are only centered.
pub const MIN_STD: f64 = 1e-12;

/// An `n x d` matrix of embeddings with optional ground-truth labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    data: Array2<f64>,
    labels: Option<Vec<usize>>,
    /// Free-form provenance, e.g. the source path or generator settings.
    pub meta: String,
}

impl FeatureSet {
    /// Builds a validated feature set.
    pub fn new(data: Array2<f64>, labels: Option<Vec<usize>>, meta: impl Into<String>) -> Result<Self> {
        let (n, d) = data.dim();
        if n < 2 {
            return Err(Error::invalid(format!("feature set needs at least 2 rows, got {n}")));
        }
        if d < 1 {
            return Err(Error::invalid("feature set needs at least 1 column"));
        }
        if let Some((pos, v)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite value {v} at row {}, column {}",
                pos / d,
                pos % d
            )));
        }
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(Error::invalid(format!("{} labels for {n} rows", labels.len())));
            }
            if labels.iter().any(|&l| l > i32::MAX as usize) {
                return Err(Error::invalid("label exceeds i32 range"));
            }
        }
        Ok(Self {
            data: data.as_standard_layout().into_owned(),
            labels,
            meta: meta.into(),
        })
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn d(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Number of ground-truth classes (`max label + 1`), if labeled.
    pub fn num_classes(&self) -> Option<usize> {
        self.labels.as_ref().map(|l| l.iter().copied().max().map_or(0, |m| m + 1))
    }

    pub fn with_labels(mut self, labels: Option<Vec<usize>>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != self.n() {
                return Err(Error::invalid(format!("{} labels for {} rows", l.len(), self.n())));
            }
        }
        self.labels = labels;
        Ok(self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = BufReader::new(File::open(path)?);
        let mut fs = Self::read_from(&mut r)?;
        fs.meta = path.display().to_string();
        Ok(fs)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        binio::expect_magic(r, FEATURE_MAGIC)?;
        binio::expect_version(r, FEATURE_VERSION)?;
        let n = binio::to_usize(binio::read_u64(r)?, "row count")?;
        let d = binio::read_u32(r)? as usize;
        let flags = binio::read_u32(r)?;
        if flags & !FLAG_LABELS != 0 {
            return Err(Error::format(format!("unknown flag bits {flags:#x}")));
        }
        let total = n
            .checked_mul(d)
            .ok_or_else(|| Error::format("header dimensions overflow"))?;
        // Read row by row so a lying header fails on EOF instead of on allocation.
        let mut values = Vec::with_capacity(total.min(1 << 24));
        for _ in 0..n {
            values.extend(binio::read_f32_vec(r, d)?.into_iter().map(f64::from));
        }
        let labels = if flags & FLAG_LABELS != 0 {
            let mut labels = Vec::with_capacity(n.min(1 << 24));
            for i in 0..n {
                let l = binio::read_i32(r)?;
                if l < 0 {
                    return Err(Error::invalid(format!("negative label {l} at row {i}")));
                }
                labels.push(l as usize);
            }
            Some(labels)
        } else {
            None
        };
        binio::expect_eof(r)?;
        let data = Array2::from_shape_vec((n, d), values).map_err(|e| Error::format(e.to_string()))?;
        Self::new(data, labels, String::new())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(FEATURE_MAGIC)?;
        binio::write_u32(w, FEATURE_VERSION)?;
        binio::write_u64(w, self.n() as u64)?;
        let d = u32::try_from(self.d()).map_err(|_| Error::invalid("dimension exceeds u32"))?;
        binio::write_u32(w, d)?;
        binio::write_u32(w, if self.labels.is_some() { FLAG_LABELS } else { 0 })?;
        binio::write_f32_slice(w, self.data.iter().map(|&v| v as f32))?;
        if let Some(labels) = &self.labels {
            for &l in labels {
                binio::write_i32(w, l as i32)?;
            }
        }
        Ok(())
    }

    /// Reads a CSV with header `f0,...,f{d-1}` and an optional trailing
    /// `label` column.
    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        let has_label = headers.iter().last() == Some("label");
        let d = headers.len() - usize::from(has_label);
        for (j, h) in headers.iter().take(d).enumerate() {
            if h != format!("f{j}") {
                return Err(Error::format(format!("expected column header f{j}, found {h:?}")));
            }
        }
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for (row, rec) in reader.records().enumerate() {
            let rec = rec?;
            for j in 0..d {
                let v: f64 = rec[j]
                    .trim()
                    .parse()
                    .map_err(|_| Error::format(format!("row {row}: bad number {:?}", &rec[j])))?;
                values.push(v);
            }
            if has_label {
                let l: usize = rec[d]
                    .trim()
                    .parse()
                    .map_err(|_| Error::format(format!("row {row}: bad label {:?}", &rec[d])))?;
                labels.push(l);
            }
        }
        let n = values.len() / d.max(1);
        let data = Array2::from_shape_vec((n, d), values).map_err(|e| Error::format(e.to_string()))?;
        Self::new(data, has_label.then_some(labels), path.display().to_string())
    }

    /// Per-column z-scoring with population statistics of this set.
    ///
    /// Columns with standard deviation below [`MIN_STD`] are centered only.
    pub fn standardize(&self) -> FeatureSet {
        let n = self.n() as f64;
        let mean = self.data.sum_axis(Axis(0)) / n;
        let mut out = &self.data - &mean;
        let var = out.map(|v| v * v).sum_axis(Axis(0)) / n;
        for (mut col, v) in out.axis_iter_mut(Axis(1)).zip(var.iter()) {
            let std = v.sqrt();
            if std >= MIN_STD {
                col.mapv_inplace(|x| x / std);
            }
        }
        FeatureSet {
            data: out,
            labels: self.labels.clone(),
            meta: self.meta.clone(),
        }
    }
}

/// Settings for a Gaussian-blob surrogate of backbone embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_per_class: usize,
    pub classes: usize,
    pub dim: usize,
    /// Radius of the hypersphere the class centroids are drawn on.
    pub separation: f64,
    /// Isotropic within-class standard deviation.
    pub noise: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::arg("classes must be at least 2"));
        }
        if self.n_per_class < 2 {
            return Err(Error::arg("n_per_class must be at least 2"));
        }
        if self.dim < 1 {
            return Err(Error::arg("dim must be at least 1"));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return Err(Error::arg("separation must be finite and nonnegative"));
        }
        if !(self.noise > 0.0 && self.noise.is_finite()) {
            return Err(Error::arg("noise must be finite and positive"));
        }
        Ok(())
    }
}

/// Draws `classes` centroids uniformly on the sphere of radius `separation`
/// and `n_per_class` isotropic Gaussian samples around each. Rows are
/// grouped by class.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<FeatureSet> {
    cfg.validate()?;
    let mut crng = rng_for(cfg.seed, stream::SYNTH_CENTROIDS);
    let mut centroids = Array2::<f64>::zeros((cfg.classes, cfg.dim));
    for mut row in centroids.rows_mut() {
        loop {
            row.mapv_inplace(|_| crng.sample(StandardNormal));
            let norm = row.dot(&row).sqrt();
            if norm > 1e-12 {
                row.mapv_inplace(|v| v / norm * cfg.separation);
                break;
            }
        }
    }
    let mut nrng = rng_for(cfg.seed, stream::SYNTH_NOISE);
    let n = cfg.classes * cfg.n_per_class;
    let mut data = Array2::<f64>::zeros((n, cfg.dim));
    let mut labels = Vec::with_capacity(n);
    for (i, mut row) in data.rows_mut().into_iter().enumerate() {
        let c = i / cfg.n_per_class;
        labels.push(c);
        for (v, &mu) in row.iter_mut().zip(centroids.row(c)) {
            let z: f64 = nrng.sample(StandardNormal);
            *v = mu + cfg.noise * z;
        }
    }
    FeatureSet::new(
        data,
        Some(labels),
        format!(
            "synthetic classes={} n_per_class={} dim={} separation={} noise={} seed={}",
            cfg.classes, cfg.n_per_class, cfg.dim, cfg.separation, cfg.noise, cfg.seed
        ),
    )
}
