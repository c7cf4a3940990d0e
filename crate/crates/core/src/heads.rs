//! Clustering heads: a three-layer feed-forward network `D -> h1 -> h2 -> C`
//! with GELU hidden activations, its reverse pass, AdamW, and the teacher
//! EMA that ties each student to its teacher.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::binio;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_for, stream};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TEMICKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Layer widths of a head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Arch {
    pub input: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub classes: usize,
}

impl Arch {
    pub fn new(input: usize, hidden1: usize, hidden2: usize, classes: usize) -> Result<Self> {
        let arch = Self { input, hidden1, hidden2, classes };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input == 0 || self.hidden1 == 0 || self.hidden2 == 0 {
            return Err(Error::arg(format!("layer widths must be positive: {self:?}")));
        }
        if self.classes < 2 {
            return Err(Error::arg("a head needs at least 2 classes"));
        }
        Ok(())
    }

    fn shapes(&self) -> [(usize, usize); 3] {
        [
            (self.input, self.hidden1),
            (self.hidden1, self.hidden2),
            (self.hidden2, self.classes),
        ]
    }

    pub fn num_params(&self) -> usize {
        self.shapes().iter().map(|(i, o)| i * o + o).sum()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// GELU, tanh approximation.
// libm's tanh dominated training time; this form costs one exp and is
// accurate to a few ulps in absolute terms.
#[inline]
fn tanh(y: f64) -> f64 {
    1.0 - 2.0 / ((2.0 * y).exp() + 1.0)
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + tanh(GELU_C * (x + GELU_A * x * x * x)))
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = tanh(GELU_C * (x + GELU_A * x * x * x));
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Row-wise `softmax(logits / tau)` with max subtraction.
pub fn softmax_rows(logits: ArrayView2<'_, f64>, tau: f64) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        softmax_in_place(row.as_slice_mut().expect("owned rows are contiguous"), tau);
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64], tau: f64) {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = ((*v - max) / tau).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Weights and biases of one head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub w3: Array2<f64>,
    pub b3: Array1<f64>,
}

/// Intermediate activations of a batch forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub pre1: Array2<f64>,
    pub act1: Array2<f64>,
    pub pre2: Array2<f64>,
    pub act2: Array2<f64>,
    /// Raw head outputs, before temperature scaling.
    pub logits: Array2<f64>,
}

impl HeadParams {
    pub fn zeros(arch: Arch) -> Self {
        let [(d, h1), (_, h2), (_, c)] = arch.shapes();
        Self {
            w1: Array2::zeros((d, h1)),
            b1: Array1::zeros(h1),
            w2: Array2::zeros((h1, h2)),
            b2: Array1::zeros(h2),
            w3: Array2::zeros((h2, c)),
            b3: Array1::zeros(c),
        }
    }

    /// Weights from a normal with std `1/sqrt(fan_in)` truncated at two
    /// standard deviations; zero biases.
    pub fn init<R: Rng>(arch: Arch, rng: &mut R) -> Self {
        let mut p = Self::zeros(arch);
        for w in [&mut p.w1, &mut p.w2, &mut p.w3] {
            let std = 1.0 / (w.nrows() as f64).sqrt();
            w.mapv_inplace(|_| loop {
                let z: f64 = rng.sample(StandardNormal);
                if z.abs() <= 2.0 {
                    break z * std;
                }
            });
        }
        p
    }

    pub fn arch(&self) -> Arch {
        Arch {
            input: self.w1.nrows(),
            hidden1: self.w1.ncols(),
            hidden2: self.w2.ncols(),
            classes: self.w3.ncols(),
        }
    }

    /// Parameter tensors as flat slices, in the order w1, b1, w2, b2, w3, b3.
    pub fn tensors(&self) -> [&[f64]; 6] {
        [
            self.w1.as_slice().expect("standard layout"),
            self.b1.as_slice().expect("standard layout"),
            self.w2.as_slice().expect("standard layout"),
            self.b2.as_slice().expect("standard layout"),
            self.w3.as_slice().expect("standard layout"),
            self.b3.as_slice().expect("standard layout"),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.w2.as_slice_mut().expect("standard layout"),
            self.b2.as_slice_mut().expect("standard layout"),
            self.w3.as_slice_mut().expect("standard layout"),
            self.b3.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> + '_ {
        self.tensors().into_iter().flatten()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.tensors_mut().into_iter().flatten()
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<ForwardCache> {
        if x.ncols() != self.w1.nrows() {
            return Err(Error::arg(format!(
                "input width {} does not match head input {}",
                x.ncols(),
                self.w1.nrows()
            )));
        }
        let pre1 = x.dot(&self.w1) + &self.b1;
        let act1 = pre1.mapv(gelu);
        let pre2 = act1.dot(&self.w2) + &self.b2;
        let act2 = pre2.mapv(gelu);
        let logits = act2.dot(&self.w3) + &self.b3;
        Ok(ForwardCache { pre1, act1, pre2, act2, logits })
    }

    /// Class probabilities `softmax(h(x) / tau)` for a batch.
    pub fn probs_batch(&self, x: ArrayView2<'_, f64>, tau: f64) -> Result<Array2<f64>> {
        Ok(softmax_rows(self.forward_batch(x)?.logits.view(), tau))
    }

    /// Class probabilities for one input vector.
    pub fn forward(&self, x: ArrayView1<'_, f64>, tau: f64) -> Result<Array1<f64>> {
        if !(tau > 0.0) {
            return Err(Error::arg(format!("temperature must be positive, got {tau}")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite input to head".into()));
        }
        let probs = self.probs_batch(x.insert_axis(Axis(0)), tau)?;
        Ok(probs.row(0).to_owned())
    }

    /// Reverse pass. `grad_logits[b, c]` is the derivative of the loss with
    /// respect to the raw output `h(x_b)_c`; contributions of all rows are
    /// summed.
    pub fn backward(
        &self,
        x: ArrayView2<'_, f64>,
        cache: &ForwardCache,
        grad_logits: ArrayView2<'_, f64>,
    ) -> Result<HeadParams> {
        if grad_logits.dim() != cache.logits.dim() || x.nrows() != cache.logits.nrows() {
            return Err(Error::arg(format!(
                "gradient shape {:?} does not match batch output {:?}",
                grad_logits.dim(),
                cache.logits.dim()
            )));
        }
        let w3 = cache.act2.t().dot(&grad_logits);
        let b3 = grad_logits.sum_axis(Axis(0));
        let mut d2 = grad_logits.dot(&self.w3.t());
        d2.zip_mut_with(&cache.pre2, |g, &z| *g *= gelu_grad(z));
        let w2 = cache.act1.t().dot(&d2);
        let b2 = d2.sum_axis(Axis(0));
        let mut d1 = d2.dot(&self.w2.t());
        d1.zip_mut_with(&cache.pre1, |g, &z| *g *= gelu_grad(z));
        let w1 = x.t().dot(&d1);
        let b1 = d1.sum_axis(Axis(0));
        let std = |a: Array2<f64>| a.as_standard_layout().into_owned();
        Ok(HeadParams {
            w1: std(w1),
            b1,
            w2: std(w2),
            b2,
            w3: std(w3),
            b3,
        })
    }
}

/// AdamW with bias correction and decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: HeadParams,
    v: HeadParams,
}

impl AdamW {
    pub fn new(arch: Arch, lr: f64, weight_decay: f64) -> Self {
        Self::with_betas(arch, lr, weight_decay, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(arch: Arch, lr: f64, weight_decay: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            weight_decay,
            beta1,
            beta2,
            eps,
            step: 0,
            m: HeadParams::zeros(arch),
            v: HeadParams::zeros(arch),
        }
    }

    pub fn moments(&self) -> (&HeadParams, &HeadParams) {
        (&self.m, &self.v)
    }

    pub fn step(&mut self, params: &mut HeadParams, grads: &HeadParams) {
        self.step_with_lr(params, grads, self.lr);
    }

    /// One update using `lr` in place of the configured rate (for schedules).
    pub fn step_with_lr(&mut self, params: &mut HeadParams, grads: &HeadParams, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let decay = 1.0 - lr * self.weight_decay;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *p *= decay;
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// A student head and its EMA teacher.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadPair {
    pub student: HeadParams,
    pub teacher: HeadParams,
}

/// `H` student/teacher pairs sharing an architecture and temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadEnsemble {
    pub arch: Arch,
    pub tau: f64,
    pub heads: Vec<HeadPair>,
}

/// Moves `teacher` toward `student`: `t <- m t + (1 - m) s`, elementwise.
pub fn ema_update(teacher: &mut HeadParams, student: &HeadParams, momentum: f64) {
    let alpha = 1.0 - momentum;
    for (t, &s) in teacher.iter_mut().zip(student.iter()) {
        // Written as t + a (s - t) so the result never leaves [t, s].
        *t += alpha * (s - *t);
    }
}

impl HeadEnsemble {
    /// Initializes `num_heads` heads; head `i` draws from a seed derived from
    /// `(seed, i)` and its teacher starts as a copy of the student.
    pub fn init(arch: Arch, num_heads: usize, tau: f64, seed: u64) -> Result<Self> {
        arch.validate()?;
        if num_heads == 0 {
            return Err(Error::arg("at least one head is required"));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::arg(format!("temperature must be positive, got {tau}")));
        }
        let base = derive_seed(seed, stream::HEAD_INIT);
        let heads = (0..num_heads)
            .map(|i| {
                let student = HeadParams::init(arch, &mut rng_for(base, i as u64));
                HeadPair { teacher: student.clone(), student }
            })
            .collect();
        Ok(Self { arch, tau, heads })
    }

    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    pub fn teacher_ema_update(&mut self, momentum: f64) -> Result<()> {
        if !(momentum > 0.0 && momentum < 1.0) {
            return Err(Error::arg(format!("teacher momentum must lie in (0, 1), got {momentum}")));
        }
        self.heads
            .par_iter_mut()
            .for_each(|h| ema_update(&mut h.teacher, &h.student, momentum));
        Ok(())
    }

    /// Teacher probabilities of head `head` over all rows, computed in chunks.
    pub fn teacher_probs(&self, head: usize, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let pair = self
            .heads
            .get(head)
            .ok_or_else(|| Error::arg(format!("head {head} out of range for {} heads", self.num_heads())))?;
        let mut out = Array2::zeros((x.nrows(), self.arch.classes));
        const CHUNK: usize = 1024;
        for (xs, mut os) in x
            .axis_chunks_iter(Axis(0), CHUNK)
            .zip(out.axis_chunks_iter_mut(Axis(0), CHUNK))
        {
            os.assign(&pair.teacher.probs_batch(xs, self.tau)?);
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>, optimizers: Option<&[AdamW]>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w, optimizers)?;
        w.flush()?;
        Ok(())
    }

    /// Writes the `TEMICKPT` layout: magic, version `u32`, widths
    /// `(D, h1, h2, C)` as `u32`, `H: u32`, `tau: f64`, then for every head
    /// the student and the teacher tensors as `f32` (w1, b1, w2, b2, w3, b3),
    /// then a `u32` flag and, if set, per head the AdamW hyperparameters
    /// (`f64` x5), step `u64` and the first and second moments as `f32`.
    pub fn write_to<W: Write>(&self, w: &mut W, optimizers: Option<&[AdamW]>) -> Result<()> {
        if let Some(opts) = optimizers {
            if opts.len() != self.num_heads() {
                return Err(Error::arg("one optimizer state per head is required"));
            }
        }
        w.write_all(CHECKPOINT_MAGIC)?;
        binio::write_u32(w, CHECKPOINT_VERSION)?;
        for v in [self.arch.input, self.arch.hidden1, self.arch.hidden2, self.arch.classes] {
            binio::write_u32(w, v as u32)?;
        }
        binio::write_u32(w, self.num_heads() as u32)?;
        binio::write_f64(w, self.tau)?;
        let put = |w: &mut W, p: &HeadParams| binio::write_f32_slice(w, p.iter().map(|&v| v as f32));
        for h in &self.heads {
            put(w, &h.student)?;
            put(w, &h.teacher)?;
        }
        match optimizers {
            None => binio::write_u32(w, 0)?,
            Some(opts) => {
                binio::write_u32(w, 1)?;
                for o in opts {
                    for v in [o.lr, o.weight_decay, o.beta1, o.beta2, o.eps] {
                        binio::write_f64(w, v)?;
                    }
                    binio::write_u64(w, o.step)?;
                    put(w, &o.m)?;
                    put(w, &o.v)?;
                }
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Option<Vec<AdamW>>)> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<(Self, Option<Vec<AdamW>>)> {
        binio::expect_magic(r, CHECKPOINT_MAGIC)?;
        binio::expect_version(r, CHECKPOINT_VERSION)?;
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = binio::read_u32(r)? as usize;
        }
        let arch = Arch::new(dims[0], dims[1], dims[2], dims[3]).map_err(|e| Error::format(e.to_string()))?;
        let num_heads = binio::read_u32(r)? as usize;
        let tau = binio::read_f64(r)?;
        let get = |r: &mut R| -> Result<HeadParams> {
            let mut p = HeadParams::zeros(arch);
            for t in p.tensors_mut() {
                let vals = binio::read_f32_vec(r, t.len())?;
                for (dst, v) in t.iter_mut().zip(vals) {
                    *dst = f64::from(v);
                }
            }
            if !p.is_finite() {
                return Err(Error::invalid("non-finite parameter in checkpoint"));
            }
            Ok(p)
        };
        let mut heads = Vec::with_capacity(num_heads.min(4096));
        for _ in 0..num_heads {
            let student = get(r)?;
            let teacher = get(r)?;
            heads.push(HeadPair { student, teacher });
        }
        let optimizers = match binio::read_u32(r)? {
            0 => None,
            1 => {
                let mut opts = Vec::with_capacity(num_heads.min(4096));
                for _ in 0..num_heads {
                    let mut hp = [0.0; 5];
                    for v in &mut hp {
                        *v = binio::read_f64(r)?;
                    }
                    let mut o = AdamW::with_betas(arch, hp[0], hp[1], hp[2], hp[3], hp[4]);
                    o.step = binio::read_u64(r)?;
                    o.m = get(r)?;
                    o.v = get(r)?;
                    opts.push(o);
                }
                Some(opts)
            }
            other => return Err(Error::format(format!("bad optimizer section flag {other}"))),
        };
        binio::expect_eof(r)?;
        if !(tau > 0.0 && tau.is_finite()) || num_heads == 0 {
            return Err(Error::invalid("checkpoint has no heads or a bad temperature"));
        }
        Ok((Self { arch, tau, heads }, optimizers))
    }
}
