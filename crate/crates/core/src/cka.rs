//! Linear-kernel HSIC estimators, scalar CKA, and layer-by-layer CKA maps.
//!
//! All arithmetic is f64, including for activations stored as f32.
//!
//! The minibatch estimator follows the usual reference accumulation: for
//! every batch the three HSIC terms (xy, xx, yy) are computed, each term is
//! averaged over batches, and only then is the ratio
//! `hsic_xy / sqrt(hsic_xx * hsic_yy)` formed.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensorio::{ActivationSet, LayerActivations};

/// Self-HSIC values below this mark a layer as degenerate (constant).
pub const DEGENERATE_HSIC: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    /// `<HKH, HLH> / (n-1)^2`
    Biased,
    /// Unbiased HSIC_1 estimator on diagonal-free Gram matrices, averaged over minibatches.
    #[default]
    Unbiased,
}

impl Estimator {
    /// Smallest number of samples for which the estimator is defined.
    pub fn min_samples(self) -> usize {
        match self {
            Estimator::Biased => 2,
            Estimator::Unbiased => 4,
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimator::Biased => "biased",
            Estimator::Unbiased => "unbiased",
        })
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "biased" => Ok(Estimator::Biased),
            "unbiased" | "unbiased-minibatch" => Ok(Estimator::Unbiased),
            other => Err(Error::Config(format!(
                "unknown estimator '{other}' (expected biased or unbiased)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CkaConfig {
    pub estimator: Estimator,
    /// Samples per minibatch. `usize::MAX` (or any value >= n) means a single full batch.
    pub batch_size: usize,
}

impl Default for CkaConfig {
    fn default() -> Self {
        Self {
            estimator: Estimator::Unbiased,
            batch_size: 64,
        }
    }
}

impl CkaConfig {
    pub fn full_batch(estimator: Estimator) -> Self {
        Self {
            estimator,
            batch_size: usize::MAX,
        }
    }
}

fn check_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation(format!("{what} has non-finite entries")));
    }
    Ok(())
}

fn check_square_pair(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<usize> {
    if !a.is_square() || !b.is_square() {
        return Err(Error::Size("Gram matrices must be square".into()));
    }
    if a.nrows() != b.nrows() {
        return Err(Error::Size(format!(
            "Gram matrices differ in size: {} vs {}",
            a.nrows(),
            b.nrows()
        )));
    }
    Ok(a.nrows())
}

/// `X Xᵀ` for an n×p sample matrix.
pub fn gram_linear(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.nrows() == 0 {
        return Err(Error::Size("gram_linear needs at least one sample".into()));
    }
    check_finite(x, "input matrix")?;
    let g = x * x.transpose();
    Ok(symmetrize(g))
}

// Matrix products are symmetric only up to rounding; mirror the upper triangle.
fn symmetrize(mut g: DMatrix<f64>) -> DMatrix<f64> {
    let n = g.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            g[(j, i)] = g[(i, j)];
        }
    }
    g
}

/// Double centering `H G H` with `H = I - 11ᵀ/n`.
pub fn center_gram(g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !g.is_square() {
        return Err(Error::Size("center_gram needs a square matrix".into()));
    }
    let n = g.nrows();
    if n < 2 {
        return Err(Error::Size(format!("center_gram needs n >= 2, got {n}")));
    }
    let nf = n as f64;
    let row_means: Vec<f64> = (0..n).map(|i| g.row(i).sum() / nf).collect();
    let col_means: Vec<f64> = (0..n).map(|j| g.column(j).sum() / nf).collect();
    let grand = row_means.iter().sum::<f64>() / nf;
    Ok(DMatrix::from_fn(n, n, |i, j| {
        g[(i, j)] - row_means[i] - col_means[j] + grand
    }))
}

fn frobenius_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Biased HSIC: `<center(Gx), center(Gy)> / (n-1)^2`.
pub fn hsic_biased(gx: &DMatrix<f64>, gy: &DMatrix<f64>) -> Result<f64> {
    let n = check_square_pair(gx, gy)?;
    if n < 2 {
        return Err(Error::Size(format!("hsic_biased needs n >= 2, got {n}")));
    }
    let cx = center_gram(gx)?;
    let cy = center_gram(gy)?;
    let denom = ((n - 1) * (n - 1)) as f64;
    Ok(frobenius_dot(&cx, &cy) / denom)
}

/// Per-batch summary of a diagonal-free Gram matrix used by the unbiased estimator.
struct UnbiasedGram {
    k: DMatrix<f64>,
    row_sums: Vec<f64>,
    total: f64,
}

impl UnbiasedGram {
    fn new(mut k: DMatrix<f64>) -> Self {
        k.fill_diagonal(0.0);
        let row_sums: Vec<f64> = (0..k.nrows()).map(|i| k.row(i).sum()).collect();
        let total = row_sums.iter().sum();
        Self { k, row_sums, total }
    }

    fn hsic(&self, other: &UnbiasedGram) -> f64 {
        let n = self.k.nrows() as f64;
        // tr(K L) for symmetric L is the elementwise inner product.
        let trace = frobenius_dot(&self.k, &other.k);
        let all_sums = self.total * other.total / ((n - 1.0) * (n - 2.0));
        let cross: f64 = self
            .row_sums
            .iter()
            .zip(&other.row_sums)
            .map(|(a, b)| a * b)
            .sum();
        (trace + all_sums - 2.0 * cross / (n - 2.0)) / (n * (n - 3.0))
    }
}

/// Unbiased HSIC estimator. Diagonals of both inputs are treated as zero.
pub fn hsic_unbiased(kx: &DMatrix<f64>, ky: &DMatrix<f64>) -> Result<f64> {
    let n = check_square_pair(kx, ky)?;
    if n < 4 {
        return Err(Error::EstimatorDomain(format!(
            "unbiased HSIC needs n >= 4, got {n}"
        )));
    }
    let a = UnbiasedGram::new(symmetrize(kx.clone()));
    let b = UnbiasedGram::new(symmetrize(ky.clone()));
    Ok(a.hsic(&b))
}

/// A CKA value plus whether either input was degenerate (zero self-HSIC).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CkaValue {
    pub value: f64,
    pub degenerate: bool,
}

fn normalize(xy: f64, xx: f64, yy: f64) -> CkaValue {
    if xx < DEGENERATE_HSIC || yy < DEGENERATE_HSIC {
        return CkaValue {
            value: 0.0,
            degenerate: true,
        };
    }
    CkaValue {
        value: xy / (xx.sqrt() * yy.sqrt()),
        degenerate: false,
    }
}

/// Full-sample CKA between two sample matrices sharing the row count.
pub fn cka_pair(x: &DMatrix<f64>, y: &DMatrix<f64>, estimator: Estimator) -> Result<CkaValue> {
    if x.nrows() != y.nrows() {
        return Err(Error::Size(format!(
            "sample counts differ: {} vs {}",
            x.nrows(),
            y.nrows()
        )));
    }
    let n = x.nrows();
    if n < estimator.min_samples() {
        return Err(Error::EstimatorDomain(format!(
            "{estimator} CKA needs n >= {}, got {n}",
            estimator.min_samples()
        )));
    }
    let gx = gram_linear(x)?;
    let gy = gram_linear(y)?;
    let (xy, xx, yy) = match estimator {
        Estimator::Biased => {
            let cx = center_gram(&gx)?;
            let cy = center_gram(&gy)?;
            (
                frobenius_dot(&cx, &cy),
                frobenius_dot(&cx, &cx),
                frobenius_dot(&cy, &cy),
            )
        }
        Estimator::Unbiased => {
            let a = UnbiasedGram::new(gx);
            let b = UnbiasedGram::new(gy);
            (a.hsic(&b), a.hsic(&a), b.hsic(&b))
        }
    };
    let scale = match estimator {
        Estimator::Biased => 1.0 / ((n - 1) * (n - 1)) as f64,
        Estimator::Unbiased => 1.0,
    };
    Ok(normalize(xy * scale, xx * scale, yy * scale))
}

/// Layer-pair CKA similarities of two activation sets (rows: x layers, columns: y layers).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CkaMap {
    pub x_model_id: String,
    pub y_model_id: String,
    pub x_dataset_id: String,
    pub y_dataset_id: String,
    pub x_layers: Vec<String>,
    pub y_layers: Vec<String>,
    values: Vec<f64>,
    degenerate: Vec<bool>,
    pub estimator: Estimator,
    pub batch_size: usize,
    pub batches: usize,
}

impl CkaMap {
    pub fn rows(&self) -> usize {
        self.x_layers.len()
    }

    pub fn cols(&self) -> usize {
        self.y_layers.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols() + j]
    }

    pub fn is_degenerate(&self, i: usize, j: usize) -> bool {
        self.degenerate[i * self.cols() + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows(), self.cols())
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows().min(self.cols()))
            .map(|i| self.get(i, i))
            .collect()
    }

    pub fn transpose(&self) -> CkaMap {
        let (r, c) = self.dims();
        let mut values = Vec::with_capacity(r * c);
        let mut degenerate = Vec::with_capacity(r * c);
        for j in 0..c {
            for i in 0..r {
                values.push(self.get(i, j));
                degenerate.push(self.is_degenerate(i, j));
            }
        }
        CkaMap {
            x_model_id: self.y_model_id.clone(),
            y_model_id: self.x_model_id.clone(),
            x_dataset_id: self.y_dataset_id.clone(),
            y_dataset_id: self.x_dataset_id.clone(),
            x_layers: self.y_layers.clone(),
            y_layers: self.x_layers.clone(),
            values,
            degenerate,
            estimator: self.estimator,
            batch_size: self.batch_size,
            batches: self.batches,
        }
    }

    /// CSV with the y-layer names as header row and x-layer names as first column.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer");
        for name in &self.y_layers {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (i, name) in self.x_layers.iter().enumerate() {
            out.push_str(name);
            for j in 0..self.cols() {
                out.push_str(&format!(",{}", self.get(i, j)));
            }
            out.push('\n');
        }
        out
    }
}

fn batch_matrix(layer: &LayerActivations, start: usize, end: usize) -> DMatrix<f64> {
    let cols = layer.cols();
    let rows = &layer.data()[start * cols..end * cols];
    DMatrix::from_row_iterator(end - start, cols, rows.iter().map(|&v| v as f64))
}

struct BatchTerms {
    xy: Vec<f64>,
    xx: Vec<f64>,
    yy: Vec<f64>,
}

fn batch_terms(
    ax: &ActivationSet,
    ay: &ActivationSet,
    start: usize,
    end: usize,
    estimator: Estimator,
) -> BatchTerms {
    let grams = |set: &ActivationSet| -> Vec<DMatrix<f64>> {
        set.layers()
            .iter()
            .map(|l| {
                let m = batch_matrix(l, start, end);
                symmetrize(&m * m.transpose())
            })
            .collect()
    };
    let gx = grams(ax);
    // Self-similarity maps share one set of Gram matrices.
    let gy = if std::ptr::eq(ax, ay) { gx.clone() } else { grams(ay) };
    let (lx, ly) = (gx.len(), gy.len());
    let mut xy = Vec::with_capacity(lx * ly);
    match estimator {
        Estimator::Biased => {
            let b = end - start;
            let scale = 1.0 / ((b - 1) * (b - 1)) as f64;
            let cx: Vec<_> = gx.iter().map(|g| center_gram(g).expect("n >= 2")).collect();
            let cy: Vec<_> = gy.iter().map(|g| center_gram(g).expect("n >= 2")).collect();
            for a in &cx {
                for c in &cy {
                    xy.push(frobenius_dot(a, c) * scale);
                }
            }
            BatchTerms {
                xy,
                xx: cx.iter().map(|a| frobenius_dot(a, a) * scale).collect(),
                yy: cy.iter().map(|c| frobenius_dot(c, c) * scale).collect(),
            }
        }
        Estimator::Unbiased => {
            let ux: Vec<_> = gx.into_iter().map(UnbiasedGram::new).collect();
            let uy: Vec<_> = gy.into_iter().map(UnbiasedGram::new).collect();
            for a in &ux {
                for c in &uy {
                    xy.push(a.hsic(c));
                }
            }
            BatchTerms {
                xy,
                xx: ux.iter().map(|a| a.hsic(a)).collect(),
                yy: uy.iter().map(|c| c.hsic(c)).collect(),
            }
        }
    }
}

/// Consecutive `[start, end)` batches; a final batch shorter than `min` is dropped.
pub fn batch_ranges(n: usize, batch_size: usize, min: usize) -> Vec<(usize, usize)> {
    let size = batch_size.min(n).max(1);
    let mut out = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + size).min(n);
        if end - start >= min {
            out.push((start, end));
        }
        start = end;
    }
    out
}

/// CKA between every layer of `ax` and every layer of `ay`. Samples are paired by row index.
pub fn cka_map(ax: &ActivationSet, ay: &ActivationSet, cfg: CkaConfig) -> Result<CkaMap> {
    let n = ax.sample_count();
    if n != ay.sample_count() {
        return Err(Error::Pairing(format!(
            "sample counts differ: {} ({}/{}) vs {} ({}/{})",
            n,
            ax.model_id(),
            ax.dataset_id(),
            ay.sample_count(),
            ay.model_id(),
            ay.dataset_id()
        )));
    }
    let min = cfg.estimator.min_samples();
    if cfg.batch_size < min {
        return Err(Error::EstimatorDomain(format!(
            "batch size {} below the {} estimator minimum of {min}",
            cfg.batch_size, cfg.estimator
        )));
    }
    let ranges = batch_ranges(n, cfg.batch_size, min);
    if ranges.is_empty() {
        return Err(Error::InsufficientSamples(format!(
            "{n} samples leave no batch of at least {min}"
        )));
    }

    let per_batch: Vec<BatchTerms> = ranges
        .par_iter()
        .map(|&(s, e)| batch_terms(ax, ay, s, e, cfg.estimator))
        .collect();

    let (lx, ly) = (ax.layer_count(), ay.layer_count());
    let mut xy = vec![0.0; lx * ly];
    let mut xx = vec![0.0; lx];
    let mut yy = vec![0.0; ly];
    // Fixed summation order, independent of thread scheduling.
    for t in &per_batch {
        for (acc, v) in xy.iter_mut().zip(&t.xy) {
            *acc += v;
        }
        for (acc, v) in xx.iter_mut().zip(&t.xx) {
            *acc += v;
        }
        for (acc, v) in yy.iter_mut().zip(&t.yy) {
            *acc += v;
        }
    }
    let nb = per_batch.len() as f64;
    let mut values = Vec::with_capacity(lx * ly);
    let mut degenerate = Vec::with_capacity(lx * ly);
    for i in 0..lx {
        for j in 0..ly {
            let v = normalize(xy[i * ly + j] / nb, xx[i] / nb, yy[j] / nb);
            values.push(v.value);
            degenerate.push(v.degenerate);
        }
    }

    Ok(CkaMap {
        x_model_id: ax.model_id().to_string(),
        y_model_id: ay.model_id().to_string(),
        x_dataset_id: ax.dataset_id().to_string(),
        y_dataset_id: ay.dataset_id().to_string(),
        x_layers: ax.layer_names(),
        y_layers: ay.layer_names(),
        values,
        degenerate,
        estimator: cfg.estimator,
        batch_size: cfg.batch_size.min(n),
        batches: per_batch.len(),
    })
}
