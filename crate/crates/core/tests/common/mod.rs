#![allow(dead_code)]

use driftlens::synth::DomainSpec;
use driftlens::tensorio::{ActivationSet, LayerActivations};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn gaussian(seed: u64, n: usize, p: usize) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal))
}

fn gram(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    let n = x.nrows();
    (0..n)
        .map(|i| (0..n).map(|j| (0..x.ncols()).map(|f| x[(i, f)] * x[(j, f)]).sum()).collect())
        .collect()
}

fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    (0..n)
        .map(|i| (0..n).map(|j| (0..n).map(|k| a[i][k] * b[k][j]).sum()).collect())
        .collect()
}

/// `tr(K H L H) / (n-1)^2` with an explicit centering matrix `H = I - 11'/n`.
pub fn hsic_biased_hkh(x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    let n = x.nrows();
    let h: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| f64::from(u8::from(i == j)) - 1.0 / n as f64).collect())
        .collect();
    let khlh = matmul(&matmul(&matmul(&gram(x), &h), &gram(y)), &h);
    (0..n).map(|i| khlh[i][i]).sum::<f64>() / ((n - 1) * (n - 1)) as f64
}

/// Unbiased HSIC as a U-statistic over ordered quadruples of distinct indices.
pub fn hsic_unbiased_quadruples(x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    let n = x.nrows();
    let (k, l) = (gram(x), gram(y));
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            for q in (0..n).filter(|&q| q != i && q != j) {
                for r in (0..n).filter(|&r| r != i && r != j && r != q) {
                    total += k[i][j] * l[i][j] + k[i][j] * l[q][r] - 2.0 * k[i][j] * l[i][q];
                    count += 1;
                }
            }
        }
    }
    total / count as f64
}

pub fn cka_from(h: impl Fn(&DMatrix<f64>, &DMatrix<f64>) -> f64, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Option<f64> {
    let (xx, yy) = (h(x, x), h(y, y));
    if xx < 1e-12 || yy < 1e-12 {
        return None;
    }
    Some(h(x, y) / (xx * yy).sqrt())
}

pub fn layer(name: &str, m: &DMatrix<f64>) -> LayerActivations {
    let data: Vec<f64> = (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)])).collect();
    LayerActivations::from_f64(name, m.nrows(), m.ncols(), &data).unwrap()
}

pub fn as_matrix(l: &LayerActivations) -> DMatrix<f64> {
    DMatrix::from_fn(l.rows(), l.cols(), |i, j| l.row(i)[j] as f64)
}

pub fn gaussian_set(model: &str, seed: u64, n: usize, widths: &[usize]) -> ActivationSet {
    let layers = widths
        .iter()
        .enumerate()
        .map(|(i, &w)| layer(&format!("layer{}", i + 1), &gaussian(seed * 31 + i as u64, n, w)))
        .collect();
    ActivationSet::new(model, "data", layers).unwrap()
}

pub fn domain(id: &str, hr_mean: f64, noise: f64, subjects: usize, seed: u64) -> DomainSpec {
    DomainSpec {
        domain_id: id.into(),
        subjects,
        clip_seconds: 20.0,
        fps: 30.0,
        hr_mean,
        hr_stddev: 5.0,
        noise_level: noise,
        illumination_offset: 0.0,
        feature_dim: 8,
        seed,
    }
}
