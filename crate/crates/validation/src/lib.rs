//! Loop-only reference implementations of the CKA estimators and seeded
//! random inputs. Nothing here shares code with `driftlens`.

#![allow(clippy::needless_range_loop)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Samples as rows, features as columns.
pub type Rows = Vec<Vec<f64>>;

/// Self-HSIC below this marks a degenerate CKA cell.
pub const DEGENERATE: f64 = 1e-12;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_rows(rng: &mut impl Rng, n: usize, p: usize) -> Rows {
    (0..n)
        .map(|_| (0..p).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect()
}

/// Linear kernel `K[i][j] = <x_i, x_j>`.
pub fn gram(x: &[Vec<f64>]) -> Rows {
    let n = x.len();
    let mut k = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for f in 0..x[i].len() {
                s += x[i][f] * x[j][f];
            }
            k[i][j] = s;
        }
    }
    k
}

fn double_center(k: &[Vec<f64>]) -> Rows {
    let n = k.len();
    let nf = n as f64;
    let mut row = vec![0.0; n];
    let mut col = vec![0.0; n];
    let mut all = 0.0;
    for i in 0..n {
        for j in 0..n {
            row[i] += k[i][j] / nf;
            col[j] += k[i][j] / nf;
            all += k[i][j] / (nf * nf);
        }
    }
    let mut c = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            c[i][j] = k[i][j] - row[i] - col[j] + all;
        }
    }
    c
}

/// `sum_ij Kc_ij Lc_ij / (n-1)^2` with `Kc`, `Lc` double-centered.
pub fn hsic_biased_brute(x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    let n = x.len();
    let kc = double_center(&gram(x));
    let lc = double_center(&gram(y));
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += kc[i][j] * lc[i][j];
        }
    }
    s / ((n - 1) * (n - 1)) as f64
}

/// Unbiased HSIC evaluated term by term on diagonal-free Gram matrices.
pub fn hsic_unbiased_terms(x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    let n = x.len();
    assert!(n >= 4, "unbiased HSIC needs n >= 4");
    let mut k = gram(x);
    let mut l = gram(y);
    for i in 0..n {
        k[i][i] = 0.0;
        l[i][i] = 0.0;
    }
    let nf = n as f64;

    let mut trace_kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            trace_kl += k[i][j] * l[j][i];
        }
    }

    let mut sum_k = 0.0;
    let mut sum_l = 0.0;
    for i in 0..n {
        for j in 0..n {
            sum_k += k[i][j];
            sum_l += l[i][j];
        }
    }
    let both = sum_k * sum_l / ((nf - 1.0) * (nf - 2.0));

    // 1' K L 1
    let mut cross = 0.0;
    for i in 0..n {
        for j in 0..n {
            for m in 0..n {
                cross += k[i][j] * l[j][m];
            }
        }
    }
    let cross = 2.0 * cross / (nf - 2.0);

    (trace_kl + both - cross) / (nf * (nf - 3.0))
}

/// Reference CKA; `None` when either self-HSIC is below [`DEGENERATE`].
pub fn cka_brute(x: &[Vec<f64>], y: &[Vec<f64>], unbiased: bool) -> Option<f64> {
    let h = |a: &[Vec<f64>], b: &[Vec<f64>]| {
        if unbiased {
            hsic_unbiased_terms(a, b)
        } else {
            hsic_biased_brute(a, b)
        }
    };
    let xx = h(x, x);
    let yy = h(y, y);
    if xx < DEGENERATE || yy < DEGENERATE {
        return None;
    }
    Some(h(x, y) / (xx.sqrt() * yy.sqrt()))
}

/// Random `p x p` orthogonal matrix from Gram-Schmidt on Gaussian columns.
pub fn random_orthogonal(rng: &mut impl Rng, p: usize) -> Rows {
    loop {
        let a = random_rows(rng, p, p);
        let mut q: Vec<Vec<f64>> = Vec::with_capacity(p);
        for col in 0..p {
            let mut v: Vec<f64> = (0..p).map(|r| a[r][col]).collect();
            for u in &q {
                let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                for (vi, ui) in v.iter_mut().zip(u) {
                    *vi -= d * ui;
                }
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm < 1e-8 {
                break;
            }
            q.push(v.into_iter().map(|a| a / norm).collect());
        }
        if q.len() == p {
            // columns of the result are the q vectors
            return (0..p).map(|r| (0..p).map(|c| q[c][r]).collect()).collect();
        }
    }
}

pub fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Rows {
    let inner = b.len();
    let cols = b.first().map_or(0, Vec::len);
    a.iter()
        .map(|row| {
            (0..cols)
                .map(|c| (0..inner).map(|k| row[k] * b[k][c]).sum())
                .collect()
        })
        .collect()
}
