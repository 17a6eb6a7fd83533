//! Test-side oracles, kept independent of the library's own quadrature and linear algebra.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Gauss–Legendre nodes and weights on `[a, b]` by Newton iteration on `P_n`.
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((mid + half * x, half * w));
    }
    out
}

/// `E f(u)` for `u ~ N(0,1)`, integrating each half-line separately on `[0, 12]` with
/// `nodes` points so that kinks at the origin cost nothing.
pub fn normal_expect(nodes: usize, f: impl Fn(f64) -> f64) -> f64 {
    let rule = gauss_legendre(nodes, 0.0, 12.0);
    let c = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    rule.iter()
        .map(|&(u, w)| w * c * (-0.5 * u * u).exp() * (f(u) + f(-u)))
        .sum()
}

pub fn gaussian_vec(r: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.sample(StandardNormal)).collect()
}

/// Random `d x d` covariance `B Bᵀ / d` with a random diagonal scale, row-major.
pub fn random_psd(r: &mut impl Rng, d: usize) -> Vec<f64> {
    let b = gaussian_vec(r, d * d);
    let s: Vec<f64> = (0..d).map(|_| r.random_range(0.3..2.0)).collect();
    let mut c = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            let v: f64 = (0..d).map(|k| b[i * d + k] * b[j * d + k]).sum::<f64>() / d as f64;
            c[i * d + j] = s[i] * s[j] * v;
        }
    }
    c
}

pub fn to_array<const D: usize>(c: &[f64]) -> [[f64; D]; D] {
    let mut a = [[0.0; D]; D];
    for i in 0..D {
        for j in 0..D {
            a[i][j] = c[i * D + j];
        }
    }
    a
}

pub fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Dense Gaussian elimination with partial pivoting, returning `A⁻¹` (row-major).
pub fn dense_inverse(a: &[f64], n: usize) -> Vec<f64> {
    let mut m = a.to_vec();
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        inv[i * n + i] = 1.0;
    }
    for col in 0..n {
        let p = (col..n)
            .max_by(|&i, &j| m[i * n + col].abs().total_cmp(&m[j * n + col].abs()))
            .unwrap();
        for k in 0..n {
            m.swap(col * n + k, p * n + k);
            inv.swap(col * n + k, p * n + k);
        }
        let d = m[col * n + col];
        for k in 0..n {
            m[col * n + k] /= d;
            inv[col * n + k] /= d;
        }
        for i in 0..n {
            if i != col {
                let f = m[i * n + col];
                if f != 0.0 {
                    for k in 0..n {
                        m[i * n + k] -= f * m[col * n + k];
                        inv[i * n + k] -= f * inv[col * n + k];
                    }
                }
            }
        }
    }
    inv
}
