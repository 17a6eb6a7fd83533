//! Latent sampling, layered generators and two-layer teachers.

use faer::{Mat, MatRef};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::activations::ActivationKind;
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;

/// Law of a random weight matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightLaw {
    /// Entries `scale · Z`.
    IidGaussian { scale: f64 },
    /// Entries `(μ + √(1-μ²) Z) / √cols`.
    ShiftedIid { mu: f64 },
}

/// Draws a `rows x cols` matrix. Entries are generated in row-major order from the
/// stream `(seed, "weights", 0)`, in double precision, then rounded to `T`.
pub fn sample_weights<T: Scalar>(
    law: WeightLaw,
    normalize_rows: bool,
    rows: usize,
    cols: usize,
    seed: u64,
) -> Mat<T> {
    let mut r = rng::stream(seed, "weights", 0);
    let mut data = vec![0.0f64; rows * cols];
    let (shift, mult) = match law {
        WeightLaw::IidGaussian { scale } => (0.0, scale),
        WeightLaw::ShiftedIid { mu } => {
            let s = (cols as f64).sqrt();
            (mu / s, (1.0 - mu * mu).max(0.0).sqrt() / s)
        }
    };
    for v in data.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut r);
        *v = shift + mult * z;
    }
    if normalize_rows {
        for row in data.chunks_mut(cols.max(1)) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
    }
    Mat::from_fn(rows, cols, |i, j| T::of(data[i * cols + j]))
}

/// `d` i.i.d. standard normal entries from stream `(seed, "latent", index)`.
pub fn sample_latent_indexed<T: Scalar>(d: usize, seed: u64, index: u64) -> Vec<T> {
    let mut r = rng::stream(seed, "latent", index);
    (0..d)
        .map(|_| T::of(StandardNormal.sample(&mut r)))
        .collect()
}

pub fn sample_latent<T: Scalar>(d: usize, seed: u64) -> Vec<T> {
    sample_latent_indexed(d, seed, 0)
}

/// Latent batch as a `d x count` matrix whose column `j` is
/// `sample_latent_indexed(d, seed, first + j)`.
pub fn sample_latent_batch<T: Scalar>(d: usize, count: usize, seed: u64, first: u64) -> Mat<T> {
    let mut m = Mat::<T>::zeros(d, count);
    for j in 0..count {
        let mut r = rng::stream(seed, "latent", first + j as u64);
        for i in 0..d {
            m[(i, j)] = T::of(StandardNormal.sample(&mut r));
        }
    }
    m
}

/// Deterministic map from latent `c ∈ R^D` to input `x ∈ R^N`.
#[derive(Debug, Clone)]
pub enum Generator<T: Scalar> {
    Identity {
        d: usize,
    },
    SingleLayer {
        a: Mat<T>,
        kind: ActivationKind,
    },
    /// Layers applied left to right; each matrix is `out x in`.
    MultiLayer {
        layers: Vec<(Mat<T>, ActivationKind)>,
    },
    /// `x = sign(A1⁻¹ sign(A1 c))`.
    InversePair {
        a1: Mat<T>,
        a1_inv: Mat<T>,
        cond: f64,
    },
}

pub const MAX_CONDITION: f64 = 1e12;

impl<T: Scalar> Generator<T> {
    pub fn identity(d: usize) -> Self {
        Generator::Identity { d }
    }

    pub fn single_layer(a: Mat<T>, kind: ActivationKind) -> Self {
        Generator::SingleLayer { a, kind }
    }

    pub fn multi_layer(layers: Vec<(Mat<T>, ActivationKind)>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("multi-layer generator needs a layer".into()));
        }
        for w in layers.windows(2) {
            if w[0].0.nrows() != w[1].0.ncols() {
                return Err(Error::Dimension {
                    context: "generator layer chain",
                    expected: w[0].0.nrows(),
                    got: w[1].0.ncols(),
                });
            }
        }
        Ok(Generator::MultiLayer { layers })
    }

    pub fn inverse_pair(a1: Mat<T>) -> Result<Self> {
        let n = a1.nrows();
        if a1.ncols() != n {
            return Err(Error::Dimension {
                context: "inverse-pair generator (square A1)",
                expected: n,
                got: a1.ncols(),
            });
        }
        let sv = a1
            .singular_values()
            .map_err(|e| Error::LinAlg(format!("{e:?}")))?;
        let smax = sv.first().map(|v| v.to_f64_lossy()).unwrap_or(0.0);
        let smin = sv.last().map(|v| v.to_f64_lossy()).unwrap_or(0.0);
        let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        if cond > MAX_CONDITION {
            return Err(Error::IllConditioned(cond));
        }
        use faer::linalg::solvers::DenseSolveCore;
        let a1_inv = a1.partial_piv_lu().inverse();
        Ok(Generator::InversePair { a1, a1_inv, cond })
    }

    pub fn latent_dim(&self) -> usize {
        match self {
            Generator::Identity { d } => *d,
            Generator::SingleLayer { a, .. } => a.ncols(),
            Generator::MultiLayer { layers } => layers[0].0.ncols(),
            Generator::InversePair { a1, .. } => a1.ncols(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Generator::Identity { d } => *d,
            Generator::SingleLayer { a, .. } => a.nrows(),
            Generator::MultiLayer { layers } => layers.last().unwrap().0.nrows(),
            Generator::InversePair { a1, .. } => a1.nrows(),
        }
    }

    /// Appends one more layer.
    pub fn then(self, m: Mat<T>, kind: ActivationKind) -> Result<Self> {
        if m.ncols() != self.output_dim() {
            return Err(Error::Dimension {
                context: "appended layer",
                expected: self.output_dim(),
                got: m.ncols(),
            });
        }
        Ok(match self {
            Generator::Identity { .. } => Generator::SingleLayer { a: m, kind },
            Generator::SingleLayer { a, kind: k0 } => {
                Generator::MultiLayer { layers: vec![(a, k0), (m, kind)] }
            }
            Generator::MultiLayer { mut layers } => {
                layers.push((m, kind));
                Generator::MultiLayer { layers }
            }
            Generator::InversePair { a1, a1_inv, .. } => Generator::MultiLayer {
                layers: vec![
                    (a1, ActivationKind::Sign),
                    (a1_inv, ActivationKind::Sign),
                    (m, kind),
                ],
            },
        })
    }

    pub fn generate(&self, c: &[T]) -> Result<Vec<T>> {
        let d = self.latent_dim();
        if c.len() != d {
            return Err(Error::Dimension {
                context: "generate latent",
                expected: d,
                got: c.len(),
            });
        }
        let cm = Mat::from_fn(d, 1, |i, _| c[i]);
        let x = self.generate_batch(cm.as_ref())?;
        Ok((0..x.nrows()).map(|i| x[(i, 0)]).collect())
    }

    /// Maps the columns of a `D x B` latent batch to an `N x B` input batch.
    pub fn generate_batch(&self, c: MatRef<'_, T>) -> Result<Mat<T>> {
        let d = self.latent_dim();
        if c.nrows() != d {
            return Err(Error::Dimension {
                context: "generate_batch latent rows",
                expected: d,
                got: c.nrows(),
            });
        }
        Ok(match self {
            Generator::Identity { .. } => c.to_owned(),
            Generator::SingleLayer { a, kind } => apply(a.as_ref(), c, *kind),
            Generator::MultiLayer { layers } => {
                let mut x = apply(layers[0].0.as_ref(), c, layers[0].1);
                for (m, k) in &layers[1..] {
                    x = apply(m.as_ref(), x.as_ref(), *k);
                }
                x
            }
            Generator::InversePair { a1, a1_inv, .. } => {
                let h = apply(a1.as_ref(), c, ActivationKind::Sign);
                apply(a1_inv.as_ref(), h.as_ref(), ActivationKind::Sign)
            }
        })
    }
}

fn apply<T: Scalar>(m: MatRef<'_, T>, c: MatRef<'_, T>, kind: ActivationKind) -> Mat<T> {
    let mut x = m * c;
    if kind != ActivationKind::Linear {
        for j in 0..x.ncols() {
            for v in x.col_mut(j).iter_mut() {
                *v = kind.eval(*v);
            }
        }
    }
    x
}

/// Two-layer labelling network acting on the latent vector:
/// `y = Σ_m ṽ_m g̃(w̃_m · c / √D)`.
#[derive(Debug, Clone)]
pub struct Teacher<T: Scalar> {
    pub w: Mat<T>,
    pub v: Vec<T>,
    pub kind: ActivationKind,
}

impl<T: Scalar> Teacher<T> {
    pub fn new(w: Mat<T>, v: Vec<T>, kind: ActivationKind) -> Result<Self> {
        if v.len() != w.nrows() {
            return Err(Error::Dimension {
                context: "teacher second layer",
                expected: w.nrows(),
                got: v.len(),
            });
        }
        Ok(Teacher { w, v, kind })
    }

    /// Standard normal first layer from stream `(seed, "weights", 0)`, unit second layer.
    pub fn random(m: usize, d: usize, kind: ActivationKind, seed: u64) -> Self {
        let w = sample_weights(WeightLaw::IidGaussian { scale: 1.0 }, false, m, d, seed);
        Teacher { w, v: vec![T::one(); m], kind }
    }

    pub fn m(&self) -> usize {
        self.w.nrows()
    }

    pub fn latent_dim(&self) -> usize {
        self.w.ncols()
    }

    /// `W̃ W̃ᵀ / D`.
    pub fn overlap(&self) -> Mat<T> {
        let d = T::of(self.latent_dim() as f64);
        let mut t = &self.w * self.w.transpose();
        for j in 0..t.ncols() {
            for v in t.col_mut(j).iter_mut() {
                *v /= d;
            }
        }
        crate::linalg::symmetrize(&t)
    }

    /// Teacher local fields `ν = W̃ c / √D` for each column of a `D x B` batch.
    pub fn fields_batch(&self, c: MatRef<'_, T>) -> Result<Mat<T>> {
        if c.nrows() != self.latent_dim() {
            return Err(Error::Dimension {
                context: "teacher latent",
                expected: self.latent_dim(),
                got: c.nrows(),
            });
        }
        let s = T::one() / T::of(self.latent_dim() as f64).sqrt();
        let mut nu = &self.w * c;
        for j in 0..nu.ncols() {
            for v in nu.col_mut(j).iter_mut() {
                *v *= s;
            }
        }
        Ok(nu)
    }

    pub fn output_from_fields(&self, nu: &[T]) -> T {
        nu.iter()
            .zip(&self.v)
            .map(|(&n, &v)| v * self.kind.eval(n))
            .sum()
    }

    pub fn label(&self, c: &[T]) -> Result<T> {
        let cm = Mat::from_fn(c.len(), 1, |i, _| c[i]);
        let nu = self.fields_batch(cm.as_ref())?;
        let nu: Vec<T> = (0..nu.nrows()).map(|i| nu[(i, 0)]).collect();
        Ok(self.output_from_fields(&nu))
    }

    pub fn label_batch(&self, c: MatRef<'_, T>) -> Result<Vec<T>> {
        let nu = self.fields_batch(c)?;
        let mut buf = vec![T::zero(); nu.nrows()];
        Ok((0..nu.ncols())
            .map(|j| {
                for (i, b) in buf.iter_mut().enumerate() {
                    *b = nu[(i, j)];
                }
                self.output_from_fields(&buf)
            })
            .collect())
    }
}
