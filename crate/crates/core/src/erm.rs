//! Full-batch empirical risk minimization on generated data mapped through
//! random features.

use faer::linalg::solvers::Solve;
use faer::{Mat, MatRef, Side};
use serde::{Deserialize, Serialize};

use crate::activations::{ActivationKind, McEstimate};
use crate::error::{Error, Result};
use crate::generators::{sample_latent_batch, sample_weights, Generator, Teacher, WeightLaw};
use crate::moments::{estimate_moments, EstimateOptions, MomentSet, MomentSource};
use crate::replica::{sigmoid, softplus};
use crate::rng;

const BATCH: usize = 1024;

/// `x ↦ σ(F x) / √Ñ`.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    /// `Ñ x N`.
    pub f: Mat<f64>,
    pub kind: ActivationKind,
}

impl FeatureMap {
    pub fn new(f: Mat<f64>, kind: ActivationKind) -> Self {
        FeatureMap { f, kind }
    }

    /// Gaussian `F` with unit-norm rows, from stream `(seed, "weights", 0)`.
    pub fn random(n_tilde: usize, n: usize, kind: ActivationKind, seed: u64) -> Self {
        let scale = 1.0 / (n.max(1) as f64).sqrt();
        let f = sample_weights(WeightLaw::IidGaussian { scale }, true, n_tilde, n, seed);
        FeatureMap { f, kind }
    }

    pub fn n_tilde(&self) -> usize {
        self.f.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.f.ncols()
    }

    /// Maps an `N x B` batch to `Ñ x B` features.
    pub fn apply_batch(&self, x: MatRef<'_, f64>) -> Result<Mat<f64>> {
        if x.nrows() != self.input_dim() {
            return Err(Error::Dimension { context: "feature map input", expected: self.input_dim(), got: x.nrows() });
        }
        let s = 1.0 / (self.n_tilde() as f64).sqrt();
        let mut z = &self.f * x;
        for j in 0..z.ncols() {
            for v in z.col_mut(j).iter_mut() {
                *v = self.kind.eval(*v) * s;
            }
        }
        Ok(z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: u64,
    pub latent_dim: usize,
    pub input_dim: usize,
    pub feature_dim: usize,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    /// `T x Ñ`, one sample per row.
    pub xf: Mat<f64>,
    pub y: Vec<f64>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.xf.ncols()
    }
}

fn check_chain(gen: &Generator<f64>, teacher: &Teacher<f64>, fmap: Option<&FeatureMap>) -> Result<()> {
    if teacher.latent_dim() != gen.latent_dim() {
        return Err(Error::Dimension { context: "teacher latent", expected: gen.latent_dim(), got: teacher.latent_dim() });
    }
    if let Some(fm) = fmap {
        if fm.input_dim() != gen.output_dim() {
            return Err(Error::Dimension { context: "feature map input", expected: gen.output_dim(), got: fm.input_dim() });
        }
    }
    Ok(())
}

/// Visits `count` samples in batches: `(first index, features Ñ x B, labels)`.
fn for_each_batch(
    gen: &Generator<f64>,
    teacher: &Teacher<f64>,
    fmap: Option<&FeatureMap>,
    count: usize,
    latent_seed: u64,
    mut f: impl FnMut(usize, Mat<f64>, Vec<f64>) -> Result<()>,
) -> Result<()> {
    check_chain(gen, teacher, fmap)?;
    let mut done = 0;
    while done < count {
        let b = BATCH.min(count - done);
        let c = sample_latent_batch::<f64>(gen.latent_dim(), b, latent_seed, done as u64);
        let x = gen.generate_batch(c.as_ref())?;
        let xf = match fmap {
            Some(fm) => fm.apply_batch(x.as_ref())?,
            None => x,
        };
        f(done, xf, teacher.label_batch(c.as_ref())?)?;
        done += b;
    }
    Ok(())
}

/// `T` i.i.d. samples; latents from stream seed `derive_u64(seed, "train", 0)`.
pub fn build_dataset(
    gen: &Generator<f64>,
    teacher: &Teacher<f64>,
    fmap: Option<&FeatureMap>,
    t: usize,
    seed: u64,
) -> Result<Dataset> {
    let dim = fmap.map_or(gen.output_dim(), |f| f.n_tilde());
    let mut xf = Mat::<f64>::zeros(t, dim);
    let mut y = Vec::with_capacity(t);
    for_each_batch(gen, teacher, fmap, t, rng::derive_u64(seed, "train", 0), |first, b, lab| {
        xf.as_mut().subrows_mut(first, b.ncols()).copy_from(b.transpose());
        y.extend(lab);
        Ok(())
    })?;
    Ok(Dataset {
        xf,
        y,
        meta: DatasetMeta { seed, latent_dim: gen.latent_dim(), input_dim: gen.output_dim(), feature_dim: dim },
    })
}

fn gram_plus(x: MatRef<'_, f64>, lambda: f64) -> Mat<f64> {
    let mut h = x.transpose() * x;
    for i in 0..h.nrows() {
        h[(i, i)] += lambda;
    }
    h
}

fn chol_solve(h: &Mat<f64>, rhs: &Mat<f64>) -> Result<Mat<f64>> {
    let llt = h.llt(Side::Lower).map_err(|e| Error::LinAlg(format!("cholesky failed: {e:?}")))?;
    Ok(llt.solve(rhs))
}

fn col(v: &[f64]) -> Mat<f64> {
    Mat::from_fn(v.len(), 1, |i, _| v[i])
}

fn to_vec(m: &Mat<f64>) -> Vec<f64> {
    (0..m.nrows()).map(|i| m[(i, 0)]).collect()
}

/// Minimizer of `Σ ½(y − x̃·w)² + (λ/2)‖w‖²` from the normal equations.
pub fn ridge_fit(ds: &Dataset, lambda: f64) -> Result<Vec<f64>> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("ridge strength must be positive, got {lambda}")));
    }
    if lambda < 1e-12 {
        return Err(Error::IllConditioned(lambda));
    }
    let x = ds.xf.as_ref();
    let h = gram_plus(x, lambda);
    let b = x.transpose() * col(&ds.y);
    Ok(to_vec(&chol_solve(&h, &b)?))
}

/// Gradient of the ridge objective.
pub fn ridge_gradient(ds: &Dataset, w: &[f64], lambda: f64) -> Vec<f64> {
    let x = ds.xf.as_ref();
    let r = x * col(w);
    let res = Mat::from_fn(ds.len(), 1, |i, _| r[(i, 0)] - ds.y[i]);
    let g = x.transpose() * res;
    (0..w.len()).map(|i| g[(i, 0)] + lambda * w[i]).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        LogisticOptions { tol: 1e-8, max_iter: 100_000 }
    }
}

#[derive(Debug, Clone)]
pub struct LogisticFit {
    pub w: Vec<f64>,
    pub iters: usize,
    pub grad_norm: f64,
    pub converged: bool,
    /// Objective after each accepted step, starting from the initial point.
    pub objective: Vec<f64>,
}

pub fn logistic_objective(ds: &Dataset, w: &[f64], lambda: f64) -> f64 {
    let z = ds.xf.as_ref() * col(w);
    let data: f64 = (0..ds.len()).map(|i| softplus(-ds.y[i] * z[(i, 0)])).sum();
    data + 0.5 * lambda * w.iter().map(|v| v * v).sum::<f64>()
}

pub fn logistic_gradient(ds: &Dataset, w: &[f64], lambda: f64) -> Vec<f64> {
    let x = ds.xf.as_ref();
    let z = x * col(w);
    let r = Mat::from_fn(ds.len(), 1, |i, _| -ds.y[i] * sigmoid(-ds.y[i] * z[(i, 0)]));
    let g = x.transpose() * r;
    (0..w.len()).map(|i| g[(i, 0)] + lambda * w[i]).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Regularized logistic regression from `w = 0`.
pub fn logistic_fit(ds: &Dataset, lambda: f64, opts: &LogisticOptions) -> Result<LogisticFit> {
    logistic_fit_from(ds, lambda, &vec![0.0; ds.dim()], opts)
}

/// Damped Newton with Armijo backtracking.
pub fn logistic_fit_from(ds: &Dataset, lambda: f64, w0: &[f64], opts: &LogisticOptions) -> Result<LogisticFit> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("ridge strength must be positive, got {lambda}")));
    }
    if w0.len() != ds.dim() {
        return Err(Error::Dimension { context: "initial weights", expected: ds.dim(), got: w0.len() });
    }
    if let Some(&bad) = ds.y.iter().find(|&&y| y != 1.0 && y != -1.0) {
        return Err(Error::InvalidArgument(format!("logistic labels must be ±1, found {bad}")));
    }
    let x = ds.xf.as_ref();
    let mut w = w0.to_vec();
    let mut f = logistic_objective(ds, &w, lambda);
    let mut history = vec![f];
    for it in 0..opts.max_iter {
        let g = logistic_gradient(ds, &w, lambda);
        let gn = norm(&g);
        if gn <= opts.tol {
            return Ok(LogisticFit { w, iters: it, grad_norm: gn, converged: true, objective: history });
        }
        let z = x * col(&w);
        let xs = Mat::from_fn(ds.len(), ds.dim(), |i, j| {
            let s = sigmoid(ds.y[i] * z[(i, 0)]);
            x[(i, j)] * (s * (1.0 - s)).sqrt()
        });
        let h = gram_plus(xs.as_ref(), lambda);
        let step = to_vec(&chol_solve(&h, &Mat::from_fn(g.len(), 1, |i, _| -g[i]))?);
        let slope: f64 = g.iter().zip(&step).map(|(a, b)| a * b).sum();
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-20 {
            let trial: Vec<f64> = w.iter().zip(&step).map(|(a, b)| a + t * b).collect();
            let ft = logistic_objective(ds, &trial, lambda);
            if ft <= f + 1e-4 * t * slope {
                if ft <= f {
                    w = trial;
                    f = ft;
                    history.push(f);
                }
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // round-off floor: no representable decrease along the Newton direction
            let gn = norm(&logistic_gradient(ds, &w, lambda));
            return Ok(LogisticFit { w, iters: it + 1, grad_norm: gn, converged: gn <= opts.tol, objective: history });
        }
    }
    let gn = norm(&logistic_gradient(ds, &w, lambda));
    Ok(LogisticFit { w, iters: opts.max_iter, grad_norm: gn, converged: gn <= opts.tol, objective: history })
}

/// Feature-space moments of `x̃√Ñ = σ(F G(c))`: exact for an identity generator
/// with a closed-form activation, Monte Carlo with `n_samples` otherwise.
pub fn feature_moments(gen: &Generator<f64>, fmap: &FeatureMap, n_samples: usize, seed: u64) -> Result<MomentSet> {
    if let Generator::Identity { .. } = gen {
        if fmap.kind != ActivationKind::Tanh {
            return MomentSet::analytic(&Generator::single_layer(fmap.f.clone(), fmap.kind));
        }
    }
    let composed = gen.clone().then(fmap.f.clone(), fmap.kind)?;
    estimate_moments(MomentSource::Generator(&composed), n_samples, seed, EstimateOptions::default())
}

/// `m⋆ = ŵᵀΦw̃/√(ÑD)` and `q⋆ = ŵᵀΩŵ/Ñ` for a single-unit teacher.
pub fn measure_overlaps(w_hat: &[f64], fm: &MomentSet, teacher: &Teacher<f64>) -> Result<(f64, f64)> {
    let (nt, d) = (fm.n(), fm.d());
    if w_hat.len() != nt {
        return Err(Error::Dimension { context: "estimator", expected: nt, got: w_hat.len() });
    }
    if teacher.latent_dim() != d {
        return Err(Error::Dimension { context: "teacher latent", expected: d, got: teacher.latent_dim() });
    }
    if teacher.m() != 1 {
        return Err(Error::Dimension { context: "teacher units", expected: 1, got: teacher.m() });
    }
    let w = col(w_hat);
    let wt = Mat::from_fn(d, 1, |i, _| teacher.w[(0, i)]);
    let pw = &fm.phi * &wt;
    let ow = &fm.omega * &w;
    let m: f64 = (0..nt).map(|i| w_hat[i] * pw[(i, 0)]).sum::<f64>() / ((nt * d) as f64).sqrt();
    let q: f64 = (0..nt).map(|i| w_hat[i] * ow[(i, 0)]).sum::<f64>() / nt as f64;
    Ok((m, q.max(0.0)))
}

/// `½ E[(y − g(x̃·ŵ))²]` on `n_test` fresh samples from stream seed
/// `derive_u64(seed, "test", 0)`.
pub fn generalization_error_mc(
    w_hat: &[f64],
    gen: &Generator<f64>,
    teacher: &Teacher<f64>,
    fmap: Option<&FeatureMap>,
    student_kind: ActivationKind,
    n_test: usize,
    seed: u64,
) -> Result<McEstimate> {
    if n_test < 2 {
        return Err(Error::InvalidArgument(format!("n_test must be at least 2, got {n_test}")));
    }
    let dim = fmap.map_or(gen.output_dim(), |f| f.n_tilde());
    if w_hat.len() != dim {
        return Err(Error::Dimension { context: "estimator", expected: dim, got: w_hat.len() });
    }
    let wrow = Mat::from_fn(1, dim, |_, j| w_hat[j]);
    let (mut sum, mut sum2) = (0.0, 0.0);
    for_each_batch(gen, teacher, fmap, n_test, rng::derive_u64(seed, "test", 0), |_, xf, y| {
        let lam = &wrow * &xf;
        for (j, yj) in y.iter().enumerate() {
            let e = 0.5 * (yj - student_kind.eval(lam[(0, j)])).powi(2);
            sum += e;
            sum2 += e * e;
        }
        Ok(())
    })?;
    let n = n_test as f64;
    let mean = sum / n;
    let var = ((sum2 - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(McEstimate { mean, stderr: (var / n).sqrt() })
}

pub const SWEEP_HEADER: &str = "alpha,seed,Ntilde,lambda,eps_mc,eps_mc_stderr,m_star,q_star,eps_from_overlaps";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErmRow {
    pub alpha: f64,
    pub seed: u64,
    pub n_tilde: usize,
    pub lambda: f64,
    pub eps_mc: f64,
    pub eps_mc_stderr: f64,
    pub m_star: f64,
    pub q_star: f64,
    pub eps_from_overlaps: f64,
}

pub fn sweep_csv(rows: &[ErmRow]) -> String {
    let mut s = String::from(SWEEP_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.alpha, r.seed, r.n_tilde, r.lambda, r.eps_mc, r.eps_mc_stderr, r.m_star, r.q_star, r.eps_from_overlaps
        ));
    }
    s
}
