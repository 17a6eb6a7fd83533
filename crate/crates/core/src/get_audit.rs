//! Quantities entering the Gaussian equivalence bound, the deterministic
//! K-matrix spectra, eigenvalue scaling studies and a sliced-cumulant proxy for
//! the distance to Gaussianity.

use faer::{Mat, MatRef};
use log::warn;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::activations::{hermite_coefficients, ActivationKind, HermiteTriple};
use crate::error::{Error, Result};
use crate::generators::{sample_latent_batch, sample_weights, Generator, Teacher, WeightLaw};
use crate::linalg::{
    check_psd, frobenius_norm, spectral_norm, sym_eigen_desc, sym_eigenvalues_desc, sym_sqrt, symmetrize,
};
use crate::rng;
use crate::scalar::Scalar;

/// Relative PSD tolerance for `M1`, `M2` and the K matrices.
pub const PSD_REL_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct EquivalenceMatrices {
    pub rho: Mat<f64>,
    pub rho_tilde: Mat<f64>,
    pub m1: Mat<f64>,
    pub m2: Mat<f64>,
}

#[derive(Debug, Clone)]
pub struct KMatrices {
    pub k11: Mat<f64>,
    pub k12: Mat<f64>,
    pub k21: Mat<f64>,
    pub k22: Mat<f64>,
}

impl KMatrices {
    pub const NAMES: [&'static str; 4] = ["K11", "K12", "K21", "K22"];

    /// `K11 = ρ̃²/√N`, `K12 = K11 ∘ ρ`, `K21 = (ρ̃∘ρ̃)²`, `K22 = K21 ∘ ρ`, with `ρ̃`
    /// the off-diagonal part of `ρ`.
    pub fn from_rho(rho: MatRef<'_, f64>) -> Result<Self> {
        let n = rho.nrows();
        if rho.ncols() != n {
            return Err(Error::Dimension { context: "rho columns", expected: n, got: rho.ncols() });
        }
        let rt = off_diagonal(rho);
        let k11 = symmetrize(&((&rt * &rt) * faer::Scale(1.0 / (n as f64).sqrt())));
        let k12 = hadamard(k11.as_ref(), rho);
        let sq = hadamard(rt.as_ref(), rt.as_ref());
        let k21 = symmetrize(&(&sq * &sq));
        let k22 = hadamard(k21.as_ref(), rho);
        Ok(KMatrices { k11, k12, k21, k22 })
    }

    pub fn get(&self, i: usize) -> &Mat<f64> {
        [&self.k11, &self.k12, &self.k21, &self.k22][i]
    }
}

fn off_diagonal(a: MatRef<'_, f64>) -> Mat<f64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| if i == j { 0.0 } else { a[(i, j)] })
}

fn hadamard(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Mat<f64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * b[(i, j)])
}

fn lin_comb(a: f64, x: &Mat<f64>, b: f64, y: &Mat<f64>) -> Mat<f64> {
    Mat::from_fn(x.nrows(), x.ncols(), |i, j| a * x[(i, j)] + b * y[(i, j)])
}

/// `M1 = σ̂₁² K11 + σ̂₂² K12` and `M2 = σ̂₂² K21 + σ̂₃² K22`.
pub fn combine(k: &KMatrices, h: HermiteTriple) -> (Mat<f64>, Mat<f64>) {
    let m1 = lin_comb(h.h1 * h.h1, &k.k11, h.h2 * h.h2, &k.k12);
    let m2 = lin_comb(h.h2 * h.h2, &k.k21, h.h3 * h.h3, &k.k22);
    (m1, m2)
}

/// Builds `ρ = AAᵀ`, `ρ̃` (zero diagonal) and the matrices `M1`, `M2`.
pub fn build_equivalence_matrices(a: MatRef<'_, f64>, h: HermiteTriple) -> Result<EquivalenceMatrices> {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        let norm: f64 = (0..a.ncols()).map(|j| a[(i, j)] * a[(i, j)]).sum::<f64>().sqrt();
        worst = worst.max((norm - 1.0).abs());
    }
    if worst > 1e-6 {
        warn!("rows of A are not normalized (max deviation {worst:.3e})");
    }
    let rho = symmetrize(&(a * a.transpose()));
    let k = KMatrices::from_rho(rho.as_ref())?;
    let (m1, m2) = combine(&k, h);
    let rho_tilde = off_diagonal(rho.as_ref());
    Ok(EquivalenceMatrices { rho, rho_tilde, m1, m2 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixNorm {
    #[default]
    Spectral,
    Frobenius,
}

impl MatrixNorm {
    fn of(self, a: MatRef<'_, f64>) -> Result<f64> {
        match self {
            MatrixNorm::Spectral => spectral_norm(a),
            MatrixNorm::Frobenius => Ok(frobenius_norm(a)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundTerms {
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
    pub t4: f64,
}

impl BoundTerms {
    pub fn total(&self) -> f64 {
        self.t1 + self.t2 + self.t3 + self.t4
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigSummary {
    pub lambda1: f64,
    pub lambda2: Option<f64>,
    pub lambda6: Option<f64>,
    pub ones_correlation: f64,
}

/// Leading eigen-structure of a symmetric matrix. `ones_correlation` is
/// `|cos(u₁, 𝟙)|`.
pub fn eig_summary(a: MatRef<'_, f64>) -> Result<(EigSummary, Vec<f64>)> {
    let n = a.nrows();
    let (vals, u) = sym_eigen_desc(a)?;
    let s: f64 = (0..n).map(|i| u[(i, 0)]).sum();
    let summary = EigSummary {
        lambda1: vals.first().copied().unwrap_or(0.0),
        lambda2: vals.get(1).copied(),
        lambda6: vals.get(5).copied(),
        ones_correlation: if n == 0 { 0.0 } else { s.abs() / (n as f64).sqrt() },
    };
    Ok((summary, vals))
}

#[derive(Debug, Clone)]
pub struct GetReport {
    pub matrices: EquivalenceMatrices,
    pub hermite: HermiteTriple,
    pub norm: MatrixNorm,
    pub bound_terms: BoundTerms,
    /// Sum of the four terms with the unknown constant set to one: a comparative
    /// diagnostic, not a certified bound.
    pub bound_total: f64,
    pub eig_summary: Vec<(String, EigSummary)>,
}

/// Serializable part of a [`GetReport`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GetSummary {
    pub n: usize,
    pub hermite: HermiteTriple,
    pub norm: MatrixNorm,
    pub bound_terms: BoundTerms,
    pub bound_total: f64,
    pub bound_total_kind: String,
    pub eig_summary: Vec<NamedEigSummary>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedEigSummary {
    pub matrix: String,
    #[serde(flatten)]
    pub summary: EigSummary,
}

impl GetReport {
    pub fn summary(&self) -> GetSummary {
        GetSummary {
            n: self.matrices.rho.nrows(),
            hermite: self.hermite,
            norm: self.norm,
            bound_terms: self.bound_terms,
            bound_total: self.bound_total,
            bound_total_kind: "comparative diagnostic".into(),
            eig_summary: self
                .eig_summary
                .iter()
                .map(|(m, s)| NamedEigSummary { matrix: m.clone(), summary: *s })
                .collect(),
        }
    }
}

pub fn get_bound(
    w: MatRef<'_, f64>,
    w_teacher: MatRef<'_, f64>,
    a: MatRef<'_, f64>,
    kind: ActivationKind,
) -> Result<GetReport> {
    get_bound_with(w, w_teacher, a, kind, MatrixNorm::Spectral)
}

pub fn get_bound_with(
    w: MatRef<'_, f64>,
    w_teacher: MatRef<'_, f64>,
    a: MatRef<'_, f64>,
    kind: ActivationKind,
    norm: MatrixNorm,
) -> Result<GetReport> {
    let (n, d) = (a.nrows(), a.ncols());
    if w.ncols() != n {
        return Err(Error::Dimension { context: "student weights", expected: n, got: w.ncols() });
    }
    if w_teacher.ncols() != d {
        return Err(Error::Dimension { context: "teacher weights", expected: d, got: w_teacher.ncols() });
    }
    let h = hermite_coefficients(kind);
    let mats = build_equivalence_matrices(a, h)?;
    let (s1, ev1) = eig_summary(mats.m1.as_ref())?;
    let (s2, ev2) = eig_summary(mats.m2.as_ref())?;
    check_psd(&ev1, PSD_REL_TOL)?;
    check_psd(&ev2, PSD_REL_TOL)?;
    let (srho, _) = eig_summary(mats.rho.as_ref())?;

    let nf = n as f64;
    let inv_sqrt_n = 1.0 / nf.sqrt();
    let t1 = if s1.lambda1 > 0.0 {
        let r = sym_sqrt(mats.m1.as_ref())?;
        norm.of((w * &r * faer::Scale(inv_sqrt_n)).as_ref())?.powi(2)
    } else {
        0.0
    };
    let t2 = if s2.lambda1 > 0.0 {
        let r = sym_sqrt(mats.m2.as_ref())?;
        norm.of((w * &r * faer::Scale(inv_sqrt_n)).as_ref())?
    } else {
        0.0
    };
    let wa = w_teacher * a.transpose() * faer::Scale(1.0 / (d as f64).sqrt());
    let t3 = inv_sqrt_n * norm.of(wa.as_ref())?.powi(2);
    let mut quartic = 0.0;
    for j in 0..n {
        for i in 0..n {
            if i != j {
                quartic += mats.rho[(i, j)].powi(4);
            }
        }
    }
    let t4 = (1.0 + quartic) * inv_sqrt_n;
    let bound_terms = BoundTerms { t1, t2, t3, t4 };
    Ok(GetReport {
        bound_total: bound_terms.total(),
        bound_terms,
        hermite: h,
        norm,
        eig_summary: vec![("rho".into(), srho), ("M1".into(), s1), ("M2".into(), s2)],
        matrices: mats,
    })
}

/// Spectrum of one `α𝟙 + βI` matrix, numeric against closed form.
#[derive(Debug, Clone)]
pub struct KSpectrum {
    pub name: String,
    pub matrix: Mat<f64>,
    pub alpha: f64,
    pub beta: f64,
    /// Descending.
    pub closed_form: Vec<f64>,
    /// Descending.
    pub numeric: Vec<f64>,
    pub max_rel_err: f64,
    pub ones_cosine: f64,
}

impl KSpectrum {
    pub fn lambda1_closed(&self) -> f64 {
        self.closed_form[0]
    }
}

/// Eigenvalues of `α𝟙 + βI` (`α ≥ 0`): `αN + β` once, `β` otherwise.
pub fn ones_plus_identity_eigenvalues(alpha: f64, beta: f64, n: usize) -> Vec<f64> {
    let mut v = vec![beta; n];
    if n > 0 {
        v[0] = alpha * n as f64 + beta;
    }
    v
}

/// K matrices of `ρ = μ²𝟙 + (1 − μ²)I` built numerically, followed by `M1`, `M2`;
/// each compared with its closed-form `α𝟙 + βI` spectrum.
pub fn deterministic_k_spectra(mu: f64, n: usize, h: HermiteTriple) -> Result<Vec<KSpectrum>> {
    if !(0.0..=1.0).contains(&mu) {
        return Err(Error::InvalidArgument(format!("mu must lie in [0, 1], got {mu}")));
    }
    if n < 2 {
        return Err(Error::InvalidArgument(format!("N must be at least 2, got {n}")));
    }
    let nf = n as f64;
    let mu2 = mu * mu;
    let mu4 = mu2 * mu2;
    let rho = Mat::from_fn(n, n, |i, j| if i == j { 1.0 } else { mu2 });
    let k = KMatrices::from_rho(rho.as_ref())?;

    let s = mu4 / nf.sqrt();
    let c11 = ((nf - 2.0) * s, s);
    let c12 = ((nf - 2.0) * mu2 * s, ((nf - 2.0) * (1.0 - mu2) + 1.0) * s);
    let up = mu4 * nf.sqrt();
    let c21 = (up * c11.0, up * c11.1);
    let c22 = (up * c12.0, up * c12.1);
    let (h1, h2, h3) = (h.h1 * h.h1, h.h2 * h.h2, h.h3 * h.h3);
    let cm1 = (h1 * c11.0 + h2 * c12.0, h1 * c11.1 + h2 * c12.1);
    let cm2 = (h2 * c21.0 + h3 * c22.0, h2 * c21.1 + h3 * c22.1);
    let (m1, m2) = combine(&k, h);

    // K11 and K21 are squares of symmetric factors, and so is M1 when h2 = 0;
    // squaring the factor's spectrum keeps the small eigenvalues accurate relative
    // to themselves.
    let rt = off_diagonal(rho.as_ref());
    let rt2 = hadamard(rt.as_ref(), rt.as_ref());
    let squared = |f: &Mat<f64>, scale: f64| -> Result<Vec<f64>> {
        let mut v: Vec<f64> = sym_eigenvalues_desc(f.as_ref())?.iter().map(|x| x * x * scale).collect();
        v.sort_by(|a, b| b.total_cmp(a));
        Ok(v)
    };
    let items = [
        ("K11", k.k11, c11, Some(squared(&rt, 1.0 / nf.sqrt())?)),
        ("K12", k.k12, c12, None),
        ("K21", k.k21, c21, Some(squared(&rt2, 1.0)?)),
        ("K22", k.k22, c22, None),
        ("M1", m1, cm1, if h.h2 == 0.0 { Some(squared(&rt, h1 / nf.sqrt())?) } else { None }),
        ("M2", m2, cm2, None),
    ];
    items
        .into_iter()
        .map(|(name, matrix, (alpha, beta), factored)| {
            let closed = ones_plus_identity_eigenvalues(alpha, beta, n);
            let (summary, dense) = eig_summary(matrix.as_ref())?;
            let numeric = factored.unwrap_or(dense);
            let max_rel_err = closed
                .iter()
                .zip(&numeric)
                .map(|(&c, &x)| if c == 0.0 { x.abs() } else { ((x - c) / c).abs() })
                .fold(0.0, f64::max);
            // with α = 0 every vector is leading; report the ones direction as exact
            let ones_cosine = if alpha == 0.0 { 1.0 } else { summary.ones_correlation };
            Ok(KSpectrum {
                name: name.to_string(),
                matrix,
                alpha,
                beta,
                closed_form: closed,
                numeric,
                max_rel_err,
                ones_cosine,
            })
        })
        .collect()
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingRow {
    pub matrix: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub seed: u64,
    pub lambda1: f64,
    pub lambda2: Option<f64>,
    pub lambda6: Option<f64>,
    pub ones_corr: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingStudy {
    pub rows: Vec<ScalingRow>,
    /// Per matrix, the log-log slope of the median `λ1` against `N`.
    pub slopes: Vec<(String, f64)>,
}

pub const SCALING_HEADER: &str = "matrix,N,seed,lambda1,lambda2,lambda6,ones_corr";

impl ScalingStudy {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut s = String::from(SCALING_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.matrix,
                r.n,
                r.seed,
                r.lambda1,
                opt(r.lambda2),
                opt(r.lambda6),
                r.ones_corr
            ));
        }
        s
    }

    /// Median over seeds of a per-row quantity, for one matrix and size.
    pub fn median_of(&self, matrix: &str, n: usize, f: impl Fn(&ScalingRow) -> f64) -> Option<f64> {
        let mut v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.matrix == matrix && r.n == n)
            .map(f)
            .collect();
        (!v.is_empty()).then(|| median(&mut v))
    }
}

pub(crate) fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Eigenvalue scaling of the K matrices for `A` drawn with `μ = N^{-β}` and
/// `D = round(δN)`. Matrix indices select from `K11, K12, K21, K22`; seeds are
/// derived from `(master, "scaling", N)` and the seed index.
pub fn scaling_study(
    beta_exponent: f64,
    delta: f64,
    n_list: &[usize],
    seeds: &[u64],
    matrices: &[usize],
) -> Result<ScalingStudy> {
    if n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("N list must be strictly ascending".into()));
    }
    if delta <= 0.0 {
        return Err(Error::InvalidArgument(format!("delta must be positive, got {delta}")));
    }
    let mut rows = Vec::new();
    for &n in n_list {
        let d = ((delta * n as f64).round() as usize).max(1);
        let mu = (n as f64).powf(-beta_exponent);
        for &seed in seeds {
            let a: Mat<f64> = sample_weights(WeightLaw::ShiftedIid { mu }, false, n, d, rng::derive_u64(seed, "scaling", n as u64));
            let rho = symmetrize(&(&a * a.transpose()));
            let k = KMatrices::from_rho(rho.as_ref())?;
            for &i in matrices {
                let (s, _) = eig_summary(k.get(i).as_ref())?;
                rows.push(ScalingRow {
                    matrix: KMatrices::NAMES[i].to_string(),
                    n,
                    seed,
                    lambda1: s.lambda1,
                    lambda2: s.lambda2,
                    lambda6: s.lambda6,
                    ones_corr: s.ones_correlation,
                });
            }
        }
    }
    let mut study = ScalingStudy { rows, slopes: Vec::new() };
    if n_list.len() >= 2 {
        for &i in matrices {
            let name = KMatrices::NAMES[i];
            let xs: Vec<f64> = n_list.iter().map(|&n| n as f64).collect();
            let ys: Vec<f64> = n_list
                .iter()
                .map(|&n| study.median_of(name, n, |r| r.lambda1).unwrap_or(f64::NAN))
                .collect();
            study.slopes.push((name.to_string(), log_log_slope(&xs, &ys)));
        }
    }
    Ok(study)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectionCumulants {
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub variance: f64,
    /// Variance below `1e-12`; the cumulants are then reported as zero.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CumulantReport {
    pub n_samples: usize,
    pub directions: Vec<DirectionCumulants>,
    pub max_abs_skewness: f64,
    pub max_abs_kurtosis: f64,
}

impl CumulantReport {
    /// Gaussian-null threshold `safety · √(24/n)` for the excess kurtosis.
    pub fn kurtosis_threshold(&self, safety: f64) -> f64 {
        safety * (24.0 / self.n_samples as f64).sqrt()
    }

    pub fn max_abs_kurtosis_in(&self, idx: std::ops::Range<usize>) -> f64 {
        self.directions[idx]
            .iter()
            .map(|d| d.excess_kurtosis.abs())
            .fold(0.0, f64::max)
    }
}

/// The `dim` coordinate axes followed by `n_random` seeded uniform unit vectors.
pub fn default_directions(dim: usize, n_random: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut dirs: Vec<Vec<f64>> = (0..dim)
        .map(|i| (0..dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let mut r = rng::stream(seed, "directions", 0);
    for _ in 0..n_random {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut r)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        dirs.push(v);
    }
    dirs
}

/// Standardized skewness and excess kurtosis of `αᵀz` for each direction `α`,
/// over the rows `z` of an `n x dim` sample matrix.
pub fn gaussianity_cumulants(samples: MatRef<'_, f64>, directions: &[Vec<f64>]) -> Result<CumulantReport> {
    let (n, dim) = (samples.nrows(), samples.ncols());
    if n < 1000 {
        return Err(Error::InvalidArgument(format!("need at least 1000 samples, got {n}")));
    }
    let mut out = Vec::with_capacity(directions.len());
    let mut proj = vec![0.0; n];
    for dir in directions {
        if dir.len() != dim {
            return Err(Error::Dimension { context: "direction", expected: dim, got: dir.len() });
        }
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-8 {
            return Err(Error::InvalidArgument(format!("direction not normalized (norm {norm})")));
        }
        proj.iter_mut().for_each(|p| *p = 0.0);
        for (j, &a) in dir.iter().enumerate() {
            if a != 0.0 {
                for (i, p) in proj.iter_mut().enumerate() {
                    *p += a * samples[(i, j)];
                }
            }
        }
        out.push(cumulants(&proj));
    }
    let max_abs_skewness = out.iter().map(|d| d.skewness.abs()).fold(0.0, f64::max);
    let max_abs_kurtosis = out.iter().map(|d| d.excess_kurtosis.abs()).fold(0.0, f64::max);
    Ok(CumulantReport { n_samples: n, directions: out, max_abs_skewness, max_abs_kurtosis })
}

fn cumulants(x: &[f64]) -> DirectionCumulants {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in x {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    if m2 < 1e-12 {
        return DirectionCumulants { skewness: 0.0, excess_kurtosis: 0.0, variance: m2, degenerate: true };
    }
    DirectionCumulants {
        skewness: m3 / m2.powf(1.5),
        excess_kurtosis: m4 / (m2 * m2) - 3.0,
        variance: m2,
        degenerate: false,
    }
}

/// Samples of the local fields `(λ, ν)` as an `n x (K+M)` matrix: `λ = W x / √N`
/// with `x = G(c)` and `ν = W̃ c / √D`. Latents come from `(seed, "latent", i)`.
/// Generation runs in the generator's scalar type.
pub fn sample_local_fields<T: Scalar>(
    gen: &Generator<T>,
    w: MatRef<'_, T>,
    teacher: &Teacher<T>,
    n_samples: usize,
    seed: u64,
    batch: usize,
) -> Result<Mat<f64>> {
    let (k, m) = (w.nrows(), teacher.m());
    let n = gen.output_dim();
    if w.ncols() != n {
        return Err(Error::Dimension { context: "student weights", expected: n, got: w.ncols() });
    }
    if teacher.latent_dim() != gen.latent_dim() {
        return Err(Error::Dimension {
            context: "teacher latent",
            expected: gen.latent_dim(),
            got: teacher.latent_dim(),
        });
    }
    let batch = batch.max(1);
    let scale = 1.0 / (n as f64).sqrt();
    let mut out = Mat::<f64>::zeros(n_samples, k + m);
    let mut first = 0usize;
    while first < n_samples {
        let b = batch.min(n_samples - first);
        let c = sample_latent_batch::<T>(gen.latent_dim(), b, seed, first as u64);
        let x = gen.generate_batch(c.as_ref())?;
        let lam = w * &x;
        let nu = teacher.fields_batch(c.as_ref())?;
        for j in 0..b {
            for a in 0..k {
                out[(first + j, a)] = lam[(a, j)].to_f64_lossy() * scale;
            }
            for r in 0..m {
                out[(first + j, k + r)] = nu[(r, j)].to_f64_lossy();
            }
        }
        first += b;
    }
    Ok(out)
}
