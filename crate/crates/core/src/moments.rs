//! Second moments `Ω = E[x xᵀ]`, `Φ = E[x cᵀ]` of a generator, the eigensystem of
//! `Ω`, and spectral projections of student and teacher weights.
//!
//! Eigenvectors are stored as the rows of `psi` and normalized so that
//! `Σ_i ψ_τi ψ_τ'i = N δ_ττ'`, hence `Ω = (1/N) Σ_τ ρ_τ ψ_τ ψ_τᵀ`.

use std::f64::consts::PI;
use std::path::Path;

use faer::linalg::matmul::matmul;
use faer::{get_global_parallelism, Accum, Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::activations::ActivationKind;
use crate::error::{Error, Result};
use crate::generators::{sample_latent_batch, Generator};
use crate::io::{self, MatrixSection};
use crate::linalg::{row_major_from, sym_eigen_desc, symmetrize, to_row_major};
use crate::rng;

#[derive(Debug, Clone)]
pub struct MomentSet {
    pub omega: Mat<f64>,
    pub phi: Mat<f64>,
    pub mean_x: Vec<f64>,
    pub n_samples: usize,
    /// Eigenvalues of `Ω`, descending.
    pub rho: Vec<f64>,
    /// Row `τ` is the eigenvector `ψ_τ`, with squared norm `N`.
    pub psi: Mat<f64>,
    pub gamma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Manifest {
    n_samples: usize,
    gamma: f64,
    #[serde(rename = "D")]
    d: usize,
    #[serde(rename = "N")]
    n: usize,
}

/// Where samples come from.
pub enum MomentSource<'a> {
    Generator(&'a Generator<f64>),
    Stream(&'a Path),
}

#[derive(Debug, Clone, Copy)]
pub struct EstimateOptions {
    /// Subtract `mean_x` from `Ω` and `Φ` (off by default; the moments are uncentered).
    pub center: bool,
    pub batch: usize,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        EstimateOptions { center: false, batch: 512 }
    }
}

impl MomentSet {
    pub fn n(&self) -> usize {
        self.omega.nrows()
    }

    pub fn d(&self) -> usize {
        self.phi.ncols()
    }

    /// `δ = D / N`.
    pub fn delta(&self) -> f64 {
        self.d() as f64 / self.n() as f64
    }

    /// Builds a moment set from given covariances: symmetrizes `Ω`, diagonalizes it,
    /// and clamps negative eigenvalues to zero.
    pub fn from_covariances(
        omega: Mat<f64>,
        phi: Mat<f64>,
        mean_x: Vec<f64>,
        n_samples: usize,
    ) -> Result<Self> {
        let n = omega.nrows();
        if omega.ncols() != n {
            return Err(Error::Dimension { context: "Ω columns", expected: n, got: omega.ncols() });
        }
        if phi.nrows() != n {
            return Err(Error::Dimension { context: "Φ rows", expected: n, got: phi.nrows() });
        }
        if mean_x.len() != n {
            return Err(Error::Dimension { context: "mean_x", expected: n, got: mean_x.len() });
        }
        let omega = symmetrize(&omega);
        let (mut rho, u) = sym_eigen_desc(omega.as_ref())?;
        let rmax = rho.first().copied().unwrap_or(0.0).max(0.0);
        let worst = rho.iter().copied().fold(0.0f64, f64::min);
        if worst < -1e-8 * rmax {
            log::warn!("Ω has eigenvalue {worst:e} below MC tolerance (ρ_max {rmax:e})");
        }
        if worst < 0.0 {
            log::debug!("clamping negative eigenvalues of Ω (largest magnitude {:e})", -worst);
        }
        for r in rho.iter_mut() {
            *r = r.max(0.0);
        }
        let sn = (n as f64).sqrt();
        let psi = Mat::from_fn(n, n, |t, i| sn * u[(i, t)]);
        let gamma = (0..n).map(|i| omega[(i, i)]).sum::<f64>() / n as f64;
        Ok(MomentSet { omega, phi, mean_x, n_samples, rho, psi, gamma })
    }

    /// Exact moments where a closed form exists: identity, and single layers with
    /// Linear, Sign, Erf or ReLU activations.
    pub fn analytic(gen: &Generator<f64>) -> Result<Self> {
        match gen {
            Generator::Identity { d } => {
                let eye = Mat::<f64>::identity(*d, *d);
                Self::from_covariances(eye.clone(), eye, vec![0.0; *d], 0)
            }
            Generator::SingleLayer { a, kind } => {
                let (omega, phi, mean) = single_layer_moments(a.as_ref(), *kind)?;
                Self::from_covariances(omega, phi, mean, 0)
            }
            _ => Err(Error::InvalidArgument(
                "analytic moments need an identity or single-layer generator".into(),
            )),
        }
    }

    /// `(1/N) Σ_τ ρ_τ ψ_τ ψ_τᵀ`.
    pub fn reconstruct_omega(&self) -> Mat<f64> {
        let n = self.n();
        let scaled = Mat::from_fn(n, n, |t, i| self.psi[(t, i)] * self.rho[t] / n as f64);
        self.psi.transpose() * scaled
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let n = self.n();
        let d = self.d();
        let sections = [
            MatrixSection { name: "omega".into(), rows: n, cols: n, data: to_row_major(self.omega.as_ref()) },
            MatrixSection { name: "phi".into(), rows: n, cols: d, data: to_row_major(self.phi.as_ref()) },
            MatrixSection { name: "mean".into(), rows: 1, cols: n, data: self.mean_x.clone() },
            MatrixSection { name: "rho".into(), rows: 1, cols: n, data: self.rho.clone() },
            MatrixSection { name: "psi".into(), rows: n, cols: n, data: to_row_major(self.psi.as_ref()) },
        ];
        let manifest = Manifest { n_samples: self.n_samples, gamma: self.gamma, d, n };
        io::write_matrix_file(path, &sections, &manifest)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (secs, m): (Vec<MatrixSection>, Manifest) = io::read_matrix_file(path, 5)?;
        let expect = [
            ("omega", m.n, m.n),
            ("phi", m.n, m.d),
            ("mean", 1, m.n),
            ("rho", 1, m.n),
            ("psi", m.n, m.n),
        ];
        for (s, (name, r, c)) in secs.iter().zip(expect) {
            if s.name != name || s.rows != r || s.cols != c {
                return Err(Error::Format(format!(
                    "expected section {name} ({r}x{c}), found {} ({}x{})",
                    s.name, s.rows, s.cols
                )));
            }
        }
        let mut it = secs.into_iter();
        let omega = it.next().unwrap();
        let phi = it.next().unwrap();
        let mean = it.next().unwrap();
        let rho = it.next().unwrap();
        let psi = it.next().unwrap();
        Ok(MomentSet {
            omega: row_major_from(m.n, m.n, &omega.data),
            phi: row_major_from(m.n, m.d, &phi.data),
            mean_x: mean.data,
            n_samples: m.n_samples,
            rho: rho.data,
            psi: row_major_from(m.n, m.n, &psi.data),
            gamma: m.gamma,
        })
    }
}

fn single_layer_moments(
    a: MatRef<'_, f64>,
    kind: ActivationKind,
) -> Result<(Mat<f64>, Mat<f64>, Vec<f64>)> {
    let n = a.nrows();
    let cov = a * a.transpose();
    let diag: Vec<f64> = (0..n).map(|i| cov[(i, i)]).collect();
    let two_pi = 2.0 / PI;
    let omega = match kind {
        ActivationKind::Linear => cov.clone(),
        ActivationKind::Sign => Mat::from_fn(n, n, |i, j| {
            if i == j {
                1.0
            } else {
                let den = (diag[i] * diag[j]).sqrt();
                if den > 0.0 {
                    two_pi * (cov[(i, j)] / den).clamp(-1.0, 1.0).asin()
                } else {
                    0.0
                }
            }
        }),
        ActivationKind::Erf => Mat::from_fn(n, n, |i, j| {
            let den = ((1.0 + diag[i]) * (1.0 + diag[j])).sqrt();
            two_pi * (cov[(i, j)] / den).clamp(-1.0, 1.0).asin()
        }),
        ActivationKind::Relu => Mat::from_fn(n, n, |i, j| {
            let den = (diag[i] * diag[j]).sqrt();
            if den <= 0.0 {
                return 0.0;
            }
            let r = (cov[(i, j)] / den).clamp(-1.0, 1.0);
            let th = r.acos();
            den / (2.0 * PI) * (th.sin() + (PI - th) * r)
        }),
        ActivationKind::Tanh => {
            return Err(Error::InvalidArgument("no closed-form moments for tanh".into()))
        }
    };
    // Stein: E[σ(a·c) c] = E[σ'(u)] a, u ~ N(0, ‖a‖²)
    let slope: Vec<f64> = diag
        .iter()
        .map(|&s| match kind {
            ActivationKind::Linear => 1.0,
            ActivationKind::Sign => {
                if s > 0.0 {
                    two_pi.sqrt() / s.sqrt()
                } else {
                    0.0
                }
            }
            ActivationKind::Erf => two_pi.sqrt() / (1.0 + s).sqrt(),
            ActivationKind::Relu => 0.5,
            ActivationKind::Tanh => unreachable!(),
        })
        .collect();
    let phi = Mat::from_fn(n, a.ncols(), |i, r| slope[i] * a[(i, r)]);
    let mean = diag
        .iter()
        .map(|&s| match kind {
            ActivationKind::Relu => (s / (2.0 * PI)).sqrt(),
            _ => 0.0,
        })
        .collect();
    Ok((omega, phi, mean))
}

/// Monte Carlo estimate of the uncentered moments.
///
/// For a generator source, latent batches come from the seed
/// `derive_u64(seed, "moments", 0)`; a stream source is read in file order and
/// `seed` is unused. Exactly `n_samples` samples are used.
pub fn estimate_moments(
    source: MomentSource<'_>,
    n_samples: usize,
    seed: u64,
    opts: EstimateOptions,
) -> Result<MomentSet> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be positive".into()));
    }
    let batch = opts.batch.max(1);
    let mut acc: Option<Accumulator> = None;
    match source {
        MomentSource::Generator(g) => {
            let (d, n) = (g.latent_dim(), g.output_dim());
            warn_small(n_samples, n);
            let lat_seed = rng::derive_u64(seed, "moments", 0);
            let a = acc.insert(Accumulator::new(n, d));
            let mut done = 0;
            while done < n_samples {
                let b = batch.min(n_samples - done);
                let c = sample_latent_batch::<f64>(d, b, lat_seed, done as u64);
                let x = g.generate_batch(c.as_ref())?;
                a.add(x.as_ref(), c.as_ref());
                done += b;
            }
        }
        MomentSource::Stream(path) => {
            let stream = io::open_sample_stream(path)?;
            let h = stream.header().clone();
            if h.count < n_samples {
                return Err(Error::InvalidArgument(format!(
                    "stream holds {} samples, {} requested",
                    h.count, n_samples
                )));
            }
            warn_small(n_samples, h.n);
            let a = acc.insert(Accumulator::new(h.n, h.d));
            let mut cb = Mat::<f64>::zeros(h.d, batch);
            let mut xb = Mat::<f64>::zeros(h.n, batch);
            let mut fill = 0;
            for rec in stream.take(n_samples) {
                let (c, x) = rec?;
                for (i, v) in c.iter().enumerate() {
                    cb[(i, fill)] = *v;
                }
                for (i, v) in x.iter().enumerate() {
                    xb[(i, fill)] = *v;
                }
                fill += 1;
                if fill == batch {
                    a.add(xb.as_ref(), cb.as_ref());
                    fill = 0;
                }
            }
            if fill > 0 {
                a.add(xb.as_ref().subcols(0, fill), cb.as_ref().subcols(0, fill));
            }
        }
    }
    let a = acc.expect("accumulator initialized");
    let inv = 1.0 / n_samples as f64;
    let mean: Vec<f64> = a.sum_x.iter().map(|v| v * inv).collect();
    let mean_c: Vec<f64> = a.sum_c.iter().map(|v| v * inv).collect();
    let n = a.omega.nrows();
    let d = a.phi.ncols();
    let omega = Mat::from_fn(n, n, |i, j| {
        let v = a.omega[(i, j)] * inv;
        if opts.center { v - mean[i] * mean[j] } else { v }
    });
    let phi = Mat::from_fn(n, d, |i, r| {
        let v = a.phi[(i, r)] * inv;
        if opts.center { v - mean[i] * mean_c[r] } else { v }
    });
    MomentSet::from_covariances(omega, phi, mean, n_samples)
}

fn warn_small(n_samples: usize, n: usize) {
    if n_samples < n {
        log::warn!("n_samples = {n_samples} is below the input dimension {n}");
    } else if n_samples < 10 * n {
        log::warn!("n_samples = {n_samples} is below 10·N = {}", 10 * n);
    }
}

struct Accumulator {
    omega: Mat<f64>,
    phi: Mat<f64>,
    sum_x: Vec<f64>,
    sum_c: Vec<f64>,
}

impl Accumulator {
    fn new(n: usize, d: usize) -> Self {
        Accumulator {
            omega: Mat::zeros(n, n),
            phi: Mat::zeros(n, d),
            sum_x: vec![0.0; n],
            sum_c: vec![0.0; d],
        }
    }

    fn add(&mut self, x: MatRef<'_, f64>, c: MatRef<'_, f64>) {
        let par = get_global_parallelism();
        matmul(self.omega.as_mut(), Accum::Add, x, x.transpose(), 1.0, par);
        matmul(self.phi.as_mut(), Accum::Add, x, c.transpose(), 1.0, par);
        for j in 0..x.ncols() {
            for i in 0..x.nrows() {
                self.sum_x[i] += x[(i, j)];
            }
            for i in 0..c.nrows() {
                self.sum_c[i] += c[(i, j)];
            }
        }
    }
}

/// Spectral projections of student and teacher weights.
#[derive(Debug, Clone)]
pub struct Projections {
    /// `K x N`, entry `(k, τ)` is `Γ_τᵏ = ψ_τ · wᵏ / √N`.
    pub gamma: Mat<f64>,
    /// `M x N`, entry `(m, τ)` is `Γ̃_τᵐ = ψ_τ · ω̃ᵐ / √N`.
    pub gamma_tilde: Mat<f64>,
    /// `M x N`, row `m` is `ω̃ᵐ = Φ w̃ᵐ`.
    pub omega_tilde: Mat<f64>,
}

pub fn project(ms: &MomentSet, w: MatRef<'_, f64>, w_teacher: MatRef<'_, f64>) -> Result<Projections> {
    if w.ncols() != ms.n() {
        return Err(Error::Dimension { context: "student weights", expected: ms.n(), got: w.ncols() });
    }
    if w_teacher.ncols() != ms.d() {
        return Err(Error::Dimension { context: "teacher weights", expected: ms.d(), got: w_teacher.ncols() });
    }
    let s = 1.0 / (ms.n() as f64).sqrt();
    let gamma = (w * ms.psi.transpose()) * faer::Scale(s);
    let omega_tilde = w_teacher * ms.phi.transpose();
    let gamma_tilde = (&omega_tilde * ms.psi.transpose()) * faer::Scale(s);
    Ok(Projections { gamma, gamma_tilde, omega_tilde })
}

/// `T̃ = (1/N) W̃ ΦᵀΦ W̃ᵀ`.
pub fn rotated_teacher_overlap(ms: &MomentSet, w_teacher: MatRef<'_, f64>) -> Result<Mat<f64>> {
    if w_teacher.ncols() != ms.d() {
        return Err(Error::Dimension { context: "teacher weights", expected: ms.d(), got: w_teacher.ncols() });
    }
    let ot = w_teacher * ms.phi.transpose();
    let t = (&ot * ot.transpose()) * faer::Scale(1.0 / ms.n() as f64);
    Ok(symmetrize(&t))
}
