//! Online SGD for the two-layer student `φ(x) = Σ_k vᵏ g(wᵏ · x / √N)`.
//!
//! Each step consumes a fresh sample; the sample used at step `s` is generated from
//! the latent stream `(derive_u64(seed, "sgd-sample", 0), "latent", s)` and is never
//! reused.

use faer::{Mat, MatRef};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::activations::{ActivationKind, McEstimate};
use crate::error::{Error, Result};
use crate::generators::{sample_latent_batch, Generator, Teacher};
use crate::linalg::{cast, symmetrize};
use crate::moments::MomentSet;
use crate::ode::{pmse, OrderParams};
use crate::rng;
use crate::scalar::Scalar;
use crate::trajectory::{RecordSchedule, Trajectory};

#[derive(Debug, Clone)]
pub struct Student<T: Scalar> {
    /// `K x N`.
    pub w: Mat<T>,
    pub v: Vec<T>,
    pub kind: ActivationKind,
}

impl<T: Scalar> Student<T> {
    pub fn new(w: Mat<T>, v: Vec<T>, kind: ActivationKind) -> Result<Self> {
        if v.len() != w.nrows() {
            return Err(Error::Dimension { context: "student second layer", expected: w.nrows(), got: v.len() });
        }
        if w.nrows() == 0 {
            return Err(Error::InvalidArgument("student needs K >= 1".into()));
        }
        Ok(Student { w, v, kind })
    }

    /// `W` i.i.d. normal with scale `w_scale`, `v` i.i.d. normal with scale `v_scale`.
    pub fn random(k: usize, n: usize, kind: ActivationKind, w_scale: f64, v_scale: f64, seed: u64) -> Self {
        let mut r = rng::stream(seed, "student", 0);
        let mut wd = vec![0.0f64; k * n];
        for x in wd.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut r);
            *x = w_scale * z;
        }
        let v = (0..k)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut r);
                T::of(v_scale * z)
            })
            .collect();
        Student { w: Mat::from_fn(k, n, |i, j| T::of(wd[i * n + j])), v, kind }
    }

    pub fn k(&self) -> usize {
        self.w.nrows()
    }

    pub fn n(&self) -> usize {
        self.w.ncols()
    }

    pub fn output(&self, x: &[T]) -> T {
        let rows = RowMajor::from_mat(self.w.as_ref());
        rows.output(&self.v, self.kind, x, &mut vec![T::zero(); self.k()])
    }
}

// Row-major copy of W for the per-sample inner loops.
struct RowMajor<T> {
    k: usize,
    n: usize,
    data: Vec<T>,
}

impl<T: Scalar> RowMajor<T> {
    fn from_mat(w: MatRef<'_, T>) -> Self {
        let (k, n) = (w.nrows(), w.ncols());
        let mut data = Vec::with_capacity(k * n);
        for i in 0..k {
            for j in 0..n {
                data.push(w[(i, j)]);
            }
        }
        RowMajor { k, n, data }
    }

    fn to_mat(&self) -> Mat<T> {
        Mat::from_fn(self.k, self.n, |i, j| self.data[i * self.n + j])
    }

    fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    fn fields(&self, x: &[T], lambda: &mut [T]) {
        let s = T::one() / T::of(self.n as f64).sqrt();
        for (i, l) in lambda.iter_mut().enumerate() {
            *l = dot(self.row(i), x) * s;
        }
    }

    fn output(&self, v: &[T], kind: ActivationKind, x: &[T], lambda: &mut [T]) -> T {
        self.fields(x, lambda);
        lambda.iter().zip(v).map(|(&l, &vk)| vk * kind.eval(l)).sum()
    }

    /// One SGD update from the sample `(x, y)`.
    fn step(&mut self, v: &mut [T], kind: ActivationKind, x: &[T], y: T, eta: T, lambda: &mut [T]) {
        let nf = T::of(self.n as f64);
        let out = self.output(v, kind, x, lambda);
        let delta = out - y;
        let cw = eta / nf.sqrt() * delta;
        let cv = eta / nf * delta;
        for k in 0..self.k {
            let coef = -cw * v[k] * kind.deriv(lambda[k]);
            if coef != T::zero() {
                axpy(coef, x, &mut self.data[k * self.n..(k + 1) * self.n]);
            }
        }
        for k in 0..self.k {
            v[k] -= cv * kind.eval(lambda[k]);
        }
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s += *x * *y;
    }
    s
}

#[inline]
fn axpy<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * *xi;
    }
}

/// One SGD step on the sample `(x, y)` with learning rate `eta`; `W` and `v` are
/// updated simultaneously from the pre-update local fields.
pub fn sgd_step<T: Scalar>(s: &Student<T>, x: &[T], y: T, eta: f64) -> Result<Student<T>> {
    if x.len() != s.n() {
        return Err(Error::Dimension { context: "sgd_step input", expected: s.n(), got: x.len() });
    }
    let mut rows = RowMajor::from_mat(s.w.as_ref());
    let mut v = s.v.clone();
    let mut lambda = vec![T::zero(); s.k()];
    rows.step(&mut v, s.kind, x, y, T::of(eta), &mut lambda);
    Ok(Student { w: rows.to_mat(), v, kind: s.kind })
}

/// Evaluates `Q = WΩWᵀ/N`, `R = WΦW̃ᵀ/(N√δ)`, `T = W̃W̃ᵀ/D` against fixed moments.
pub struct OrderParamMeter<'a> {
    ms: &'a MomentSet,
    phi_wt: Mat<f64>,
    t: Mat<f64>,
    vtilde: Vec<f64>,
}

impl<'a> OrderParamMeter<'a> {
    pub fn new(ms: &'a MomentSet, teacher: &Teacher<f64>) -> Result<Self> {
        if teacher.latent_dim() != ms.d() {
            return Err(Error::Dimension { context: "teacher latent dimension", expected: ms.d(), got: teacher.latent_dim() });
        }
        Ok(OrderParamMeter {
            ms,
            phi_wt: &ms.phi * teacher.w.transpose(),
            t: teacher.overlap(),
            vtilde: teacher.v.clone(),
        })
    }

    pub fn measure<T: Scalar>(&self, s: &Student<T>) -> Result<OrderParams<f64>> {
        let n = self.ms.n();
        if s.n() != n {
            return Err(Error::Dimension { context: "student input dimension", expected: n, got: s.n() });
        }
        let w: Mat<f64> = cast(s.w.as_ref());
        let nf = n as f64;
        let wo = &w * &self.ms.omega;
        let q = symmetrize(&(&wo * w.transpose())) * faer::Scale(1.0 / nf);
        let r = (&w * &self.phi_wt) * faer::Scale(1.0 / (nf * self.ms.delta().sqrt()));
        Ok(OrderParams {
            q,
            r,
            t: self.t.clone(),
            v: s.v.iter().map(|x| x.to_f64_lossy()).collect(),
            vtilde: self.vtilde.clone(),
        })
    }
}

pub fn measure_order_params<T: Scalar>(s: &Student<T>, ms: &MomentSet, teacher: &Teacher<f64>) -> Result<OrderParams<f64>> {
    OrderParamMeter::new(ms, teacher)?.measure(s)
}

/// A fixed set of test samples.
pub struct TestSet<T: Scalar> {
    /// `N x n_test`.
    pub x: Mat<T>,
    pub y: Vec<T>,
}

impl<T: Scalar> TestSet<T> {
    /// Latents from stream seed `derive_u64(seed, "test", 0)`.
    pub fn generate(gen: &Generator<T>, teacher: &Teacher<T>, n_test: usize, seed: u64) -> Result<Self> {
        if teacher.latent_dim() != gen.latent_dim() {
            return Err(Error::Dimension { context: "teacher latent dimension", expected: gen.latent_dim(), got: teacher.latent_dim() });
        }
        let ts = rng::derive_u64(seed, "test", 0);
        let mut x = Mat::<T>::zeros(gen.output_dim(), n_test);
        let mut y = Vec::with_capacity(n_test);
        let chunk = 1024;
        let mut done = 0;
        while done < n_test {
            let b = chunk.min(n_test - done);
            let c = sample_latent_batch::<T>(gen.latent_dim(), b, ts, done as u64);
            let xb = gen.generate_batch(c.as_ref())?;
            x.as_mut().subcols_mut(done, b).copy_from(&xb);
            y.extend(teacher.label_batch(c.as_ref())?);
            done += b;
        }
        Ok(TestSet { x, y })
    }

    /// `½ mean((φ(x) − y)²)` with its standard error.
    pub fn pmse(&self, s: &Student<T>) -> McEstimate {
        let n = self.y.len();
        let scale = T::one() / T::of(s.n() as f64).sqrt();
        let lam = (&s.w * &self.x) * faer::Scale(scale);
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for j in 0..n {
            let mut out = T::zero();
            for k in 0..s.k() {
                out += s.v[k] * s.kind.eval(lam[(k, j)]);
            }
            let e = 0.5 * (out - self.y[j]).to_f64_lossy().powi(2);
            sum += e;
            sum2 += e * e;
        }
        let nf = n as f64;
        let mean = sum / nf;
        let var = ((sum2 - nf * mean * mean) / (nf - 1.0)).max(0.0);
        McEstimate { mean, stderr: (var / nf).sqrt() }
    }
}

/// Monte Carlo prediction error on `n_test` fresh samples.
pub fn test_error_mc<T: Scalar>(
    s: &Student<T>,
    teacher: &Teacher<T>,
    gen: &Generator<T>,
    n_test: usize,
    seed: u64,
) -> Result<McEstimate> {
    if n_test < 100 {
        return Err(Error::InvalidArgument(format!("n_test must be at least 100, got {n_test}")));
    }
    Ok(TestSet::generate(gen, teacher, n_test, seed)?.pmse(s))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub eta: f64,
    pub steps: u64,
    #[serde(default)]
    pub record: RecordSchedule,
    #[serde(default)]
    pub seed: u64,
    /// Test-set size for the Monte Carlo error column; 0 disables it.
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    #[serde(default = "default_batch")]
    pub batch: usize,
    /// Recording times are multiples of this, rounded to the nearest step; matching
    /// the ODE step keeps both trajectories on one grid.
    #[serde(default = "default_record_dt")]
    pub record_dt: f64,
}

fn default_record_dt() -> f64 {
    0.01
}

fn default_n_test() -> usize {
    10_000
}

fn default_batch() -> usize {
    1024
}

impl RunConfig {
    pub fn new(eta: f64, steps: u64, seed: u64) -> Self {
        RunConfig {
            eta,
            steps,
            record: RecordSchedule::default(),
            seed,
            n_test: default_n_test(),
            batch: default_batch(),
            record_dt: default_record_dt(),
        }
    }
}

/// Runs online SGD, recording order parameters (and their pmse) plus the Monte
/// Carlo test error at times `t = step / N`.
pub fn run<T: Scalar>(
    student0: &Student<T>,
    teacher: &Teacher<f64>,
    gen: &Generator<T>,
    ms: &MomentSet,
    cfg: &RunConfig,
) -> Result<(Trajectory, Student<T>)> {
    if !(cfg.eta >= 0.0) {
        return Err(Error::InvalidArgument(format!("eta must be non-negative, got {}", cfg.eta)));
    }
    let n = gen.output_dim();
    if student0.n() != n {
        return Err(Error::Dimension { context: "student input dimension", expected: n, got: student0.n() });
    }
    if teacher.latent_dim() != gen.latent_dim() {
        return Err(Error::Dimension { context: "teacher latent dimension", expected: gen.latent_dim(), got: teacher.latent_dim() });
    }
    let meter = OrderParamMeter::new(ms, teacher)?;
    let teacher_t = Teacher::<T> { w: cast(teacher.w.as_ref()), v: teacher.v.iter().map(|&x| T::of(x)).collect(), kind: teacher.kind };
    let test = if cfg.n_test > 0 { Some(TestSet::generate(gen, &teacher_t, cfg.n_test, cfg.seed)?) } else { None };

    let nf = n as f64;
    let t_max = cfg.steps as f64 / nf;
    let quantum = if cfg.record_dt > 0.0 { cfg.record_dt.min(t_max.max(1.0 / nf)) } else { 1.0 / nf };
    let mut rec_steps: Vec<u64> = cfg
        .record
        .times(t_max, quantum)
        .iter()
        .map(|t| ((t * nf).round() as u64).min(cfg.steps))
        .collect();
    rec_steps.dedup();
    let sample_seed = rng::derive_u64(cfg.seed, "sgd-sample", 0);
    let eta = T::of(cfg.eta);

    let mut rows = RowMajor::from_mat(student0.w.as_ref());
    let mut v = student0.v.clone();
    let kind = student0.kind;
    let mut lambda = vec![T::zero(); student0.k()];
    let mut traj = Trajectory::new(student0.k(), teacher.m());
    let mut next_rec = 0;
    let batch = cfg.batch.max(1) as u64;
    let record = |rows: &RowMajor<T>, v: &[T], step: u64, traj: &mut Trajectory| -> Result<()> {
        let s = Student { w: rows.to_mat(), v: v.to_vec(), kind };
        let op = meter.measure(&s)?;
        let e = pmse(&op, kind, teacher.kind)?;
        let mut rec = op.to_record(step as f64 / nf, e);
        if let Some(ts) = &test {
            let mc = ts.pmse(&s);
            if (mc.mean - e).abs() > 4.0 * mc.stderr + 0.01 {
                log::debug!("t = {}: pmse {e:.5} vs Monte Carlo {:.5} ± {:.5}", rec.t, mc.mean, mc.stderr);
            }
            rec.pmse_mc = Some(mc);
        }
        traj.records.push(rec);
        Ok(())
    };

    let mut step = 0u64;
    while step < cfg.steps {
        let b = batch.min(cfg.steps - step);
        let c = sample_latent_batch::<T>(gen.latent_dim(), b as usize, sample_seed, step);
        let xb = gen.generate_batch(c.as_ref())?;
        let yb = teacher_t.label_batch(c.as_ref())?;
        for j in 0..b {
            if next_rec < rec_steps.len() && rec_steps[next_rec] == step + j {
                record(&rows, &v, step + j, &mut traj)?;
                next_rec += 1;
            }
            rows.step(&mut v, kind, xb.col_as_slice(j as usize), yb[j as usize], eta, &mut lambda);
        }
        step += b;
    }
    if next_rec < rec_steps.len() && rec_steps[next_rec] == step {
        record(&rows, &v, step, &mut traj)?;
    }
    Ok((traj, Student { w: rows.to_mat(), v, kind }))
}
