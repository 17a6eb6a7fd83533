//! Order-parameter dynamics of online SGD for a two-layer network trained on
//! generated inputs.
//!
//! The state keeps, for every eigenvalue `ρ_τ` of `Ω`, the products
//! `s_τ = Γ_τ Γ_τᵀ` (student-student), `r_τ = Γ_τ Γ̃_τᵀ` (student-teacher) and
//! `t̃_τ = Γ̃_τ Γ̃_τᵀ` (teacher-teacher), where `Γ_τ = Ψ W / √N` are the spectral
//! projections of the weights. Order parameters follow as
//! `Q = (1/N) Σ_τ ρ_τ s_τ` and `R = (1/(√δ N)) Σ_τ r_τ`.

use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::activations::{
    derivative_product_moment, erf_i2, erf_i3, erf_i4, i2_mixed, i2_with, i3, i4,
    stein_second_deriv_moment, ActivationKind, McOptions,
};
use crate::error::{Error, Result};
use crate::generators::Teacher;
use crate::linalg::jacobi_eigen;
use crate::moments::{project, MomentSet};
use crate::scalar::Scalar;
use crate::trajectory::{Record, RecordSchedule, Trajectory};

/// Which variance multiplies the `η²` term of the `s_τ` equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum QuadVariant {
    /// `η² vᵏ vˡ ρ_τ h6`.
    #[default]
    PerEigenvalue,
    /// `η² vᵏ vˡ γ h6`.
    SpectrumAveraged,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdeConfig {
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub eta: f64,
    pub t_max: f64,
    #[serde(default)]
    pub record: RecordSchedule,
    #[serde(default)]
    pub quad_variant: QuadVariant,
}

fn default_dt() -> f64 {
    0.01
}

impl OdeConfig {
    pub fn new(eta: f64, t_max: f64) -> Self {
        OdeConfig {
            dt: default_dt(),
            eta,
            t_max,
            record: RecordSchedule::default(),
            quad_variant: QuadVariant::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.eta >= 0.0) {
            return Err(Error::InvalidArgument(format!("eta must be non-negative, got {}", self.eta)));
        }
        if !(self.t_max >= 0.0) {
            return Err(Error::InvalidArgument(format!("t_max must be non-negative, got {}", self.t_max)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct OdeState<T: Scalar> {
    pub k: usize,
    pub m: usize,
    pub rho: Vec<T>,
    /// `N x K x K`.
    pub s: Vec<T>,
    /// `N x K x M`.
    pub r: Vec<T>,
    /// `N x M x M`, constant in time.
    pub ttilde: Vec<T>,
    pub v: Vec<T>,
    pub vtilde: Vec<T>,
    /// `W̃ W̃ᵀ / D`, `M x M` row-major.
    pub t_mat: Vec<T>,
    pub delta: T,
    pub gamma: T,
    pub t: f64,
    pub student_kind: ActivationKind,
    pub teacher_kind: ActivationKind,
}

/// Second moments of the local fields and the second-layer weights.
#[derive(Debug, Clone)]
pub struct OrderParams<T: Scalar> {
    pub q: Mat<T>,
    pub r: Mat<T>,
    pub t: Mat<T>,
    pub v: Vec<T>,
    pub vtilde: Vec<T>,
}

impl<T: Scalar> OrderParams<T> {
    pub fn k(&self) -> usize {
        self.q.nrows()
    }

    pub fn m(&self) -> usize {
        self.t.nrows()
    }

    /// Covariance of `(λ¹..λᴷ, ν¹..νᴹ)` as a row-major `(K+M)²` array.
    pub fn block_covariance(&self) -> Vec<T> {
        let (k, m) = (self.k(), self.m());
        let d = k + m;
        let mut c = vec![T::zero(); d * d];
        for a in 0..d {
            for b in 0..d {
                c[a * d + b] = match (a < k, b < k) {
                    (true, true) => self.q[(a, b)],
                    (true, false) => self.r[(a, b - k)],
                    (false, true) => self.r[(b, a - k)],
                    (false, false) => self.t[(a - k, b - k)],
                };
            }
        }
        c
    }

    /// Checks that the block covariance is PSD within `rel_tol · trace`.
    pub fn check_block_psd(&self, rel_tol: f64) -> Result<()> {
        let d = self.k() + self.m();
        let c: Vec<f64> = self.block_covariance().iter().map(|v| v.to_f64_lossy()).collect();
        let (ev, _) = jacobi_eigen(&c, d);
        let trace: f64 = (0..d).map(|i| c[i * d + i]).sum();
        let min = ev.first().copied().unwrap_or(0.0);
        let tol = rel_tol * trace.abs();
        if min < -tol {
            return Err(Error::NotPsd { min_eig: min, tol });
        }
        Ok(())
    }

    pub fn to_record(&self, t: f64, pmse: f64) -> Record {
        let f = |m: &Mat<T>| {
            let mut out = Vec::with_capacity(m.nrows() * m.ncols());
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    out.push(m[(i, j)].to_f64_lossy());
                }
            }
            out
        };
        Record {
            t,
            pmse,
            q: f(&self.q),
            r: f(&self.r),
            v: self.v.iter().map(|x| x.to_f64_lossy()).collect(),
            pmse_mc: None,
        }
    }
}

fn check_kinds(g: ActivationKind, gt: ActivationKind) -> Result<()> {
    if g != gt {
        return Err(Error::InvalidArgument(format!(
            "the order-parameter equations need matching student and teacher activations, got {g:?} and {gt:?}"
        )));
    }
    if g == ActivationKind::Sign {
        return Err(Error::InvalidArgument("sign has zero derivative and cannot be trained".into()));
    }
    Ok(())
}

/// Projects the initial weights into the eigenbasis of `Ω`.
pub fn init_state<T: Scalar>(
    ms: &MomentSet,
    w0: MatRef<'_, f64>,
    v0: &[f64],
    teacher: &Teacher<f64>,
    student_kind: ActivationKind,
) -> Result<OdeState<T>> {
    check_kinds(student_kind, teacher.kind)?;
    let (k, m, n) = (w0.nrows(), teacher.m(), ms.n());
    if v0.len() != k {
        return Err(Error::Dimension { context: "initial second layer", expected: k, got: v0.len() });
    }
    let p = project(ms, w0, teacher.w.as_ref())?;
    let mut s = vec![T::zero(); n * k * k];
    let mut r = vec![T::zero(); n * k * m];
    let mut tt = vec![T::zero(); n * m * m];
    for tau in 0..n {
        for a in 0..k {
            for b in 0..k {
                s[(tau * k + a) * k + b] = T::of(p.gamma[(a, tau)] * p.gamma[(b, tau)]);
            }
            for b in 0..m {
                r[(tau * k + a) * m + b] = T::of(p.gamma[(a, tau)] * p.gamma_tilde[(b, tau)]);
            }
        }
        for a in 0..m {
            for b in 0..m {
                tt[(tau * m + a) * m + b] = T::of(p.gamma_tilde[(a, tau)] * p.gamma_tilde[(b, tau)]);
            }
        }
    }
    let tm = teacher.overlap();
    Ok(OdeState {
        k,
        m,
        rho: ms.rho.iter().map(|&x| T::of(x)).collect(),
        s,
        r,
        ttilde: tt,
        v: v0.iter().map(|&x| T::of(x)).collect(),
        vtilde: teacher.v.iter().map(|&x| T::of(x)).collect(),
        t_mat: (0..m * m).map(|i| T::of(tm[(i / m, i % m)])).collect(),
        delta: T::of(ms.delta()),
        gamma: T::of(ms.gamma),
        t: 0.0,
        student_kind,
        teacher_kind: teacher.kind,
    })
}

impl<T: Scalar> OdeState<T> {
    pub fn n(&self) -> usize {
        self.rho.len()
    }

    /// `T̃ = (1/N) Σ_τ t̃_τ`.
    pub fn rotated_teacher_overlap(&self) -> Mat<T> {
        let (m, n) = (self.m, self.n());
        let mut out = Mat::<T>::zeros(m, m);
        for tau in 0..n {
            for a in 0..m {
                for b in 0..m {
                    out[(a, b)] += self.ttilde[(tau * m + a) * m + b];
                }
            }
        }
        let inv = T::one() / T::of(n as f64);
        Mat::from_fn(m, m, |a, b| out[(a, b)] * inv)
    }
}

pub fn order_params<T: Scalar>(state: &OdeState<T>) -> OrderParams<T> {
    let (k, m, n) = (state.k, state.m, state.n());
    let mut q = Mat::<T>::zeros(k, k);
    let mut r = Mat::<T>::zeros(k, m);
    for tau in 0..n {
        let rho = state.rho[tau];
        for a in 0..k {
            for b in 0..k {
                q[(a, b)] += rho * state.s[(tau * k + a) * k + b];
            }
            for b in 0..m {
                r[(a, b)] += state.r[(tau * k + a) * m + b];
            }
        }
    }
    let nf = T::of(n as f64);
    let rs = T::one() / (state.delta.sqrt() * nf);
    OrderParams {
        q: Mat::from_fn(k, k, |a, b| q[(a, b)] / nf),
        r: Mat::from_fn(k, m, |a, b| r[(a, b)] * rs),
        t: Mat::from_fn(m, m, |a, b| state.t_mat[a * m + b]),
        v: state.v.clone(),
        vtilde: state.vtilde.clone(),
    }
}

/// Auxiliary functions of the order-parameter equations. Indices `k, j, ℓ` run over
/// student units, `n` over teacher units; matrices are row-major.
#[derive(Debug, Clone)]
pub struct HFunctions<T: Scalar> {
    /// `K x K`, diagonal unused.
    pub h1: Vec<T>,
    /// `K x K`, diagonal unused.
    pub h2: Vec<T>,
    pub h3: Vec<T>,
    /// `K x M`.
    pub h4: Vec<T>,
    /// `K x M`.
    pub h5: Vec<T>,
    /// `K x K`.
    pub h6: Vec<T>,
    /// `E[g(λᵏ) g(λʲ)]`, `K x K`.
    pub h7_student: Vec<T>,
    /// `E[g(λᵏ) g̃(νⁿ)]`, `K x M`.
    pub h7_teacher: Vec<T>,
}

/// How a degenerate field pair (`det ≤ 1e-10 · product of variances`) is handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Degenerate {
    Error,
    /// Evaluate `h1, h2, h4, h5` via the equivalent expectations
    /// `E[g''(λᵏ) g(·)]`, `E[g'(λᵏ) g'(·)]`, which stay finite on degenerate pairs.
    Stein,
}

const DEGENERATE_REL: f64 = 1e-10;

struct Fields<'a, T: Scalar> {
    c: &'a [T],
    d: usize,
    kind: ActivationKind,
    mc: McOptions,
}

impl<T: Scalar> Fields<'_, T> {
    fn at(&self, a: usize, b: usize) -> T {
        self.c[a * self.d + b]
    }

    fn i2(&self, a: usize, b: usize) -> Result<T> {
        let (caa, cab, cbb) = (self.at(a, a), self.at(a, b), self.at(b, b));
        match self.kind {
            ActivationKind::Erf => Ok(erf_i2(caa, cab, cbb)),
            ActivationKind::Linear => Ok(cab),
            k => i2_with(k, &[[caa, cab], [cab, cbb]], &self.mc),
        }
    }

    fn i3(&self, a: usize, b: usize, c: usize) -> Result<T> {
        let idx = [a, b, c];
        let mut m = [[T::zero(); 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = self.at(idx[i], idx[j]);
            }
        }
        match self.kind {
            ActivationKind::Erf => erf_i3(&m),
            ActivationKind::Linear => Ok(m[1][2]),
            k => i3(k, &m),
        }
    }

    fn i4(&self, a: usize, b: usize, c: usize, e: usize) -> Result<T> {
        let idx = [a, b, c, e];
        let mut m = [[T::zero(); 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                m[i][j] = self.at(idx[i], idx[j]);
            }
        }
        match self.kind {
            ActivationKind::Erf => erf_i4(&m),
            ActivationKind::Linear => Ok(m[2][3]),
            k => i4(k, &m),
        }
    }

    /// Solves the 2x2 Stein system for `(E[g''(x_a) g(x_b)], E[g'(x_a) g'(x_b)])` from
    /// `I3(a, a, b)` and `I3(a, b, b)`; `None` when the pair is degenerate.
    fn ratio_pair(&self, a: usize, b: usize) -> Result<(Option<(T, T)>, f64)> {
        let (caa, cab, cbb) = (self.at(a, a), self.at(a, b), self.at(b, b));
        let det = caa * cbb - cab * cab;
        let scale = (caa * cbb).to_f64_lossy();
        if !(det.to_f64_lossy() > DEGENERATE_REL * scale) || scale <= 0.0 {
            return Ok((None, det.to_f64_lossy()));
        }
        let iaab = self.i3(a, a, b)?;
        let iabb = self.i3(a, b, b)?;
        let first = (cbb * iaab - cab * iabb) / det;
        let second = (caa * iabb - cab * iaab) / det;
        Ok((Some((first, second)), det.to_f64_lossy()))
    }

    fn stein_pair(&self, a: usize, b: usize) -> Result<(T, T)> {
        let (caa, cab, cbb) = (self.at(a, a), self.at(a, b), self.at(b, b));
        Ok((
            stein_second_deriv_moment(self.kind, caa, cab, cbb)?,
            derivative_product_moment(self.kind, caa, cab, cbb)?,
        ))
    }

    fn pair(&self, a: usize, b: usize, mode: Degenerate, ctx: &'static str) -> Result<(T, T)> {
        match self.ratio_pair(a, b)? {
            (Some(v), _) => Ok(v),
            (None, det) => match mode {
                Degenerate::Stein => self.stein_pair(a, b),
                Degenerate::Error => Err(Error::DegeneratePair { context: ctx, a, b, det }),
            },
        }
    }
}

/// Evaluates `h1..h7`, failing on degenerate field pairs.
pub fn h_functions<T: Scalar>(op: &OrderParams<T>, kind: ActivationKind) -> Result<HFunctions<T>> {
    h_functions_with(op, kind, Degenerate::Error)
}

pub fn h_functions_with<T: Scalar>(
    op: &OrderParams<T>,
    kind: ActivationKind,
    mode: Degenerate,
) -> Result<HFunctions<T>> {
    let (k, m) = (op.k(), op.m());
    let d = k + m;
    let c = op.block_covariance();
    let f = Fields { c: &c, d, kind, mc: McOptions::default() };
    let mut h = HFunctions {
        h1: vec![T::zero(); k * k],
        h2: vec![T::zero(); k * k],
        h3: vec![T::zero(); k],
        h4: vec![T::zero(); k * m],
        h5: vec![T::zero(); k * m],
        h6: vec![T::zero(); k * k],
        h7_student: vec![T::zero(); k * k],
        h7_teacher: vec![T::zero(); k * m],
    };
    for a in 0..k {
        for j in 0..k {
            if j != a {
                let (x, y) = f.pair(a, j, mode, "h1/h2")?;
                h.h1[a * k + j] = x;
                h.h2[a * k + j] = y;
            }
            h.h7_student[a * k + j] = f.i2(a, j)?;
        }
        let qkk = f.at(a, a);
        h.h3[a] = if qkk.to_f64_lossy() > 0.0 {
            f.i3(a, a, a)? / qkk
        } else {
            match mode {
                Degenerate::Stein => {
                    let (x, y) = f.stein_pair(a, a)?;
                    x + y
                }
                Degenerate::Error => {
                    return Err(Error::DegeneratePair { context: "h3", a, b: a, det: 0.0 })
                }
            }
        };
        for n in 0..m {
            let (x, y) = f.pair(a, k + n, mode, "h4/h5")?;
            h.h4[a * m + n] = x;
            h.h5[a * m + n] = y;
            h.h7_teacher[a * m + n] = f.i2(a, k + n)?;
        }
    }
    let two = T::of(2.0);
    for a in 0..k {
        for l in a..k {
            let mut acc = T::zero();
            for j in 0..k {
                for i in 0..k {
                    acc += op.v[j] * op.v[i] * f.i4(a, l, j, i)?;
                }
                for n in 0..m {
                    acc -= two * op.v[j] * op.vtilde[n] * f.i4(a, l, j, k + n)?;
                }
            }
            for n in 0..m {
                for p in 0..m {
                    acc += op.vtilde[n] * op.vtilde[p] * f.i4(a, l, k + n, k + p)?;
                }
            }
            h.h6[a * k + l] = acc;
            h.h6[l * k + a] = acc;
        }
    }
    Ok(h)
}

/// Time derivatives of the dynamical parts of the state.
#[derive(Debug, Clone)]
pub struct Derivatives<T: Scalar> {
    pub ds: Vec<T>,
    pub dr: Vec<T>,
    pub dv: Vec<T>,
}

impl<T: Scalar> Derivatives<T> {
    pub fn max_abs(&self) -> f64 {
        self.ds
            .iter()
            .chain(&self.dr)
            .chain(&self.dv)
            .fold(0.0f64, |a, x| a.max(x.to_f64_lossy().abs()))
    }
}

pub fn derivatives<T: Scalar>(state: &OdeState<T>, cfg: &OdeConfig) -> Result<Derivatives<T>> {
    let (k, m, n) = (state.k, state.m, state.n());
    let op = order_params(state);
    let h = h_functions_with(&op, state.student_kind, Degenerate::Stein)?;
    let eta = T::of(cfg.eta);
    let v = &state.v;
    let vt = &state.vtilde;
    let inv_sqrt_delta = T::one() / state.delta.sqrt();

    // dΓᵏ/dt = ρ_τ Σ_j L0[k][j] Γʲ + Σ_n B[k][n] Γ̃ⁿ
    let mut l0 = vec![T::zero(); k * k];
    let mut bm = vec![T::zero(); k * m];
    for a in 0..k {
        let mut diag = v[a] * h.h3[a];
        for j in 0..k {
            if j != a {
                diag += v[j] * h.h1[a * k + j];
                l0[a * k + j] = -eta * v[a] * v[j] * h.h2[a * k + j];
            }
        }
        for p in 0..m {
            diag -= vt[p] * h.h4[a * m + p];
            bm[a * m + p] = eta * v[a] * vt[p] * h.h5[a * m + p] * inv_sqrt_delta;
        }
        l0[a * k + a] = -eta * v[a] * diag;
    }
    let eta2 = eta * eta;
    let mut noise = vec![T::zero(); k * k];
    for a in 0..k {
        for b in 0..k {
            noise[a * k + b] = eta2 * v[a] * v[b] * h.h6[a * k + b];
        }
    }

    let mut ds = vec![T::zero(); n * k * k];
    let mut dr = vec![T::zero(); n * k * m];
    let mut lin = vec![T::zero(); k * k];
    for tau in 0..n {
        let rho = state.rho[tau];
        let s = &state.s[tau * k * k..(tau + 1) * k * k];
        let r = &state.r[tau * k * m..(tau + 1) * k * m];
        let tt = &state.ttilde[tau * m * m..(tau + 1) * m * m];
        // lin[a][b] = Σ_j ρ L0[a][j] s[j][b] + Σ_p B[a][p] r[b][p]
        for a in 0..k {
            for b in 0..k {
                let mut acc = T::zero();
                for j in 0..k {
                    acc += l0[a * k + j] * s[j * k + b];
                }
                acc *= rho;
                for p in 0..m {
                    acc += bm[a * m + p] * r[b * m + p];
                }
                lin[a * k + b] = acc;
            }
        }
        let var = match cfg.quad_variant {
            QuadVariant::PerEigenvalue => rho,
            QuadVariant::SpectrumAveraged => state.gamma,
        };
        let dsl = &mut ds[tau * k * k..(tau + 1) * k * k];
        for a in 0..k {
            for b in a..k {
                let x = lin[a * k + b] + lin[b * k + a] + var * noise[a * k + b];
                dsl[a * k + b] = x;
                dsl[b * k + a] = x;
            }
        }
        let drl = &mut dr[tau * k * m..(tau + 1) * k * m];
        for a in 0..k {
            for c in 0..m {
                let mut acc = T::zero();
                for j in 0..k {
                    acc += l0[a * k + j] * r[j * m + c];
                }
                acc *= rho;
                for p in 0..m {
                    acc += bm[a * m + p] * tt[p * m + c];
                }
                drl[a * m + c] = acc;
            }
        }
    }
    let mut dv = vec![T::zero(); k];
    for a in 0..k {
        let mut acc = T::zero();
        for p in 0..m {
            acc += vt[p] * h.h7_teacher[a * m + p];
        }
        for j in 0..k {
            acc -= v[j] * h.h7_student[a * k + j];
        }
        dv[a] = eta * acc;
    }
    Ok(Derivatives { ds, dr, dv })
}

/// One explicit Euler step of length `cfg.dt`.
pub fn ode_step<T: Scalar>(state: &OdeState<T>, cfg: &OdeConfig) -> Result<OdeState<T>> {
    cfg.validate()?;
    let d = derivatives(state, cfg)?;
    let mut next = state.clone();
    apply(&mut next, &d, cfg.dt);
    next.t = state.t + cfg.dt;
    Ok(next)
}

fn apply<T: Scalar>(state: &mut OdeState<T>, d: &Derivatives<T>, dt: f64) {
    let dt = T::of(dt);
    for (x, dx) in state.s.iter_mut().zip(&d.ds) {
        *x += dt * *dx;
    }
    for (x, dx) in state.r.iter_mut().zip(&d.dr) {
        *x += dt * *dx;
    }
    for (x, dx) in state.v.iter_mut().zip(&d.dv) {
        *x += dt * *dx;
    }
}

/// Prediction mean-squared error `½ E[(Σ vᵏ g(λᵏ) − Σ ṽⁿ g̃(νⁿ))²]` under the
/// Gaussian fields with covariance `[[Q, R], [Rᵀ, T]]`.
pub fn pmse<T: Scalar>(op: &OrderParams<T>, g: ActivationKind, gt: ActivationKind) -> Result<T> {
    op.check_block_psd(1e-8)?;
    let (k, m) = (op.k(), op.m());
    let mut ss = T::zero();
    for a in 0..k {
        for b in 0..k {
            let c = [[op.q[(a, a)], op.q[(a, b)]], [op.q[(a, b)], op.q[(b, b)]]];
            ss += op.v[a] * op.v[b] * pair_i2(g, g, &c)?;
        }
    }
    let mut st = T::zero();
    for a in 0..k {
        for n in 0..m {
            let c = [[op.q[(a, a)], op.r[(a, n)]], [op.r[(a, n)], op.t[(n, n)]]];
            st += op.v[a] * op.vtilde[n] * pair_i2(g, gt, &c)?;
        }
    }
    let mut tt = T::zero();
    for n in 0..m {
        for p in 0..m {
            let c = [[op.t[(n, n)], op.t[(n, p)]], [op.t[(n, p)], op.t[(p, p)]]];
            tt += op.vtilde[n] * op.vtilde[p] * pair_i2(gt, gt, &c)?;
        }
    }
    let e = T::of(0.5) * (ss - T::of(2.0) * st + tt);
    if e < T::zero() {
        if e.to_f64_lossy() >= -1e-12 {
            return Ok(T::zero());
        }
        return Err(Error::NotPsd { min_eig: e.to_f64_lossy(), tol: 1e-12 });
    }
    Ok(e)
}

fn pair_i2<T: Scalar>(g: ActivationKind, gt: ActivationKind, c: &[[T; 2]; 2]) -> Result<T> {
    if g == gt && g == ActivationKind::Erf {
        // tolerate rounding-level indefiniteness; the block check already ran
        return Ok(erf_i2(c[0][0], c[0][1], c[1][1]));
    }
    let c = clamp_pair(c);
    i2_mixed(g, gt, &c)
}

fn clamp_pair<T: Scalar>(c: &[[T; 2]; 2]) -> [[T; 2]; 2] {
    let lim = (c[0][0].max(T::zero()) * c[1][1].max(T::zero())).sqrt();
    let off = c[0][1].max(-lim).min(lim);
    [[c[0][0], off], [off, c[1][1]]]
}

/// Integrates with explicit Euler and records at the configured schedule.
/// Returns the trajectory and the final state.
pub fn integrate<T: Scalar>(state: &OdeState<T>, cfg: &OdeConfig) -> Result<(Trajectory, OdeState<T>)> {
    cfg.validate()?;
    let times = cfg.record.times(cfg.t_max, cfg.dt);
    let ticks: Vec<u64> = times.iter().map(|t| (t / cfg.dt).round() as u64).collect();
    let n_steps = (cfg.t_max / cfg.dt).round() as u64;
    let t0 = state.t;
    let mut cur = state.clone();
    let mut traj = Trajectory::new(state.k, state.m);
    let mut next_rec = 0;
    for step in 0..=n_steps {
        if next_rec < ticks.len() && ticks[next_rec] == step {
            let op = order_params(&cur);
            let e = pmse(&op, cur.student_kind, cur.teacher_kind)?;
            traj.records.push(op.to_record(t0 + times[next_rec], e.to_f64_lossy()));
            next_rec += 1;
        }
        if step < n_steps {
            let d = derivatives(&cur, cfg)?;
            apply(&mut cur, &d, cfg.dt);
            cur.t = t0 + (step + 1) as f64 * cfg.dt;
        }
    }
    Ok((traj, cur))
}

