//! Saddle-point equations for full-batch generalized linear learning on
//! features, and the asymptotic test error at their fixed point.
//!
//! All matrices live in feature space: `Ω` and `ΦΦᵀ` are `Ñ x Ñ`, traces carry a
//! `1/Ñ` prefactor, `α = samples/Ñ` and `δ = D/Ñ`.

use std::f64::consts::PI;

use faer::MatRef;
use serde::{Deserialize, Serialize};

use crate::activations::{i2_mixed, ActivationKind};
use crate::error::{Error, Result};
use crate::linalg::{jacobi_eigen, sym_eigen_desc};
use crate::quadrature::GaussHermite;

/// Nodes of the Gauss–Hermite rules used for the `ξ` and `y` integrals.
pub const QUAD_NODES: usize = 99;
const Q_MIN: f64 = 1e-14;
const V_TEACHER_MIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    Square,
    Logistic,
}

impl Loss {
    pub fn value(self, y: f64, x: f64) -> f64 {
        match self {
            Loss::Square => 0.5 * (y - x) * (y - x),
            Loss::Logistic => softplus(-y * x),
        }
    }
}

/// `log(1 + eᶻ)` without overflow.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// `1 / (1 + e⁻ᶻ)`.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub loss: Loss,
    pub teacher_kind: ActivationKind,
    /// Teacher norm `‖w̃‖²/D`.
    pub rho: f64,
}

impl ChannelSpec {
    pub fn new(loss: Loss, teacher_kind: ActivationKind, rho: f64) -> Result<Self> {
        if !(rho > 0.0) {
            return Err(Error::InvalidArgument(format!("teacher norm must be positive, got {rho}")));
        }
        match teacher_kind {
            ActivationKind::Linear | ActivationKind::Sign | ActivationKind::Erf => {}
            k => return Err(Error::InvalidArgument(format!("unsupported teacher channel {k:?}"))),
        }
        Ok(ChannelSpec { loss, teacher_kind, rho })
    }
}

/// Spectral data of the feature covariances: eigenvalues `ωᵢ` of `Ω` and the
/// diagonal `Pᵢᵢ = (UᵀΦΦᵀU)ᵢᵢ` of `ΦΦᵀ` in the eigenbasis `U` of `Ω`.
#[derive(Debug, Clone)]
pub struct SpectralInputs {
    pub omega_eigs: Vec<f64>,
    pub p_diag: Vec<f64>,
    pub lambda: f64,
    pub alpha: f64,
    pub delta: f64,
}

impl SpectralInputs {
    pub fn new(omega: MatRef<'_, f64>, phi_phi_t: MatRef<'_, f64>, lambda: f64, alpha: f64, delta: f64) -> Result<Self> {
        let n = omega.nrows();
        if omega.ncols() != n || phi_phi_t.nrows() != n || phi_phi_t.ncols() != n {
            return Err(Error::Dimension { context: "feature covariances", expected: n, got: phi_phi_t.nrows() });
        }
        let (vals, u) = sym_eigen_desc(omega)?;
        let pu = phi_phi_t * &u;
        let p_diag = (0..n)
            .map(|i| (0..n).map(|r| u[(r, i)] * pu[(r, i)]).sum::<f64>().max(0.0))
            .collect();
        Self::from_spectrum(vals, p_diag, lambda, alpha, delta)
    }

    /// Builds the inputs from `Ω` and the `Ñ x D` cross moment `Φ`.
    pub fn from_phi(omega: MatRef<'_, f64>, phi: MatRef<'_, f64>, lambda: f64, alpha: f64, delta: f64) -> Result<Self> {
        let ppt = phi * phi.transpose();
        Self::new(omega, ppt.as_ref(), lambda, alpha, delta)
    }

    pub fn from_spectrum(omega_eigs: Vec<f64>, p_diag: Vec<f64>, lambda: f64, alpha: f64, delta: f64) -> Result<Self> {
        if omega_eigs.len() != p_diag.len() {
            return Err(Error::Dimension { context: "P diagonal", expected: omega_eigs.len(), got: p_diag.len() });
        }
        if omega_eigs.is_empty() {
            return Err(Error::InvalidArgument("empty spectrum".into()));
        }
        let top = omega_eigs.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        if let Some(&min) = omega_eigs.iter().min_by(|a, b| a.total_cmp(b)) {
            if min < -1e-8 * top.max(1.0) {
                return Err(Error::NotPsd { min_eig: min, tol: 1e-8 * top.max(1.0) });
            }
        }
        if !(lambda >= 0.0) || !(alpha >= 0.0) || !(delta > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "need lambda >= 0, alpha >= 0, delta > 0 (got {lambda}, {alpha}, {delta})"
            )));
        }
        let omega_eigs = omega_eigs.into_iter().map(|v| v.max(0.0)).collect();
        Ok(SpectralInputs { omega_eigs, p_diag, lambda, alpha, delta })
    }

    pub fn with_alpha(&self, alpha: f64) -> Self {
        SpectralInputs { alpha, ..self.clone() }
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        SpectralInputs { lambda, ..self.clone() }
    }

    pub fn n_tilde(&self) -> usize {
        self.omega_eigs.len()
    }

    /// `tr Ω / Ñ`.
    pub fn gamma(&self) -> f64 {
        self.omega_eigs.iter().sum::<f64>() / self.n_tilde() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct ReplicaState {
    pub V: f64,
    pub q: f64,
    pub m: f64,
    pub Vhat: f64,
    pub qhat: f64,
    pub mhat: f64,
}

impl ReplicaState {
    fn as_array(&self) -> [f64; 6] {
        [self.V, self.q, self.m, self.Vhat, self.qhat, self.mhat]
    }
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Inverse of `u ↦ erf(u/√2)` on `(-1, 1)`.
fn erf_scaled_inverse(y: f64) -> f64 {
    let g = ActivationKind::Erf;
    let mut x = 0.0f64;
    for _ in 0..100 {
        let f = g.eval(x) - y;
        let d = g.deriv(x);
        if d <= 0.0 {
            break;
        }
        let step = (f / d).clamp(-1.0, 1.0);
        x -= step;
        if step.abs() < 1e-15 * (1.0 + x.abs()) {
            break;
        }
    }
    x
}

/// Teacher channel partition function `Z̃_y(ω, V)` and its `ω`-derivative.
pub fn teacher_channel(spec: &ChannelSpec, y: f64, omega_t: f64, v_t: f64) -> Result<(f64, f64)> {
    if !(v_t > 0.0) {
        return Err(Error::InvalidArgument(format!("teacher variance must be positive, got {v_t}")));
    }
    let sv = v_t.sqrt();
    match spec.teacher_kind {
        ActivationKind::Sign => {
            if y != 1.0 && y != -1.0 {
                return Err(Error::InvalidArgument(format!("sign channel needs y = ±1, got {y}")));
            }
            let z = y * omega_t / sv;
            Ok((normal_cdf(z), y * normal_pdf(z) / sv))
        }
        ActivationKind::Linear => {
            let r = (y - omega_t) / sv;
            let z = normal_pdf(r) / sv;
            Ok((z, z * (y - omega_t) / v_t))
        }
        ActivationKind::Erf => {
            if y.abs() >= 1.0 {
                return Ok((0.0, 0.0));
            }
            let x = erf_scaled_inverse(y);
            let jac = ActivationKind::Erf.deriv(x);
            let z = normal_pdf((x - omega_t) / sv) / sv / jac;
            Ok((z, z * (x - omega_t) / v_t))
        }
        k => Err(Error::InvalidArgument(format!("unsupported teacher channel {k:?}"))),
    }
}

/// Proximal operator `η = argminₓ (x − ω)²/2V + ℓ(y, x)` and `∂η/∂ω`.
pub fn proximal(loss: Loss, y: f64, omega: f64, v: f64) -> Result<(f64, f64)> {
    if !(v > 0.0) {
        return Err(Error::InvalidArgument(format!("prox step must be positive, got {v}")));
    }
    match loss {
        Loss::Square => Ok(((omega + v * y) / (1.0 + v), 1.0 / (1.0 + v))),
        Loss::Logistic => {
            // stationarity: (x − ω)/V − y σ(−yx) = 0, root between ω and ω + V y
            let f = |x: f64| (x - omega) / v - y * sigmoid(-y * x);
            let (mut lo, mut hi) = if y >= 0.0 { (omega, omega + v * y) } else { (omega + v * y, omega) };
            let mut x = omega;
            let mut last_step = hi - lo;
            for _ in 0..50 {
                let r = f(x);
                let s = sigmoid(y * x);
                let l2 = y * y * s * (1.0 - s);
                let d = 1.0 / v + l2;
                let step = r / d;
                // for small V the residual floor is ULP(x)/V; stop once the step is below ULP
                if r.abs() <= 1e-12 || step.abs() <= 4.0 * f64::EPSILON * x.abs().max(1.0) {
                    return Ok((x, 1.0 / (1.0 + v * l2)));
                }
                if r > 0.0 {
                    hi = x;
                } else {
                    lo = x;
                }
                let next = x - step;
                // bisect when Newton leaves the bracket or stalls
                x = if next > lo && next < hi && step.abs() < 0.5 * last_step {
                    last_step = step.abs();
                    next
                } else {
                    last_step = 0.5 * (hi - lo);
                    0.5 * (lo + hi)
                };
            }
            let r = f(x);
            Err(Error::NonConvergence { what: "logistic proximal", iters: 50, residual: r.abs() })
        }
    }
}

/// Integration points over the teacher output `y`: `(y, Z̃ weight, ∂ωZ̃ weight)`.
fn y_points(spec: &ChannelSpec, omega_t: f64, v_t: f64, gh: &GaussHermite, out: &mut Vec<(f64, f64, f64)>) -> Result<()> {
    out.clear();
    match spec.teacher_kind {
        ActivationKind::Sign => {
            for y in [-1.0, 1.0] {
                let (z, dz) = teacher_channel(spec, y, omega_t, v_t)?;
                out.push((y, z, dz));
            }
        }
        kind => {
            // ∫dy Z̃ F(y) = E_z F(g̃(ω + √V z)), ∂ω of it = E_z F(g̃(ω + √V z)) z/√V
            let sv = v_t.sqrt();
            for (&z, &w) in gh.nodes.iter().zip(&gh.weights) {
                out.push((kind.eval(omega_t + sv * z), w, w * z / sv));
            }
        }
    }
    Ok(())
}

/// Returns `(V̂, q̂, m̂)` from the current `(V, q, m)`.
pub fn hat_update(state: &ReplicaState, inputs: &SpectralInputs, channel: &ChannelSpec) -> Result<(f64, f64, f64)> {
    hat_update_with(state, inputs, channel, &GaussHermite::new(QUAD_NODES))
}

pub fn hat_update_with(
    state: &ReplicaState,
    inputs: &SpectralInputs,
    channel: &ChannelSpec,
    gh: &GaussHermite,
) -> Result<(f64, f64, f64)> {
    if inputs.alpha == 0.0 {
        return Ok((0.0, 0.0, 0.0));
    }
    let v = state.V;
    if !(v > 0.0) {
        return Err(Error::InvalidArgument(format!("V must be positive, got {v}")));
    }
    let rho = channel.rho;
    let degenerate = state.q <= Q_MIN;
    let (sq, mt, v_t) = if degenerate {
        (0.0, 0.0, rho)
    } else {
        let sq = state.q.sqrt();
        (sq, state.m / sq, (rho - state.m * state.m / state.q).max(V_TEACHER_MIN * rho))
    };
    let single = [(0.0, 1.0)];
    let xi_points: Vec<(f64, f64)> = if degenerate {
        single.to_vec()
    } else {
        gh.nodes.iter().copied().zip(gh.weights.iter().copied()).collect()
    };
    let (mut vh, mut qh, mut mh) = (0.0, 0.0, 0.0);
    let mut ys = Vec::new();
    for (xi, wx) in xi_points {
        let omega = sq * xi;
        y_points(channel, mt * xi, v_t, gh, &mut ys)?;
        for &(y, z, dz) in &ys {
            let (eta, deta) = proximal(channel.loss, y, omega, v)?;
            let f = (eta - omega) / v;
            vh += wx * z * (1.0 - deta) / v;
            qh += wx * z * f * f;
            mh += wx * dz * f;
        }
    }
    let a = inputs.alpha;
    let out = (a * vh, a * qh, a / inputs.delta.sqrt() * mh);
    if !(out.0.is_finite() && out.1.is_finite() && out.2.is_finite()) {
        return Err(Error::NonFinite("replica hat update"));
    }
    Ok(out)
}

/// Returns `(V, q, m)` from `(V̂, q̂, m̂)` through traces over the spectrum.
pub fn trace_update(hats: (f64, f64, f64), inputs: &SpectralInputs) -> Result<(f64, f64, f64)> {
    let (vh, qh, mh) = hats;
    let lam = inputs.lambda;
    let nt = inputs.n_tilde() as f64;
    let (mut v, mut q, mut m) = (0.0, 0.0, 0.0);
    for (&w, &p) in inputs.omega_eigs.iter().zip(&inputs.p_diag) {
        let den = lam + vh * w;
        if den <= 0.0 {
            if w == 0.0 && p == 0.0 {
                continue;
            }
            return Err(Error::SingularCovariance { context: "resolvent", value: den });
        }
        let r = 1.0 / den;
        v += w * r;
        q += (qh * w + mh * mh * p) * w * r * r;
        m += p * r;
    }
    Ok((v / nt, q / nt, mh * m / (nt * inputs.delta.sqrt())))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { damping: 0.5, tol: 1e-8, max_iter: 5000 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Solution {
    pub state: ReplicaState,
    pub converged: bool,
    pub iters: usize,
    /// Max absolute change of the six scalars per iteration.
    pub residuals: Vec<f64>,
}

/// Damped fixed-point iteration from `(V, q, m) = (1, 0.1, 0.01)`.
pub fn solve(inputs: &SpectralInputs, channel: &ChannelSpec, opts: &SolveOptions) -> Result<Solution> {
    if !(0.0..1.0).contains(&opts.damping) {
        return Err(Error::InvalidArgument(format!("damping must lie in [0, 1), got {}", opts.damping)));
    }
    let gh = GaussHermite::new(QUAD_NODES);
    let th = opts.damping;
    let mix = |new: f64, old: f64| (1.0 - th) * new + th * old;
    let mut s = ReplicaState { V: 1.0, q: 0.1, m: 0.01, Vhat: 0.0, qhat: 0.0, mhat: 0.0 };
    let (vh, qh, mh) = hat_update_with(&s, inputs, channel, &gh)?;
    s.Vhat = vh;
    s.qhat = qh;
    s.mhat = mh;
    let mut residuals = Vec::new();
    let mut best = (f64::INFINITY, s);
    for it in 1..=opts.max_iter {
        let old = s;
        let (vh, qh, mh) = hat_update_with(&old, inputs, channel, &gh)?;
        let mut next = old;
        next.Vhat = mix(vh, old.Vhat);
        next.qhat = mix(qh, old.qhat);
        next.mhat = mix(mh, old.mhat);
        let (v, q, m) = trace_update((next.Vhat, next.qhat, next.mhat), inputs)?;
        next.V = mix(v, old.V);
        next.q = mix(q, old.q);
        next.m = mix(m, old.m);
        let res = next
            .as_array()
            .iter()
            .zip(old.as_array())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if !res.is_finite() {
            return Err(Error::NonFinite("replica iteration"));
        }
        residuals.push(res);
        s = next;
        if res < best.0 {
            best = (res, s);
        }
        if res <= opts.tol {
            return Ok(Solution { state: s, converged: true, iters: it, residuals });
        }
    }
    Ok(Solution { state: best.1, converged: false, iters: opts.max_iter, residuals })
}

/// `½ E[(g̃(ν) − g(λ))²]` for `(ν, λ) ~ N(0, [[ρ, m], [m, q]])`.
pub fn test_error(rho: f64, m: f64, q: f64, g: ActivationKind, gt: ActivationKind) -> Result<f64> {
    let (ev, _) = jacobi_eigen(&[rho, m, m, q], 2);
    let tol = 1e-10 * ev[1].abs().max(f64::MIN_POSITIVE);
    if ev[0] < -tol {
        return Err(Error::NotPsd { min_eig: ev[0], tol });
    }
    use ActivationKind::*;
    let eps = match (g, gt) {
        (Linear, Linear) => 0.5 * (rho - 2.0 * m + q),
        (Sign, Sign) => {
            let den = (rho * q).sqrt();
            let r = if den > 0.0 { (m / den).clamp(-1.0, 1.0) } else { 0.0 };
            2.0 / PI * r.acos()
        }
        _ => {
            let c_tt = [[rho, rho], [rho, rho]];
            let c_ss = [[q, q], [q, q]];
            let c_st = [[q, m], [m, rho]];
            let tt = i2_mixed(gt, gt, &c_tt)?;
            let ss = i2_mixed(g, g, &c_ss)?;
            let st = i2_mixed(g, gt, &c_st)?;
            0.5 * (tt + ss - 2.0 * st)
        }
    };
    Ok(eps.max(0.0))
}

pub const SWEEP_HEADER: &str = "alpha,lambda,delta,V,q,m,Vhat,qhat,mhat,eps_g,converged,iters";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub lambda: f64,
    pub delta: f64,
    pub state: ReplicaState,
    pub eps_g: f64,
    pub converged: bool,
    pub iters: usize,
}

/// Solves at each `α`, reporting the test error with student activation `g`.
pub fn sweep(
    inputs: &SpectralInputs,
    channel: &ChannelSpec,
    alphas: &[f64],
    g: ActivationKind,
    opts: &SolveOptions,
) -> Result<Vec<SweepRow>> {
    alphas
        .iter()
        .map(|&alpha| {
            let inp = inputs.with_alpha(alpha);
            let sol = solve(&inp, channel, opts)?;
            let st = sol.state;
            Ok(SweepRow {
                alpha,
                lambda: inp.lambda,
                delta: inp.delta,
                eps_g: test_error(channel.rho, st.m, st.q, g, channel.teacher_kind)?,
                state: st,
                converged: sol.converged,
                iters: sol.iters,
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from(SWEEP_HEADER);
    s.push('\n');
    for r in rows {
        let st = &r.state;
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.alpha, r.lambda, r.delta, st.V, st.q, st.m, st.Vhat, st.qhat, st.mhat, r.eps_g, r.converged, r.iters
        ));
    }
    s
}
