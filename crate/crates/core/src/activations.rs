//! Nonlinearities, their Hermite coefficients, and the low-dimensional Gaussian
//! averages `i2`, `i3`, `i4`.
//!
//! `Erf` is the rescaled error function `u ↦ erf(u/√2)`, so that its derivative is
//! `√(2/π)·exp(-u²/2)`. `Sign` has derivative zero everywhere.

use std::f64::consts::PI;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::psd_factor;
use crate::quadrature::GaussHermite;
use crate::rng;
use crate::scalar::Scalar;

const PSD_REL_TOL: f64 = 1e-10;
const LAMBDA_MIN: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Linear,
    Sign,
    Erf,
    Relu,
    Tanh,
}

impl ActivationKind {
    pub const ALL: [ActivationKind; 5] = [
        ActivationKind::Linear,
        ActivationKind::Sign,
        ActivationKind::Erf,
        ActivationKind::Relu,
        ActivationKind::Tanh,
    ];

    #[inline]
    pub fn eval<T: Scalar>(self, u: T) -> T {
        match self {
            ActivationKind::Linear => u,
            ActivationKind::Sign => {
                if u.is_sign_negative() {
                    -T::one()
                } else {
                    T::one()
                }
            }
            ActivationKind::Erf => Scalar::erf(u * T::FRAC_1_SQRT_2()),
            ActivationKind::Relu => {
                if u > T::zero() {
                    u
                } else {
                    T::zero()
                }
            }
            ActivationKind::Tanh => num_traits::Float::tanh(u),
        }
    }

    #[inline]
    pub fn deriv<T: Scalar>(self, u: T) -> T {
        match self {
            ActivationKind::Linear => T::one(),
            ActivationKind::Sign => T::zero(),
            ActivationKind::Erf => {
                let c = T::of((2.0 / PI).sqrt());
                c * num_traits::Float::exp(-u * u * T::of(0.5))
            }
            ActivationKind::Relu => {
                if u > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            ActivationKind::Tanh => {
                let t = num_traits::Float::tanh(u);
                T::one() - t * t
            }
        }
    }

    #[inline]
    pub fn second_deriv<T: Scalar>(self, u: T) -> T {
        match self {
            ActivationKind::Linear | ActivationKind::Sign | ActivationKind::Relu => T::zero(),
            ActivationKind::Erf => -u * self.deriv(u),
            ActivationKind::Tanh => {
                let t = num_traits::Float::tanh(u);
                -T::of(2.0) * t * (T::one() - t * t)
            }
        }
    }

    pub fn is_odd(self) -> bool {
        !matches!(self, ActivationKind::Relu)
    }

    pub fn is_smooth(self) -> bool {
        matches!(
            self,
            ActivationKind::Linear | ActivationKind::Erf | ActivationKind::Tanh
        )
    }

    /// `sup |g|` for bounded kinds.
    pub fn bound(self) -> Option<f64> {
        match self {
            ActivationKind::Sign | ActivationKind::Erf | ActivationKind::Tanh => Some(1.0),
            _ => None,
        }
    }
}

/// First three normalized Hermite coefficients `σ̂(1), σ̂(2), σ̂(3)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HermiteTriple {
    pub h1: f64,
    pub h2: f64,
    pub h3: f64,
}

pub const HERMITE_NODES: usize = 200;

pub fn hermite_coefficients(kind: ActivationKind) -> HermiteTriple {
    match kind {
        ActivationKind::Linear => HermiteTriple { h1: 1.0, h2: 0.0, h3: 0.0 },
        ActivationKind::Sign => HermiteTriple {
            h1: (2.0 / PI).sqrt(),
            h2: 0.0,
            h3: -2.0 / (12.0 * PI).sqrt(),
        },
        ActivationKind::Erf => HermiteTriple {
            h1: 1.0 / PI.sqrt(),
            h2: 0.0,
            h3: -1.0 / (2.0 * (6.0 * PI).sqrt()),
        },
        ActivationKind::Relu => HermiteTriple {
            h1: 0.5,
            h2: 1.0 / (2.0 * PI.sqrt()),
            h3: 0.0,
        },
        ActivationKind::Tanh => {
            let gh = GaussHermite::new(HERMITE_NODES);
            let g = |u: f64| kind.eval(u);
            HermiteTriple {
                h1: gh.expect(|u| g(u) * u),
                // odd: the even projection vanishes identically
                h2: 0.0,
                h3: gh.expect(|u| g(u) * (u * u * u - 3.0 * u)) / 6f64.sqrt(),
            }
        }
    }
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
}

const MC_CHUNK: usize = 1 << 16;

/// Vector-valued Gaussian expectation `E f(x)`, `x ~ N(0, C)`, with `C` a `d x d`
/// row-major covariance. `f` writes `n_out` values per sample.
///
/// Samples are drawn in chunks of 65536, each chunk from its own stream derived
/// from `(seed, chunk)`, and reduced in chunk order.
pub fn gaussian_expectations_mc<F>(
    f: F,
    n_out: usize,
    c: &[f64],
    d: usize,
    n: usize,
    seed: u64,
) -> Result<Vec<McEstimate>>
where
    F: Fn(&[f64], &mut [f64]),
{
    if c.len() != d * d {
        return Err(Error::Dimension {
            context: "gaussian_expectation_mc covariance",
            expected: d * d,
            got: c.len(),
        });
    }
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need n >= 2 samples, got {n}")));
    }
    let l = psd_factor(c, d, PSD_REL_TOL)?;

    let mut count = 0.0f64;
    let mut mean = vec![0.0f64; n_out];
    let mut m2 = vec![0.0f64; n_out];
    let mut z = vec![0.0f64; d];
    let mut x = vec![0.0f64; d];
    let mut out = vec![0.0f64; n_out];
    let n_chunks = n.div_ceil(MC_CHUNK);
    for chunk in 0..n_chunks {
        let mut r = rng::stream(seed, "gaussian-mc", chunk as u64);
        let len = MC_CHUNK.min(n - chunk * MC_CHUNK);
        let mut cmean = vec![0.0f64; n_out];
        let mut cm2 = vec![0.0f64; n_out];
        for s in 0..len {
            for zi in z.iter_mut() {
                *zi = StandardNormal.sample(&mut r);
            }
            for i in 0..d {
                let row = &l[i * d..(i + 1) * d];
                x[i] = row.iter().zip(&z).map(|(a, b)| a * b).sum();
            }
            f(&x, &mut out);
            let k = (s + 1) as f64;
            for o in 0..n_out {
                let delta = out[o] - cmean[o];
                cmean[o] += delta / k;
                cm2[o] += delta * (out[o] - cmean[o]);
            }
        }
        let nb = len as f64;
        let tot = count + nb;
        for o in 0..n_out {
            let delta = cmean[o] - mean[o];
            mean[o] += delta * nb / tot;
            m2[o] += cm2[o] + delta * delta * count * nb / tot;
        }
        count = tot;
    }
    Ok(mean
        .iter()
        .zip(&m2)
        .map(|(&mu, &s)| McEstimate {
            mean: mu,
            stderr: (s / (count - 1.0) / count).sqrt(),
        })
        .collect())
}

/// Scalar Gaussian expectation `E f(x)`, `x ~ N(0, C)`.
pub fn gaussian_expectation_mc<F>(f: F, c: &[f64], d: usize, n: usize, seed: u64) -> Result<McEstimate>
where
    F: Fn(&[f64]) -> f64,
{
    let v = gaussian_expectations_mc(|x, o| o[0] = f(x), 1, c, d, n, seed)?;
    Ok(v[0])
}

/// Sample size and seed used when `i2`/`i3`/`i4` have no closed form.
#[derive(Debug, Clone, Copy)]
pub struct McOptions {
    pub n: usize,
    pub seed: u64,
}

impl Default for McOptions {
    fn default() -> Self {
        McOptions { n: 1_000_000, seed: 0 }
    }
}

fn flat<T: Scalar, const D: usize>(c: &[[T; D]; D]) -> Vec<f64> {
    c.iter().flat_map(|r| r.iter().map(|v| v.to_f64_lossy())).collect()
}

fn check<T: Scalar, const D: usize>(c: &[[T; D]; D]) -> Result<()> {
    let (ev, _) = crate::linalg::jacobi_eigen(&flat(c), D);
    crate::linalg::check_psd(&ev, PSD_REL_TOL)
}

#[inline]
fn clamp_unit<T: Scalar>(x: T) -> T {
    x.max(-T::one()).min(T::one())
}

/// `E[g(x1) g(x2)]`.
pub fn i2<T: Scalar>(kind: ActivationKind, c: &[[T; 2]; 2]) -> Result<T> {
    i2_with(kind, c, &McOptions::default())
}

pub fn i2_with<T: Scalar>(kind: ActivationKind, c: &[[T; 2]; 2], mc: &McOptions) -> Result<T> {
    check(c)?;
    let (c11, c12, c22) = (c[0][0], c[0][1], c[1][1]);
    let two_pi = T::FRAC_2_PI();
    Ok(match kind {
        ActivationKind::Linear => c12,
        ActivationKind::Erf => erf_i2(c11, c12, c22),
        ActivationKind::Sign => {
            let den = (c11 * c22).sqrt();
            if den <= T::zero() {
                // one field is identically zero; sign(0) = +1
                if c11 <= T::zero() && c22 <= T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            } else {
                two_pi * clamp_unit(c12 / den).asin()
            }
        }
        ActivationKind::Relu => {
            let den = (c11 * c22).sqrt();
            if den <= T::zero() {
                T::zero()
            } else {
                let r = clamp_unit(c12 / den);
                let th = r.acos();
                den / (T::of(2.0) * T::PI()) * (th.sin() + (T::PI() - th) * r)
            }
        }
        ActivationKind::Tanh => {
            let v = gaussian_expectation_mc(
                |x| kind.eval(x[0]) * kind.eval(x[1]),
                &flat(c),
                2,
                mc.n,
                mc.seed,
            )?;
            T::of(v.mean)
        }
    })
}

/// `E[g(x1) g̃(x2)]` for possibly different activations. Closed forms cover every
/// pair drawn from {Linear, Sign, Erf} and identical ReLU pairs; other pairs use
/// Monte Carlo.
pub fn i2_mixed<T: Scalar>(g: ActivationKind, gt: ActivationKind, c: &[[T; 2]; 2]) -> Result<T> {
    i2_mixed_with(g, gt, c, &McOptions::default())
}

pub fn i2_mixed_with<T: Scalar>(
    g: ActivationKind,
    gt: ActivationKind,
    c: &[[T; 2]; 2],
    mc: &McOptions,
) -> Result<T> {
    use ActivationKind::*;
    if g == gt {
        return i2_with(g, c, mc);
    }
    check(c)?;
    let (c11, c12, c22) = (c[0][0], c[0][1], c[1][1]);
    let one = T::one();
    let sqrt_2_pi = T::FRAC_2_PI().sqrt();
    // E[x1 f(x2)] = C12 E[f'(x2)]
    let linear_cross = |other: ActivationKind, var: T| -> T {
        match other {
            Sign => {
                if var > T::zero() {
                    c12 * sqrt_2_pi / var.sqrt()
                } else {
                    T::zero()
                }
            }
            _ => c12 * sqrt_2_pi / (one + var).sqrt(),
        }
    };
    Ok(match (g, gt) {
        (Linear, Sign) | (Linear, Erf) => linear_cross(gt, c22),
        (Sign, Linear) | (Erf, Linear) => linear_cross(g, c11),
        (Sign, Erf) | (Erf, Sign) => {
            let (vs, ve) = if g == Sign { (c11, c22) } else { (c22, c11) };
            let den = (vs * (one + ve)).sqrt();
            if den > T::zero() {
                T::FRAC_2_PI() * clamp_unit(c12 / den).asin()
            } else {
                T::zero()
            }
        }
        _ => {
            let v = gaussian_expectation_mc(|x| g.eval(x[0]) * gt.eval(x[1]), &flat(c), 2, mc.n, mc.seed)?;
            T::of(v.mean)
        }
    })
}

/// `E[g'(x1) x2 g(x3)]`.
pub fn i3<T: Scalar>(kind: ActivationKind, c: &[[T; 3]; 3]) -> Result<T> {
    i3_with(kind, c, &McOptions::default())
}

pub fn i3_with<T: Scalar>(kind: ActivationKind, c: &[[T; 3]; 3], mc: &McOptions) -> Result<T> {
    check(c)?;
    match kind {
        ActivationKind::Linear => Ok(c[1][2]),
        ActivationKind::Sign => Ok(T::zero()),
        ActivationKind::Erf => erf_i3(c),
        ActivationKind::Relu | ActivationKind::Tanh => {
            let v = gaussian_expectation_mc(
                |x| kind.deriv(x[0]) * x[1] * kind.eval(x[2]),
                &flat(c),
                3,
                mc.n,
                mc.seed,
            )?;
            Ok(T::of(v.mean))
        }
    }
}

/// `E[g'(x1) g'(x2) g(x3) g(x4)]`.
pub fn i4<T: Scalar>(kind: ActivationKind, c: &[[T; 4]; 4]) -> Result<T> {
    i4_with(kind, c, &McOptions::default())
}

pub fn i4_with<T: Scalar>(kind: ActivationKind, c: &[[T; 4]; 4], mc: &McOptions) -> Result<T> {
    check(c)?;
    match kind {
        ActivationKind::Linear => Ok(c[2][3]),
        ActivationKind::Sign => Ok(T::zero()),
        ActivationKind::Erf => erf_i4(c),
        ActivationKind::Relu | ActivationKind::Tanh => {
            let v = gaussian_expectation_mc(
                |x| kind.deriv(x[0]) * kind.deriv(x[1]) * kind.eval(x[2]) * kind.eval(x[3]),
                &flat(c),
                4,
                mc.n,
                mc.seed,
            )?;
            Ok(T::of(v.mean))
        }
    }
}

#[inline]
pub(crate) fn erf_i2<T: Scalar>(c11: T, c12: T, c22: T) -> T {
    let one = T::one();
    T::FRAC_2_PI() * clamp_unit(c12 / ((one + c11) * (one + c22)).sqrt()).asin()
}

#[inline]
pub(crate) fn erf_i3<T: Scalar>(c: &[[T; 3]; 3]) -> Result<T> {
    let one = T::one();
    let (c11, c12, c13, c23, c33) = (c[0][0], c[0][1], c[0][2], c[1][2], c[2][2]);
    let l3 = (one + c11) * (one + c33) - c13 * c13;
    if l3.to_f64_lossy() <= LAMBDA_MIN {
        return Err(Error::SingularCovariance {
            context: "i3",
            value: l3.to_f64_lossy(),
        });
    }
    Ok(T::FRAC_2_PI() / l3.sqrt() * (c23 * (one + c11) - c12 * c13) / (one + c11))
}

#[inline]
pub(crate) fn erf_i4<T: Scalar>(c: &[[T; 4]; 4]) -> Result<T> {
    let one = T::one();
    let two = T::of(2.0);
    let (c11, c12, c13, c14) = (c[0][0], c[0][1], c[0][2], c[0][3]);
    let (c22, c23, c24) = (c[1][1], c[1][2], c[1][3]);
    let (c33, c34, c44) = (c[2][2], c[2][3], c[3][3]);
    let l4 = (one + c11) * (one + c22) - c12 * c12;
    let l0 = l4 * c34 - c23 * c24 * (one + c11) - c13 * c14 * (one + c22)
        + c12 * c13 * c24
        + c12 * c14 * c23;
    let l1 = l4 * (one + c33) - c23 * c23 * (one + c11) - c13 * c13 * (one + c22)
        + two * c12 * c13 * c23;
    let l2 = l4 * (one + c44) - c24 * c24 * (one + c11) - c14 * c14 * (one + c22)
        + two * c12 * c14 * c24;
    for (v, ctx) in [(l4, "i4 (Λ4)"), (l1, "i4 (Λ1)"), (l2, "i4 (Λ2)")] {
        if v.to_f64_lossy() <= LAMBDA_MIN {
            return Err(Error::SingularCovariance {
                context: ctx,
                value: v.to_f64_lossy(),
            });
        }
    }
    let four_pi2 = T::of(4.0 / (PI * PI));
    Ok(four_pi2 / l4.sqrt() * clamp_unit(l0 / (l1 * l2).sqrt()).asin())
}

/// `E[g''(x1) g(x2)]` for a smooth kind, from `E[g'(x1) x1 g(x2)] = -E[g''(x1) g(x2)]`
/// when `g'' = -u g'` (Erf), otherwise by Monte Carlo.
pub fn stein_second_deriv_moment<T: Scalar>(
    kind: ActivationKind,
    c11: T,
    c12: T,
    c22: T,
) -> Result<T> {
    match kind {
        ActivationKind::Linear | ActivationKind::Sign | ActivationKind::Relu => Ok(T::zero()),
        ActivationKind::Erf => {
            let c = [[c11, c11, c12], [c11, c11, c12], [c12, c12, c22]];
            Ok(-erf_i3(&c)?)
        }
        ActivationKind::Tanh => {
            let mc = McOptions::default();
            let v = gaussian_expectation_mc(
                |x| kind.second_deriv(x[0]) * kind.eval(x[1]),
                &[c11, c12, c12, c22].map(|v| v.to_f64_lossy()),
                2,
                mc.n,
                mc.seed,
            )?;
            Ok(T::of(v.mean))
        }
    }
}

/// `E[g'(x1) g'(x2)]`.
pub fn derivative_product_moment<T: Scalar>(
    kind: ActivationKind,
    c11: T,
    c12: T,
    c22: T,
) -> Result<T> {
    let one = T::one();
    match kind {
        ActivationKind::Linear => Ok(one),
        ActivationKind::Sign => Ok(T::zero()),
        ActivationKind::Erf => {
            let det = (one + c11) * (one + c22) - c12 * c12;
            if det.to_f64_lossy() <= LAMBDA_MIN {
                return Err(Error::SingularCovariance {
                    context: "E[g'g']",
                    value: det.to_f64_lossy(),
                });
            }
            Ok(T::FRAC_2_PI() / det.sqrt())
        }
        ActivationKind::Relu => {
            // P(x1 > 0, x2 > 0)
            let den = (c11 * c22).sqrt();
            if den <= T::zero() {
                return Ok(T::zero());
            }
            let r = clamp_unit(c12 / den);
            Ok(T::of(0.25) + r.asin() / (T::of(2.0) * T::PI()))
        }
        ActivationKind::Tanh => {
            let mc = McOptions::default();
            let v = gaussian_expectation_mc(
                |x| kind.deriv(x[0]) * kind.deriv(x[1]),
                &[c11, c12, c12, c22].map(|v| v.to_f64_lossy()),
                2,
                mc.n,
                mc.seed,
            )?;
            Ok(T::of(v.mean))
        }
    }
}
