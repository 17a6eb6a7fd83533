mod common;

use std::f64::consts::PI;

use faer::Mat;
use geqlab::activations::ActivationKind;
use geqlab::erm::{feature_moments, FeatureMap};
use geqlab::replica::*;
use geqlab::Generator;
use geqlab::Error;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

const LIN: ActivationKind = ActivationKind::Linear;
const SIGN: ActivationKind = ActivationKind::Sign;
const ERF: ActivationKind = ActivationKind::Erf;

fn identity_inputs(n: usize, lambda: f64, alpha: f64, delta: f64) -> SpectralInputs {
    SpectralInputs::from_spectrum(vec![1.0; n], vec![1.0; n], lambda, alpha, delta).unwrap()
}

fn state(v: f64, q: f64, m: f64) -> ReplicaState {
    ReplicaState { V: v, q, m, Vhat: 0.0, qhat: 0.0, mhat: 0.0 }
}

// Ω = ΦΦᵀ + R keeps the joint feature/latent covariance PSD.
fn random_spectral(seed: u64, nt: usize, d: usize, lambda: f64, alpha: f64) -> SpectralInputs {
    let mut r = common::rng(seed);
    let extra = common::random_psd(&mut r, nt);
    let phi: Vec<f64> = common::gaussian_vec(&mut r, nt * d).iter().map(|x| x / (d as f64).sqrt()).collect();
    let ph = Mat::from_fn(nt, d, |i, j| phi[i * d + j]);
    let om = &ph * ph.transpose() + Mat::from_fn(nt, nt, |i, j| extra[i * nt + j]);
    SpectralInputs::from_phi(om.as_ref(), ph.as_ref(), lambda, alpha, d as f64 / nt as f64).unwrap()
}

#[test]
fn channel_examples() {
    let sign = ChannelSpec::new(Loss::Square, SIGN, 1.0).unwrap();
    let (z, _) = teacher_channel(&sign, 1.0, 0.0, 0.7).unwrap();
    assert!((z - 0.5).abs() < 1e-15);
    for &(w, v) in &[(0.0, 1.0), (1.3, 0.2), (-2.0, 4.0)] {
        let zp = teacher_channel(&sign, 1.0, w, v).unwrap().0;
        let zm = teacher_channel(&sign, -1.0, w, v).unwrap().0;
        assert!((zp + zm - 1.0).abs() < 1e-14);
    }
    let lin = ChannelSpec::new(Loss::Square, LIN, 1.0).unwrap();
    for &v in &[0.1, 1.0, 3.0] {
        let (z, dz) = teacher_channel(&lin, 0.4, 0.4, v).unwrap();
        assert!((z - 1.0 / (2.0 * PI * v).sqrt()).abs() < 1e-14);
        assert!(dz.abs() < 1e-15);
    }
}

#[test]
fn channel_errors() {
    let sign = ChannelSpec::new(Loss::Square, SIGN, 1.0).unwrap();
    assert!(matches!(teacher_channel(&sign, 1.0, 0.0, 0.0), Err(Error::InvalidArgument(_))));
    assert!(matches!(teacher_channel(&sign, 0.5, 0.0, 1.0), Err(Error::InvalidArgument(_))));
    assert!(ChannelSpec::new(Loss::Square, SIGN, 0.0).is_err());
    assert!(ChannelSpec::new(Loss::Square, ActivationKind::Relu, 1.0).is_err());
}

#[test]
fn erf_channel_is_a_density() {
    let spec = ChannelSpec::new(Loss::Square, ERF, 1.0).unwrap();
    for &(w, v) in &[(0.0, 0.5), (0.3, 0.5), (-0.8, 0.3)] {
        let total: f64 = common::gauss_legendre(2000, -1.0, 1.0)
            .iter()
            .map(|&(y, wt)| wt * teacher_channel(&spec, y, w, v).unwrap().0)
            .sum();
        assert!((total - 1.0).abs() < 1e-6, "total {total}");
    }
}

#[test]
fn channel_derivative_matches_finite_difference() {
    let h = 1e-6;
    for (kind, y) in [(SIGN, 1.0), (SIGN, -1.0), (LIN, 0.7), (ERF, 0.4)] {
        let spec = ChannelSpec::new(Loss::Square, kind, 1.0).unwrap();
        for &(w, v) in &[(0.2, 0.5), (-0.5, 1.2)] {
            let dz = teacher_channel(&spec, y, w, v).unwrap().1;
            let fd = (teacher_channel(&spec, y, w + h, v).unwrap().0 - teacher_channel(&spec, y, w - h, v).unwrap().0)
                / (2.0 * h);
            assert!((dz - fd).abs() < 1e-7 * (1.0 + fd.abs()), "{kind:?}: {dz} vs {fd}");
        }
    }
}

#[test]
fn proximal_examples() {
    for &y in &[-1.0, 0.3, 2.0] {
        let (eta, _) = proximal(Loss::Square, y, y, 0.8).unwrap();
        assert!((eta - y).abs() < 1e-15);
        let (eta, _) = proximal(Loss::Square, y, 0.37, 1e-10).unwrap();
        assert!((eta - 0.37).abs() < 1e-9);
    }
    assert!(proximal(Loss::Logistic, 1.0, 0.0, 0.0).is_err());
}

#[test]
fn logistic_proximal_matches_grid_search() {
    let obj = |x: f64| x * x / 2.0 + softplus(-x);
    let (mut best_x, mut best_f) = (0.0, f64::INFINITY);
    let mut x = -3.0;
    while x <= 3.0 {
        let f = obj(x);
        if f < best_f {
            best_f = f;
            best_x = x;
        }
        x += 1e-6;
    }
    let (eta, _) = proximal(Loss::Logistic, 1.0, 0.0, 1.0).unwrap();
    assert!((eta - best_x).abs() < 1e-6, "{eta} vs {best_x}");
    assert!((eta - 0.401058).abs() < 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn logistic_proximal_is_stationary(y in prop::bool::ANY, w in -8.0f64..8.0, v in 1e-3f64..50.0) {
        let y = if y { 1.0 } else { -1.0 };
        let (eta, deta) = proximal(Loss::Logistic, y, w, v).unwrap();
        prop_assert!(((eta - w) / v - y * sigmoid(-y * eta)).abs() <= 1e-12);
        let h = 1e-5;
        let fd = (proximal(Loss::Logistic, y, w + h, v).unwrap().0 - proximal(Loss::Logistic, y, w - h, v).unwrap().0) / (2.0 * h);
        prop_assert!((deta - fd).abs() < 1e-6, "{} vs {}", deta, fd);
        prop_assert!(deta > 0.0 && deta <= 1.0);
    }

    #[test]
    fn logistic_proximal_wide_range(y in prop::bool::ANY, w in -60.0f64..60.0, lv in -6.0f64..3.0) {
        let (y, v) = (if y { 1.0 } else { -1.0 }, 10f64.powf(lv));
        let (eta, _) = proximal(Loss::Logistic, y, w, v).unwrap();
        prop_assert!((eta - w - v * y * sigmoid(-y * eta)).abs() <= 1e-12 * (1.0 + eta.abs() + v));
    }

    #[test]
    fn square_proximal_minimizes(y in -3.0f64..3.0, w in -3.0f64..3.0, v in 1e-3f64..10.0, dx in -1.0f64..1.0) {
        let (eta, _) = proximal(Loss::Square, y, w, v).unwrap();
        let obj = |x: f64| (x - w) * (x - w) / (2.0 * v) + Loss::Square.value(y, x);
        prop_assert!(obj(eta) <= obj(eta + dx) + 1e-14);
    }
}

#[test]
fn hat_update_without_data_is_zero() {
    let ch = ChannelSpec::new(Loss::Logistic, SIGN, 1.0).unwrap();
    let inp = identity_inputs(4, 0.01, 0.0, 1.0);
    assert_eq!(hat_update(&state(1.0, 0.3, 0.1), &inp, &ch).unwrap(), (0.0, 0.0, 0.0));
}

#[test]
fn hat_update_degenerate_overlap() {
    let ch = ChannelSpec::new(Loss::Square, SIGN, 1.0).unwrap();
    for &(alpha, v) in &[(0.5, 1.0), (2.0, 0.3), (3.0, 5.0)] {
        let inp = identity_inputs(4, 0.01, alpha, 1.0);
        let (vh, qh, mh) = hat_update(&state(v, 0.0, 0.0), &inp, &ch).unwrap();
        assert!((vh - alpha / (1.0 + v)).abs() < 1e-13);
        assert!((qh - alpha / ((1.0 + v) * (1.0 + v))).abs() < 1e-13);
        // only the ξ = 0 point survives; ∂ωZ̃ = ±φ(0) at y = ±1
        let mh_ref = alpha * (2.0 / PI).sqrt() / (1.0 + v);
        assert!((mh - mh_ref).abs() < 1e-13);
    }
}

#[test]
fn mhat_prefactor_scales_with_delta() {
    for ch in [
        ChannelSpec::new(Loss::Square, ERF, 1.0).unwrap(),
        ChannelSpec::new(Loss::Logistic, SIGN, 1.0).unwrap(),
    ] {
        let st = state(0.7, 0.4, 0.25);
        let base = hat_update(&st, &identity_inputs(4, 0.01, 1.5, 1.0), &ch).unwrap().2 / 1.5;
        for &(alpha, delta) in &[(1.5, 2.0), (0.5, 4.0), (3.0, 0.25)] {
            let mh = hat_update(&st, &identity_inputs(4, 0.01, alpha, delta), &ch).unwrap().2;
            assert!((mh * delta.sqrt() / alpha - base).abs() < 1e-13 * base.abs().max(1.0));
        }
    }
}

#[test]
fn square_loss_hats_match_gaussian_integrals() {
    // (η − ω)/V = (y − ω)/(1 + V), so every integral reduces to low Gaussian moments
    for &(v, q, m, rho, alpha, delta) in
        &[(1.0, 0.5, 0.3, 1.0, 2.0, 1.0), (0.2, 1.4, 0.9, 1.0, 0.5, 3.0), (3.0, 0.05, 0.02, 2.0, 1.0, 0.5)]
    {
        let st = state(v, q, m);
        let inp = identity_inputs(4, 0.01, alpha, delta);
        let lin = ChannelSpec::new(Loss::Square, LIN, rho).unwrap();
        let (vh, qh, mh) = hat_update(&st, &inp, &lin).unwrap();
        let c = 1.0 + v;
        assert!((vh - alpha / c).abs() < 1e-10);
        assert!((qh - alpha * (rho - 2.0 * m + q) / (c * c)).abs() < 1e-10);
        assert!((mh - alpha / (delta.sqrt() * c)).abs() < 1e-10);

        let sign = ChannelSpec::new(Loss::Square, SIGN, rho).unwrap();
        let (vh, qh, mh) = hat_update(&st, &inp, &sign).unwrap();
        let k = (2.0 / (PI * rho)).sqrt();
        assert!((vh - alpha / c).abs() < 1e-10);
        assert!((qh - alpha * (1.0 - 2.0 * m * k + q) / (c * c)).abs() < 1e-10);
        assert!((mh - alpha * k / (delta.sqrt() * c)).abs() < 1e-10);
    }
}

#[test]
fn trace_update_identity_is_scalar() {
    for &(lambda, vh, qh, mh, delta) in &[(0.01, 2.0, 0.5, 0.7, 1.0), (1.0, 0.0, 0.0, 0.0, 2.0), (0.1, 5.0, 3.0, -1.0, 0.3)] {
        let inp = identity_inputs(16, lambda, 1.0, delta);
        let (v, q, m) = trace_update((vh, qh, mh), &inp).unwrap();
        let den = lambda + vh;
        assert!((v - 1.0 / den).abs() <= 1e-15 * v.abs().max(1.0));
        assert!((q - (qh + mh * mh) / (den * den)).abs() <= 1e-15 * q.abs().max(1.0));
        assert!((m - mh / (delta.sqrt() * den)).abs() <= 1e-15 * m.abs().max(1.0));
    }
}

#[test]
fn trace_update_without_mhat() {
    let inp = random_spectral(3, 20, 10, 0.05, 1.0);
    let (_, q0, m) = trace_update((1.3, 0.4, 0.0), &inp).unwrap();
    assert_eq!(m, 0.0);
    let pure: f64 = inp
        .omega_eigs
        .iter()
        .map(|&w| 0.4 * w * w / ((0.05 + 1.3 * w) * (0.05 + 1.3 * w)))
        .sum::<f64>()
        / 20.0;
    assert!((q0 - pure).abs() < 1e-14);
}

#[test]
fn trace_update_matches_dense_inverse() {
    let (nt, d) = (64, 40);
    let mut r = common::rng(77);
    let omega = common::random_psd(&mut r, nt);
    let phi: Vec<f64> = common::gaussian_vec(&mut r, nt * d).iter().map(|x| x / (d as f64).sqrt()).collect();
    let mut ppt = vec![0.0; nt * nt];
    for i in 0..nt {
        for j in 0..nt {
            ppt[i * nt + j] = (0..d).map(|k| phi[i * d + k] * phi[j * d + k]).sum();
        }
    }
    let (lambda, delta) = (0.02, d as f64 / nt as f64);
    let (vh, qh, mh) = (1.7, 0.6, 0.9);
    let om = Mat::from_fn(nt, nt, |i, j| omega[i * nt + j]);
    let pm = Mat::from_fn(nt, nt, |i, j| ppt[i * nt + j]);
    let inp = SpectralInputs::new(om.as_ref(), pm.as_ref(), lambda, 1.0, delta).unwrap();
    let (v, q, m) = trace_update((vh, qh, mh), &inp).unwrap();

    let mm = |a: &[f64], b: &[f64]| {
        let mut c = vec![0.0; nt * nt];
        for i in 0..nt {
            for k in 0..nt {
                let aik = a[i * nt + k];
                for j in 0..nt {
                    c[i * nt + j] += aik * b[k * nt + j];
                }
            }
        }
        c
    };
    let tr = |a: &[f64]| (0..nt).map(|i| a[i * nt + i]).sum::<f64>();
    let mut res = omega.iter().map(|x| vh * x).collect::<Vec<_>>();
    for i in 0..nt {
        res[i * nt + i] += lambda;
    }
    let inv = common::dense_inverse(&res, nt);
    let inv2 = mm(&inv, &inv);
    let mix: Vec<f64> = omega.iter().zip(&ppt).map(|(o, p)| qh * o + mh * mh * p).collect();
    let n = nt as f64;
    let v_ref = tr(&mm(&inv, &omega)) / n;
    let q_ref = tr(&mm(&mm(&mix, &omega), &inv2)) / n;
    let m_ref = mh / (n * delta.sqrt()) * tr(&mm(&ppt, &inv));
    assert!((v - v_ref).abs() < 1e-10 * v_ref.abs().max(1.0), "{v} vs {v_ref}");
    assert!((q - q_ref).abs() < 1e-10 * q_ref.abs().max(1.0), "{q} vs {q_ref}");
    assert!((m - m_ref).abs() < 1e-10 * m_ref.abs().max(1.0), "{m} vs {m_ref}");
}

#[test]
fn trace_update_singular_resolvent() {
    let inp = SpectralInputs::from_spectrum(vec![1.0, 0.5], vec![1.0, 1.0], 0.0, 1.0, 1.0).unwrap();
    assert!(matches!(trace_update((0.0, 0.0, 0.0), &inp), Err(Error::SingularCovariance { .. })));
}

#[test]
fn spectral_inputs_validation() {
    assert!(SpectralInputs::from_spectrum(vec![1.0, -0.5], vec![1.0, 1.0], 0.1, 1.0, 1.0).is_err());
    assert!(SpectralInputs::from_spectrum(vec![1.0], vec![1.0, 1.0], 0.1, 1.0, 1.0).is_err());
    assert!(SpectralInputs::from_spectrum(vec![1.0], vec![1.0], 0.1, 1.0, 0.0).is_err());
    let inp = random_spectral(1, 12, 6, 0.1, 1.0);
    assert_eq!(inp.n_tilde(), 12);
    assert!(inp.with_alpha(3.0).alpha == 3.0 && inp.with_lambda(0.5).lambda == 0.5);
}

#[test]
fn solve_without_data() {
    let inp = random_spectral(5, 30, 15, 0.1, 0.0);
    for ch in [
        ChannelSpec::new(Loss::Square, LIN, 1.0).unwrap(),
        ChannelSpec::new(Loss::Logistic, SIGN, 1.0).unwrap(),
    ] {
        let sol = solve(&inp, &ch, &SolveOptions::default()).unwrap();
        assert!(sol.converged);
        let s = sol.state;
        assert!((s.V - inp.gamma() / 0.1).abs() < 1e-7, "{} vs {}", s.V, inp.gamma() / 0.1);
        assert!(s.q.abs() < 1e-8 && s.m.abs() < 1e-8);
    }
}

fn check_fixed_point(sol: &Solution, rho: f64, g: ActivationKind, gt: ActivationKind, opts: &SolveOptions) -> f64 {
    assert!(sol.converged, "not converged after {} iterations", sol.iters);
    assert!(*sol.residuals.last().unwrap() <= opts.tol);
    let s = sol.state;
    assert!(s.V > 0.0 && s.q >= 0.0);
    assert!(s.q >= s.m * s.m / rho - 1e-8, "q {} m {}", s.q, s.m);
    let eps = test_error(rho, s.m, s.q, g, gt).unwrap();
    assert!(eps >= 0.0);
    eps
}

#[test]
fn solve_fixed_point_invariants() {
    let opts = SolveOptions::default();
    let cases = [
        (Loss::Square, LIN, LIN, 1.0),
        (Loss::Square, ERF, ERF, 1.0),
        (Loss::Logistic, SIGN, SIGN, 1.0),
        (Loss::Square, SIGN, LIN, 2.0),
    ];
    for (i, &(loss, gt, g, rho)) in cases.iter().enumerate() {
        let inp = random_spectral(10 + i as u64, 40, 20, 0.01, 1.5);
        let ch = ChannelSpec::new(loss, gt, rho).unwrap();
        let sol = solve(&inp, &ch, &opts).unwrap();
        check_fixed_point(&sol, rho, g, gt, &opts);
        // the state is a fixed point of the undamped map
        let s = sol.state;
        let hats = hat_update(&s, &inp, &ch).unwrap();
        let (v, q, m) = trace_update(hats, &inp).unwrap();
        assert!((v - s.V).abs() < 1e-6 && (q - s.q).abs() < 1e-6 && (m - s.m).abs() < 1e-6);
    }
}

#[test]
fn solve_residuals_decrease_after_burn_in() {
    let opts = SolveOptions::default();
    let inp = random_spectral(21, 40, 20, 0.01, 2.0);
    let ch = ChannelSpec::new(Loss::Logistic, SIGN, 1.0).unwrap();
    let sol = solve(&inp, &ch, &opts).unwrap();
    assert!(sol.converged);
    let tail = &sol.residuals[sol.residuals.len().min(50)..];
    let meds: Vec<f64> = tail.chunks(10).filter(|c| c.len() == 10).map(common::median).collect();
    for w in meds.windows(2) {
        assert!(w[1] <= w[0], "{meds:?}");
    }
}

#[test]
fn solve_rejects_bad_damping() {
    let inp = identity_inputs(4, 0.01, 1.0, 1.0);
    let ch = ChannelSpec::new(Loss::Square, LIN, 1.0).unwrap();
    let opts = SolveOptions { damping: 1.0, ..SolveOptions::default() };
    assert!(solve(&inp, &ch, &opts).is_err());
}

#[test]
fn solve_flags_non_convergence() {
    let inp = random_spectral(4, 30, 15, 0.01, 1.0);
    let ch = ChannelSpec::new(Loss::Logistic, SIGN, 1.0).unwrap();
    let opts = SolveOptions { max_iter: 3, ..SolveOptions::default() };
    let sol = solve(&inp, &ch, &opts).unwrap();
    assert!(!sol.converged);
    assert_eq!(sol.iters, 3);
    assert_eq!(sol.residuals.len(), 3);
}

#[test]
fn ridge_error_decreases_with_alpha() {
    let opts = SolveOptions::default();
    let fm = FeatureMap::random(200, 200, ERF, 31);
    let ms = feature_moments(&Generator::identity(200), &fm, 0, 0).unwrap();
    let inp = SpectralInputs::from_phi(ms.omega.as_ref(), ms.phi.as_ref(), 0.01, 1.0, 1.0).unwrap();
    let ch = ChannelSpec::new(Loss::Square, LIN, 1.0).unwrap();
    let alphas = [0.25, 0.5, 1.0, 2.0, 4.0];
    let rows = sweep(&inp, &ch, &alphas, LIN, &opts).unwrap();
    for w in rows.windows(2) {
        assert!(w[0].converged && w[1].converged);
        assert!(w[1].eps_g <= w[0].eps_g + 1e-7, "{} then {} at alpha {}", w[0].eps_g, w[1].eps_g, w[1].alpha);
    }
    let csv = sweep_csv(&rows);
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), SWEEP_HEADER);
    assert_eq!(SWEEP_HEADER, "alpha,lambda,delta,V,q,m,Vhat,qhat,mhat,eps_g,converged,iters");
    assert_eq!(lines.count(), alphas.len());
    assert_eq!(csv.lines().nth(1).unwrap().split(',').count(), 12);
}

#[test]
fn test_error_examples() {
    for &(rho, q) in &[(1.0f64, 1.0f64), (2.0, 0.5), (0.3, 4.0)] {
        let m = (rho * q).sqrt();
        assert!(test_error(rho, m, q, SIGN, SIGN).unwrap().abs() < 1e-7);
        let e = test_error(rho, 0.0, q, LIN, LIN).unwrap();
        assert!((e - 0.5 * (rho + q)).abs() < 1e-15);
        let e = test_error(rho, 0.5 * m, q, SIGN, SIGN).unwrap();
        assert!((e - 2.0 / 3.0).abs() < 1e-14);
    }
    assert!(matches!(test_error(1.0, 2.0, 1.0, LIN, LIN), Err(Error::NotPsd { .. })));
}

#[test]
fn sign_error_matches_mismatch_probability() {
    let mut r = common::rng(8);
    let n = 400_000;
    let c = 0.5f64;
    let s = (1.0 - c * c).sqrt();
    let errs: Vec<f64> = (0..n)
        .map(|_| {
            let a: f64 = r.sample(StandardNormal);
            let b: f64 = r.sample(StandardNormal);
            let diff = a.signum() - (c * a + s * b).signum();
            0.5 * diff * diff
        })
        .collect();
    let (mean, se) = common::mean_stderr(&errs);
    let e = test_error(1.0, c, 1.0, SIGN, SIGN).unwrap();
    assert!((mean - e).abs() < 4.0 * se, "{mean} ± {se} vs {e}");
}

#[test]
fn mixed_error_matches_monte_carlo() {
    let (rho, m, q) = (1.0f64, 0.4, 0.6);
    let mut r = common::rng(9);
    let l = [rho.sqrt(), m / rho.sqrt(), (q - m * m / rho).sqrt()];
    let errs: Vec<f64> = (0..400_000)
        .map(|_| {
            let a: f64 = r.sample(StandardNormal);
            let b: f64 = r.sample(StandardNormal);
            let nu = l[0] * a;
            let lam = l[1] * a + l[2] * b;
            let d = ERF.eval(nu) - SIGN.eval(lam);
            0.5 * d * d
        })
        .collect();
    let (mean, se) = common::mean_stderr(&errs);
    let e = test_error(rho, m, q, SIGN, ERF).unwrap();
    assert!((mean - e).abs() < 4.0 * se + 1e-3, "{mean} ± {se} vs {e}");
}
