mod common;

use faer::Mat;
use geqlab::activations::{hermite_coefficients, ActivationKind, HermiteTriple};
use geqlab::generators::{sample_weights, Generator, Teacher, WeightLaw};
use geqlab::get_audit::*;
use geqlab::linalg::sym_eigenvalues_desc;
use geqlab::Error;
use proptest::prelude::*;

fn unit_rows(rows: usize, cols: usize, seed: u64) -> Mat<f64> {
    sample_weights(WeightLaw::IidGaussian { scale: 1.0 }, true, rows, cols, seed)
}

/// Rows `(μ, 0.., √(1-μ²), 0..)`, so that `AAᵀ = μ²𝟙 + (1-μ²)I`.
fn equicorrelated(n: usize, mu: f64) -> Mat<f64> {
    let s = (1.0 - mu * mu).sqrt();
    Mat::from_fn(n, n + 1, |i, j| if j == 0 { mu } else if j == i + 1 { s } else { 0.0 })
}

fn all_zero(m: &Mat<f64>) -> bool {
    (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| m[(i, j)] == 0.0))
}

#[test]
fn orthonormal_rows_give_vanishing_corrections() {
    let a = Mat::<f64>::identity(30, 40);
    let w = unit_rows(3, 30, 1);
    let t = Teacher::<f64>::random(2, 40, ActivationKind::Erf, 2);
    let r = get_bound(w.as_ref(), t.w.as_ref(), a.as_ref(), ActivationKind::Relu).unwrap();
    assert!(all_zero(&r.matrices.m1) && all_zero(&r.matrices.m2));
    assert_eq!(r.bound_terms.t1, 0.0);
    assert_eq!(r.bound_terms.t2, 0.0);
    assert!(r.bound_terms.t3 > 0.0);
    assert!((r.bound_terms.t4 - 1.0 / 30f64.sqrt()).abs() < 1e-15);
}

#[test]
fn rotating_the_student_keeps_zero_terms() {
    // with ρ = I the kernels of M1, M2 are the whole space
    let a = Mat::<f64>::identity(12, 12);
    let w = unit_rows(2, 12, 3);
    let q = {
        let g: Mat<f64> = sample_weights(WeightLaw::IidGaussian { scale: 1.0 }, false, 12, 12, 4);
        g.qr().compute_Q()
    };
    let wr = &w * &q;
    for ww in [&w, &wr] {
        let r = get_bound(ww.as_ref(), Mat::<f64>::zeros(1, 12).as_ref(), a.as_ref(), ActivationKind::Erf).unwrap();
        assert_eq!((r.bound_terms.t1, r.bound_terms.t2), (0.0, 0.0));
    }
}

#[test]
fn zero_weights_leave_only_the_quartic_term() {
    let (n, d) = (40, 20);
    let a = unit_rows(n, d, 5);
    let r = get_bound(Mat::<f64>::zeros(2, n).as_ref(), Mat::<f64>::zeros(2, d).as_ref(), a.as_ref(), ActivationKind::Erf).unwrap();
    assert_eq!((r.bound_terms.t1, r.bound_terms.t2, r.bound_terms.t3), (0.0, 0.0, 0.0));
    let mut quartic = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let dot: f64 = (0..d).map(|k| a[(i, k)] * a[(j, k)]).sum();
                quartic += dot.powi(4);
            }
        }
    }
    let want = (1.0 + quartic) / (n as f64).sqrt();
    assert!((r.bound_terms.t4 - want).abs() < 1e-12 * want);
    assert_eq!(r.bound_total, r.bound_terms.t4);
    let s = serde_json::to_value(r.summary()).unwrap();
    assert_eq!(s["bound_total_kind"], "comparative diagnostic");
}

#[test]
fn rho_tilde_has_exact_zero_diagonal() {
    let a: Mat<f64> = sample_weights(WeightLaw::IidGaussian { scale: 1.0 }, false, 20, 9, 1);
    let e = build_equivalence_matrices(a.as_ref(), hermite_coefficients(ActivationKind::Erf)).unwrap();
    assert!((0..20).all(|i| e.rho_tilde[(i, i)] == 0.0));
    assert_eq!(e.rho_tilde[(0, 1)], e.rho[(0, 1)]);
}

#[test]
fn odd_activation_drops_the_second_order_terms() {
    let a = unit_rows(25, 15, 6);
    let h = hermite_coefficients(ActivationKind::Erf);
    assert_eq!(h.h2, 0.0);
    let e = build_equivalence_matrices(a.as_ref(), h).unwrap();
    let k = KMatrices::from_rho(e.rho.as_ref()).unwrap();
    for i in 0..25 {
        for j in 0..25 {
            assert!((e.m2[(i, j)] - h.h3 * h.h3 * k.k22[(i, j)]).abs() < 1e-15);
            assert!((e.m1[(i, j)] - h.h1 * h.h1 * k.k11[(i, j)]).abs() < 1e-15);
        }
    }
}

#[test]
fn m1_of_equicorrelated_rows_matches_closed_form() {
    let (n, mu) = (48, 0.6);
    for kind in [ActivationKind::Erf, ActivationKind::Relu] {
        let h = hermite_coefficients(kind);
        let e = build_equivalence_matrices(equicorrelated(n, mu).as_ref(), h).unwrap();
        let spectra = deterministic_k_spectra(mu, n, h).unwrap();
        for (name, m) in [("M1", &e.m1), ("M2", &e.m2)] {
            let s = spectra.iter().find(|s| s.name == name).unwrap();
            let scale = s.lambda1_closed();
            for i in 0..n {
                for j in 0..n {
                    let want = s.alpha + if i == j { s.beta } else { 0.0 };
                    assert!((m[(i, j)] - want).abs() < 1e-12 * scale, "{kind:?} {name}");
                }
            }
        }
    }
}

#[test]
fn correction_terms_shrink_with_n() {
    let mut med = Vec::new();
    for n in [250usize, 500, 1000] {
        let mut t1 = Vec::new();
        let mut t2 = Vec::new();
        for seed in 0..5u64 {
            let d = n / 2;
            let a: Mat<f64> = sample_weights(WeightLaw::IidGaussian { scale: 1.0 / (d as f64).sqrt() }, true, n, d, 100 + seed);
            let w = unit_rows(2, n, 200 + seed);
            let r = get_bound(w.as_ref(), Mat::<f64>::zeros(1, d).as_ref(), a.as_ref(), ActivationKind::Erf).unwrap();
            t1.push(r.bound_terms.t1);
            t2.push(r.bound_terms.t2);
        }
        med.push((common::median(&t1), common::median(&t2)));
    }
    assert!(med[0].0 > med[1].0 && med[1].0 > med[2].0, "{med:?}");
    assert!(med[0].1 > med[1].1 && med[1].1 > med[2].1, "{med:?}");
}

#[test]
fn frobenius_norm_bounds_spectral() {
    let a = unit_rows(40, 20, 8);
    let w = unit_rows(3, 40, 9);
    let t = Teacher::<f64>::random(2, 20, ActivationKind::Erf, 1);
    let s = get_bound(w.as_ref(), t.w.as_ref(), a.as_ref(), ActivationKind::Erf).unwrap();
    let f = get_bound_with(w.as_ref(), t.w.as_ref(), a.as_ref(), ActivationKind::Erf, MatrixNorm::Frobenius).unwrap();
    assert!(f.bound_terms.t1 >= s.bound_terms.t1 && f.bound_terms.t3 >= s.bound_terms.t3);
    assert!(matches!(
        get_bound(w.as_ref(), t.w.as_ref(), unit_rows(41, 20, 8).as_ref(), ActivationKind::Erf),
        Err(Error::Dimension { .. })
    ));
}

#[test]
fn k_spectra_examples() {
    let h = hermite_coefficients(ActivationKind::Erf);
    for n in [64usize, 256] {
        let mu: f64 = 0.5;
        let sp = deterministic_k_spectra(mu, n, h).unwrap();
        let k11 = &sp[0];
        assert_eq!(k11.name, "K11");
        let nf = n as f64;
        let mu4 = mu.powi(4);
        let l1 = mu4 * ((nf - 2.0) * nf + 1.0) / nf.sqrt();
        assert!((k11.lambda1_closed() - l1).abs() < 1e-13 * l1);
        assert!((k11.closed_form[1] - mu4 / nf.sqrt()).abs() < 1e-15);
        for s in &sp[..4] {
            assert!(s.max_rel_err < 1e-10, "{} at N={n}: {}", s.name, s.max_rel_err);
            assert!(s.ones_cosine >= 1.0 - 1e-10);
        }
    }
    for s in deterministic_k_spectra(0.0, 16, h).unwrap().iter().take(4) {
        assert!(all_zero(&s.matrix), "{}", s.name);
    }
    assert!(deterministic_k_spectra(1.5, 16, h).is_err());
    assert!(deterministic_k_spectra(0.5, 1, h).is_err());
}

#[test]
fn k11_closed_form_slope_is_three_halves() {
    let h = HermiteTriple { h1: 1.0, h2: 0.0, h3: 0.0 };
    let ns = [64usize, 256, 1024];
    let l1: Vec<f64> = ns
        .iter()
        .map(|&n| deterministic_k_spectra(0.3, n, h).unwrap()[0].lambda1_closed())
        .collect();
    let xs: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    assert!((log_log_slope(&xs, &l1) - 1.5).abs() < 0.05);
    assert!((log_log_slope(&[1.0, 10.0, 100.0], &[3.0, 3e2, 3e4]) - 2.0).abs() < 1e-12);
}

#[test]
fn nearly_orthogonal_k21_has_one_order_one_eigenvalue() {
    let st = scaling_study(10.0, 0.5, &[512, 2048], &[1], &[2]).unwrap();
    let l1 = |n| st.median_of("K21", n, |r| r.lambda1).unwrap();
    let l2 = |n| st.median_of("K21", n, |r| r.lambda2.unwrap()).unwrap();
    let r1 = l1(512) / l1(2048);
    let r2 = l2(512) / l2(2048);
    assert!((0.5..=2.0).contains(&r1), "λ1 ratio {r1}");
    assert!((2.0..=8.0).contains(&r2), "λ2 ratio {r2}");
    for r in &st.rows {
        assert!(r.lambda6.unwrap() >= -1e-10 * r.lambda1);
        assert!(r.ones_corr > 0.9);
    }
    let csv = st.to_csv();
    assert_eq!(csv.lines().next().unwrap(), "matrix,N,seed,lambda1,lambda2,lambda6,ones_corr");
    assert_eq!(csv.lines().count(), 3);
    assert!(scaling_study(1.0, 0.5, &[64, 32], &[1], &[0]).is_err());
}

#[test]
fn gaussian_samples_pass_the_cumulant_null() {
    let n = 50_000;
    let mut r = common::rng(3);
    let z = common::gaussian_vec(&mut r, n * 3);
    let s = Mat::from_fn(n, 3, |i, j| z[i * 3 + j] * (j + 1) as f64);
    let dirs = default_directions(3, 64, 1);
    assert_eq!(dirs.len(), 67);
    let rep = gaussianity_cumulants(s.as_ref(), &dirs).unwrap();
    let thr = 5.0 * (24.0 / n as f64).sqrt();
    assert!(rep.max_abs_kurtosis <= thr);
    assert!(rep.max_abs_skewness <= 5.0 * (6.0 / n as f64).sqrt());
    assert!((rep.kurtosis_threshold(5.0) - thr).abs() < 1e-15);

    // a uniform coordinate has excess kurtosis -1.2
    let u = Mat::from_fn(n, 1, |i, _| (i as f64 + 0.5) / n as f64);
    let rep = gaussianity_cumulants(u.as_ref(), &[vec![1.0]]).unwrap();
    assert!((rep.directions[0].excess_kurtosis + 1.2).abs() < 1e-3);
}

#[test]
fn cumulant_preconditions() {
    let s = Mat::<f64>::zeros(999, 2);
    assert!(gaussianity_cumulants(s.as_ref(), &[vec![1.0, 0.0]]).is_err());
    let s = Mat::from_fn(1000, 2, |i, j| if j == 0 { (i as f64).sin() } else { 0.0 });
    assert!(gaussianity_cumulants(s.as_ref(), &[vec![1.0, 1.0]]).is_err());
    let rep = gaussianity_cumulants(s.as_ref(), &[vec![0.0, 1.0]]).unwrap();
    assert!(rep.directions[0].degenerate);
}

#[test]
fn local_fields_have_expected_variances() {
    let (n, d) = (400, 200);
    let a: Mat<f64> = unit_rows(n, d, 1);
    let g = Generator::single_layer(a, ActivationKind::Sign);
    let w = unit_rows(2, n, 2);
    let t = Teacher::<f64>::random(1, d, ActivationKind::Erf, 3);
    let s = sample_local_fields(&g, w.as_ref(), &t, 30_000, 4, 1024).unwrap();
    let rep = gaussianity_cumulants(s.as_ref(), &default_directions(3, 16, 5)).unwrap();
    let nu = &rep.directions[2];
    assert!(nu.excess_kurtosis.abs() <= rep.kurtosis_threshold(5.0));
    assert!(nu.skewness.abs() <= 5.0 * (6.0 / 30_000f64).sqrt());
    assert!((nu.variance - t.overlap()[(0, 0)]).abs() < 0.05 * nu.variance);
    // λ has variance wΩwᵀ/N with Ω_ii = 1, close to 1/N · ‖w‖² · 1 for nearly white Ω
    assert!((rep.directions[0].variance * n as f64 - 1.0).abs() < 0.2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn m1_m2_are_psd(seed in 0u64..1000, mu in 0.0f64..0.6) {
        let a: Mat<f64> = sample_weights(WeightLaw::ShiftedIid { mu }, true, 30, 12, seed);
        for kind in [ActivationKind::Relu, ActivationKind::Sign, ActivationKind::Tanh] {
            let e = build_equivalence_matrices(a.as_ref(), hermite_coefficients(kind)).unwrap();
            for m in [&e.m1, &e.m2] {
                let ev = sym_eigenvalues_desc(m.as_ref()).unwrap();
                prop_assert!(*ev.last().unwrap() >= -1e-10 * ev[0].abs().max(1e-300));
            }
        }
    }
}
