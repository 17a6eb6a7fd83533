mod common;

use faer::Mat;
use geqlab::generators::{sample_weights, Generator, WeightLaw};
use geqlab::io::write_sample_stream;
use geqlab::linalg::frobenius_norm;
use geqlab::moments::*;
use geqlab::{ActivationKind, Error};
use proptest::prelude::*;

fn max_abs_diff(a: &Mat<f64>, b: &Mat<f64>) -> f64 {
    let mut m = 0.0f64;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            m = m.max((a[(i, j)] - b[(i, j)]).abs());
        }
    }
    m
}

fn check_eigensystem(ms: &MomentSet) {
    let n = ms.n();
    let scale = ms.rho[0].max(1.0);
    let gram = &ms.psi * ms.psi.transpose();
    let eye = Mat::from_fn(n, n, |i, j| if i == j { n as f64 } else { 0.0 });
    assert!(max_abs_diff(&gram, &eye) < 1e-10 * n as f64);
    assert!(max_abs_diff(&ms.reconstruct_omega(), &ms.omega) < 1e-10 * scale);
    let tr: f64 = (0..n).map(|i| ms.omega[(i, i)]).sum::<f64>() / n as f64;
    assert!((tr - ms.gamma).abs() < 1e-12 * scale);
    assert!(ms.rho.windows(2).all(|w| w[0] >= w[1]));
    for i in 0..n {
        for j in 0..n {
            assert_eq!(ms.omega[(i, j)], ms.omega[(j, i)]);
        }
    }
}

#[test]
fn identity_generator_moments() {
    let n = 12;
    let ns = 20_000;
    let ms = estimate_moments(MomentSource::Generator(&Generator::identity(n)), ns, 3, EstimateOptions::default()).unwrap();
    let eye = Mat::<f64>::identity(n, n);
    let tol = 5.0 / (ns as f64).sqrt();
    assert!(max_abs_diff(&ms.omega, &eye) < tol);
    assert!(max_abs_diff(&ms.phi, &eye) < tol);
    assert_eq!(ms.n_samples, ns);
    check_eigensystem(&ms);
}

#[test]
fn linear_layer_moments_match_a_at() {
    let (n, d) = (10, 6);
    let a: Mat<f64> = sample_weights(WeightLaw::IidGaussian { scale: 1.0 }, true, n, d, 4);
    let g = Generator::single_layer(a.clone(), ActivationKind::Linear);
    let ns = 40_000;
    let ms = estimate_moments(MomentSource::Generator(&g), ns, 1, EstimateOptions::default()).unwrap();
    let aat = &a * a.transpose();
    let tol = 6.0 / (ns as f64).sqrt();
    assert!(max_abs_diff(&ms.omega, &aat) < tol);
    assert!(max_abs_diff(&ms.phi, &a) < tol);
    let exact = MomentSet::analytic(&g).unwrap();
    assert!(max_abs_diff(&exact.omega, &aat) < 1e-14);
    check_eigensystem(&ms);
}

#[test]
fn sign_layer_with_orthonormal_rows_is_white() {
    let d = 8;
    let a = Mat::<f64>::identity(d, d);
    let g = Generator::single_layer(a, ActivationKind::Sign);
    let exact = MomentSet::analytic(&g).unwrap();
    assert!(max_abs_diff(&exact.omega, &Mat::identity(d, d)) < 1e-15);
    let ms = estimate_moments(MomentSource::Generator(&g), 40_000, 2, EstimateOptions::default()).unwrap();
    assert!(max_abs_diff(&ms.omega, &Mat::identity(d, d)) < 5.0 / 200.0);
    // the diagonal of sign(u)² is exactly one
    for i in 0..d {
        assert_eq!(ms.omega[(i, i)], 1.0);
    }
}

#[test]
fn analytic_moments_agree_with_monte_carlo() {
    let (n, d) = (16, 8);
    let a: Mat<f64> = sample_weights(WeightLaw::IidGaussian { scale: 1.0 }, true, n, d, 9);
    for kind in [ActivationKind::Sign, ActivationKind::Erf, ActivationKind::Relu] {
        let g = Generator::single_layer(a.clone(), kind);
        let exact = MomentSet::analytic(&g).unwrap();
        let ms = estimate_moments(MomentSource::Generator(&g), 100_000, 5, EstimateOptions::default()).unwrap();
        assert!(max_abs_diff(&ms.omega, &exact.omega) < 0.02, "{kind:?}");
        assert!(max_abs_diff(&ms.phi, &exact.phi) < 0.02, "{kind:?}");
        let mean_dev = ms.mean_x.iter().zip(&exact.mean_x).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(mean_dev < 0.02, "{kind:?}");
    }
}

#[test]
fn deviation_shrinks_like_inverse_square_root() {
    let (n, d) = (20, 10);
    let a: Mat<f64> = sample_weights(WeightLaw::IidGaussian { scale: 1.0 }, true, n, d, 1);
    let g = Generator::single_layer(a, ActivationKind::Erf);
    let exact = MomentSet::analytic(&g).unwrap();
    let dev = |ns: usize, seed: u64| {
        let ms = estimate_moments(MomentSource::Generator(&g), ns, seed, EstimateOptions::default()).unwrap();
        frobenius_norm((&ms.omega - &exact.omega).as_ref())
    };
    let mut small = Vec::new();
    let mut large = Vec::new();
    for s in 0..8 {
        small.push(dev(4000, 100 + s));
        large.push(dev(8000, 200 + s));
    }
    let ratio = common::median(&small) / common::median(&large);
    assert!((ratio / 2f64.sqrt() - 1.0).abs() < 0.3, "ratio {ratio}");
}

#[test]
fn phi_norm_bounded_by_omega() {
    let a: Mat<f64> = sample_weights(WeightLaw::IidGaussian { scale: 1.0 }, true, 15, 9, 2);
    let g = Generator::single_layer(a, ActivationKind::Tanh);
    let ms = estimate_moments(MomentSource::Generator(&g), 20_000, 2, EstimateOptions::default()).unwrap();
    let phi_norm = geqlab::linalg::spectral_norm(ms.phi.as_ref()).unwrap();
    assert!(phi_norm <= ms.rho[0].sqrt() + 0.05);
    assert!(ms.rho.iter().all(|&r| r >= 0.0));
}

#[test]
fn stream_source_matches_generator() {
    let a: Mat<f64> = sample_weights(WeightLaw::IidGaussian { scale: 1.0 }, true, 5, 3, 2);
    let g = Generator::single_layer(a, ActivationKind::Erf);
    let lat: Mat<f64> = geqlab::generators::sample_latent_batch(3, 300, 7, 0);
    let x = g.generate_batch(lat.as_ref()).unwrap();
    let cs: Vec<Vec<f64>> = (0..300).map(|j| (0..3).map(|i| lat[(i, j)]).collect()).collect();
    let xs: Vec<Vec<f64>> = (0..300).map(|j| (0..5).map(|i| x[(i, j)]).collect()).collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.bin");
    write_sample_stream(&path, 3, 5, cs.iter().zip(&xs).map(|(c, x)| (c.as_slice(), x.as_slice()))).unwrap();
    let opts = EstimateOptions { batch: 64, ..Default::default() };
    let ms = estimate_moments(MomentSource::Stream(&path), 300, 0, opts).unwrap();
    let direct = (&x * x.transpose()) * faer::Scale(1.0 / 300.0);
    assert!(max_abs_diff(&ms.omega, &direct) < 1e-13);
    assert!(estimate_moments(MomentSource::Stream(&path), 301, 0, opts).is_err());
    assert!(estimate_moments(MomentSource::Generator(&g), 0, 0, opts).is_err());
}

#[test]
fn centered_estimate_subtracts_mean() {
    let a: Mat<f64> = sample_weights(WeightLaw::IidGaussian { scale: 1.0 }, true, 4, 3, 2);
    let g = Generator::single_layer(a, ActivationKind::Relu);
    let unc = estimate_moments(MomentSource::Generator(&g), 5000, 1, EstimateOptions::default()).unwrap();
    let cen = estimate_moments(MomentSource::Generator(&g), 5000, 1, EstimateOptions { center: true, ..Default::default() }).unwrap();
    let m = &unc.mean_x;
    assert!((unc.omega[(0, 1)] - m[0] * m[1] - cen.omega[(0, 1)]).abs() < 1e-12);
}

#[test]
fn projection_examples() {
    let (n, d) = (9, 9);
    let a: Mat<f64> = sample_weights(WeightLaw::IidGaussian { scale: 1.0 }, true, n, d, 5);
    let ms = MomentSet::analytic(&Generator::single_layer(a, ActivationKind::Erf)).unwrap();
    let t0 = 3;
    let w = Mat::from_fn(1, n, |_, i| ms.psi[(t0, i)]);
    let wt = Mat::<f64>::zeros(2, d);
    let p = project(&ms, w.as_ref(), wt.as_ref()).unwrap();
    for t in 0..n {
        let want = if t == t0 { (n as f64).sqrt() } else { 0.0 };
        assert!((p.gamma[(0, t)] - want).abs() < 1e-10);
        assert_eq!(p.gamma_tilde[(0, t)], 0.0);
    }
    let z = project(&ms, Mat::<f64>::zeros(2, n).as_ref(), wt.as_ref()).unwrap();
    assert!((0..n).all(|t| z.gamma[(0, t)] == 0.0));
    let tt = rotated_teacher_overlap(&ms, wt.as_ref()).unwrap();
    assert!(tt[(0, 0)] == 0.0 && tt[(1, 1)] == 0.0);

    let id = MomentSet::analytic(&Generator::identity(n)).unwrap();
    let wt = Mat::from_fn(1, n, |_, i| id.psi[(t0, i)]);
    let p = project(&id, Mat::<f64>::zeros(1, n).as_ref(), wt.as_ref()).unwrap();
    for t in 0..n {
        let want = if t == t0 { (n as f64).sqrt() } else { 0.0 };
        assert!((p.gamma_tilde[(0, t)] - want).abs() < 1e-10);
    }
    assert!(matches!(project(&id, Mat::<f64>::zeros(1, n + 1).as_ref(), wt.as_ref()), Err(Error::Dimension { .. })));
}

#[test]
fn rotated_overlap_examples() {
    let n = 7;
    let id = MomentSet::analytic(&Generator::identity(n)).unwrap();
    let teacher = geqlab::Teacher::<f64>::random(3, n, ActivationKind::Erf, 1);
    let tt = rotated_teacher_overlap(&id, teacher.w.as_ref()).unwrap();
    assert!(max_abs_diff(&tt, &teacher.overlap()) < 1e-14);

    // linear generator: Φ = A, T̃ = ‖A w̃‖² / N
    let (n, d) = (11, 6);
    let a: Mat<f64> = sample_weights(WeightLaw::IidGaussian { scale: 1.0 }, true, n, d, 2);
    let ms = MomentSet::analytic(&Generator::single_layer(a.clone(), ActivationKind::Linear)).unwrap();
    let teacher = geqlab::Teacher::<f64>::random(1, d, ActivationKind::Erf, 3);
    let aw = &a * teacher.w.transpose();
    let want: f64 = (0..n).map(|i| aw[(i, 0)].powi(2)).sum::<f64>() / n as f64;
    let got = rotated_teacher_overlap(&ms, teacher.w.as_ref()).unwrap()[(0, 0)];
    assert!((got - want).abs() < 1e-12 * want);
    let p = project(&ms, Mat::<f64>::zeros(1, n).as_ref(), teacher.w.as_ref()).unwrap();
    let sum: f64 = (0..n).map(|t| p.gamma_tilde[(0, t)].powi(2)).sum::<f64>() / n as f64;
    assert!((sum - want).abs() < 1e-10 * want);
}

#[test]
fn save_load_round_trip() {
    let a: Mat<f64> = sample_weights(WeightLaw::IidGaussian { scale: 1.0 }, true, 6, 4, 5);
    let ms = estimate_moments(
        MomentSource::Generator(&Generator::single_layer(a, ActivationKind::Erf)),
        500,
        1,
        EstimateOptions::default(),
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    ms.save(&path).unwrap();
    let back = MomentSet::load(&path).unwrap();
    assert_eq!(back.omega, ms.omega);
    assert_eq!(back.phi, ms.phi);
    assert_eq!(back.psi, ms.psi);
    assert_eq!(back.rho, ms.rho);
    assert_eq!(back.mean_x, ms.mean_x);
    assert_eq!(back.gamma.to_bits(), ms.gamma.to_bits());
    assert_eq!(back.n_samples, 500);
    check_eigensystem(&back);

    let mut bytes = std::fs::read(&path).unwrap();
    bytes[3] = b'?';
    let bad = dir.path().join("bad.bin");
    std::fs::write(&bad, &bytes).unwrap();
    assert!(MomentSet::load(&bad).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn quadratic_form_matches_spectral_sum(seed in 0u64..500, k in 1usize..4) {
        let (n, d) = (10, 5);
        let a: Mat<f64> = sample_weights(WeightLaw::IidGaussian { scale: 1.0 }, true, n, d, seed);
        let ms = MomentSet::analytic(&Generator::single_layer(a, ActivationKind::Erf)).unwrap();
        let w: Mat<f64> = sample_weights(WeightLaw::IidGaussian { scale: 1.0 }, false, k, n, seed + 1);
        let p = project(&ms, w.as_ref(), Mat::<f64>::zeros(1, d).as_ref()).unwrap();
        let direct = (&w * &ms.omega * w.transpose()) * faer::Scale(1.0 / n as f64);
        for a in 0..k {
            for b in 0..k {
                let s: f64 = (0..n).map(|t| ms.rho[t] * p.gamma[(a, t)] * p.gamma[(b, t)]).sum::<f64>() / n as f64;
                prop_assert!((s - direct[(a, b)]).abs() <= 1e-10 * direct[(a, a)].abs().max(direct[(b, b)].abs()).max(1e-12));
            }
        }
    }

    #[test]
    fn eigensystem_invariants_hold(seed in 0u64..500) {
        let a: Mat<f64> = sample_weights(WeightLaw::ShiftedIid { mu: 0.3 }, true, 12, 7, seed);
        let ms = MomentSet::analytic(&Generator::single_layer(a, ActivationKind::Sign)).unwrap();
        check_eigensystem(&ms);
    }
}
