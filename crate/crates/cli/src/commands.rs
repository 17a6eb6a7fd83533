use faer::Mat;
use geqlab::activations::hermite_coefficients;
use geqlab::erm::{
    self, build_dataset, feature_moments, generalization_error_mc, logistic_fit, measure_overlaps, ridge_fit, ErmRow,
    FeatureMap, LogisticOptions,
};
use geqlab::generators::{sample_latent_batch, sample_weights, WeightLaw};
use geqlab::get_audit::{
    default_directions, deterministic_k_spectra, gaussianity_cumulants, get_bound_with, log_log_slope,
    sample_local_fields, scaling_study, CumulantReport, GetSummary,
};
use geqlab::moments::{estimate_moments, EstimateOptions, MomentSource};
use geqlab::ode::{init_state, integrate, OdeConfig};
use geqlab::replica::{self, SolveOptions, SweepRow};
use geqlab::rng::derive_u64;
use geqlab::sgd::{run, RunConfig};
use geqlab::{ActivationKind, ChannelSpec, Generator, Loss, MomentSet, SpectralInputs, Student, Teacher, Trajectory};
use serde::Serialize;

use crate::config::*;
use crate::error::CliError;
use crate::output::OutputDir;

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

// ---------------------------------------------------------------- shared builders

pub fn build_generator(cfg: &ExperimentConfig) -> Result<Generator<f64>, CliError> {
    let master = cfg.seeds.master;
    match require(&cfg.generator, "generator")? {
        GeneratorConfig::Identity { dim } => {
            if *dim == 0 {
                return Err(config_err("generator.dim must be positive"));
            }
            Ok(Generator::identity(*dim))
        }
        GeneratorConfig::Layers { latent_dim, layers } => {
            if layers.is_empty() {
                return Err(config_err("generator.layers must not be empty"));
            }
            let mut fan_in = *latent_dim;
            let mut mats = Vec::with_capacity(layers.len());
            for (i, l) in layers.iter().enumerate() {
                if l.width == 0 || fan_in == 0 {
                    return Err(config_err(format!("generator.layers[{i}] has a zero dimension")));
                }
                let a = sample_weights(l.weights, l.normalize_rows, l.width, fan_in, derive_u64(master, "generator", i as u64));
                mats.push((a, l.activation));
                fan_in = l.width;
            }
            if mats.len() == 1 {
                let (a, k) = mats.pop().unwrap();
                Ok(Generator::single_layer(a, k))
            } else {
                Ok(Generator::multi_layer(mats)?)
            }
        }
        GeneratorConfig::InversePair { dim, weights } => {
            let a = sample_weights(*weights, false, *dim, *dim, derive_u64(master, "generator", 0));
            Ok(Generator::inverse_pair(a)?)
        }
    }
}

/// Output dimension implied by the generator section, without building it.
fn generator_dims(cfg: &ExperimentConfig) -> Result<(usize, usize), CliError> {
    Ok(match require(&cfg.generator, "generator")? {
        GeneratorConfig::Identity { dim } => (*dim, *dim),
        GeneratorConfig::Layers { latent_dim, layers } => {
            (*latent_dim, layers.last().map_or(*latent_dim, |l| l.width))
        }
        GeneratorConfig::InversePair { dim, .. } => (*dim, *dim),
    })
}

fn teacher_for(cfg: &ExperimentConfig, d: usize, index: u64) -> Result<Teacher<f64>, CliError> {
    let t = require(&cfg.teacher, "teacher")?;
    if t.units == 0 {
        return Err(config_err("teacher.units must be positive"));
    }
    Ok(Teacher::random(t.units, d, t.activation, derive_u64(cfg.seeds.master, "teacher", index)))
}

/// Single-unit teacher rescaled to `‖w̃‖²/D = 1`.
fn unit_teacher(cfg: &ExperimentConfig, d: usize, index: u64) -> Result<Teacher<f64>, CliError> {
    let mut te = teacher_for(cfg, d, index)?;
    if te.m() != 1 {
        return Err(config_err("teacher.units must be 1 for replica and ERM runs"));
    }
    let rho: f64 = (0..d).map(|i| te.w[(0, i)].powi(2)).sum::<f64>() / d as f64;
    if rho > 0.0 {
        for i in 0..d {
            te.w[(0, i)] /= rho.sqrt();
        }
    }
    Ok(te)
}

fn check_student(cfg: &ExperimentConfig) -> Result<&StudentConfig, CliError> {
    let s = require(&cfg.student, "student")?;
    let t = require(&cfg.teacher, "teacher")?;
    if s.units == 0 {
        return Err(config_err("student.units must be positive"));
    }
    if s.init == StudentInit::Teacher {
        let (d, n) = generator_dims(cfg)?;
        if d != n {
            return Err(config_err(format!(
                "student.init = teacher needs equal latent and input dimensions, got D = {d}, N = {n}"
            )));
        }
        if s.units != t.units || s.activation != t.activation {
            return Err(config_err("student.init = teacher needs student units and activation equal to the teacher's"));
        }
    }
    Ok(s)
}

fn build_student(cfg: &ExperimentConfig, n: usize, teacher: &Teacher<f64>) -> Result<Student<f64>, CliError> {
    let s = check_student(cfg)?;
    match s.init {
        StudentInit::Random => Ok(Student::random(
            s.units,
            n,
            s.activation,
            s.w_scale,
            s.v_scale,
            derive_u64(cfg.seeds.master, "student", 0),
        )),
        StudentInit::Teacher => Ok(Student::new(teacher.w.clone(), teacher.v.clone(), s.activation)?),
    }
}

fn moments_for(cfg: &ExperimentConfig, gen: &Generator<f64>) -> Result<MomentSet, CliError> {
    let mc = cfg.moments.clone().unwrap_or_default();
    match mc.n_samples {
        Some(n) => {
            let opts = EstimateOptions { center: mc.center, ..EstimateOptions::default() };
            Ok(estimate_moments(MomentSource::Generator(gen), n, cfg.seeds.master, opts)?)
        }
        None => {
            if mc.center {
                return Err(config_err("moments.center needs moments.n_samples"));
            }
            Ok(MomentSet::analytic(gen)?)
        }
    }
}

fn ode_config(cfg: &ExperimentConfig) -> Result<OdeConfig, CliError> {
    let ode = require(&cfg.ode, "ode")?;
    if !(ode.dt > 0.0) || !(ode.eta >= 0.0) || !(ode.t_max >= 0.0) {
        return Err(config_err("ode needs dt > 0, eta >= 0 and t_max >= 0"));
    }
    Ok(*ode)
}

fn run_config(cfg: &ExperimentConfig, n: usize) -> Result<RunConfig, CliError> {
    let sgd = require(&cfg.sgd, "sgd")?;
    let steps = match (sgd.steps, &cfg.ode) {
        (Some(s), _) => s,
        (None, Some(ode)) => (ode.t_max * n as f64).round() as u64,
        (None, None) => return Err(config_err("sgd.steps is required without an ode section")),
    };
    let mut rc = RunConfig::new(sgd.eta, steps, derive_u64(cfg.seeds.master, "sgd", 0));
    rc.n_test = sgd.n_test;
    if let Some(ode) = &cfg.ode {
        rc.record = ode.record;
        rc.record_dt = ode.dt;
    }
    if let Some(r) = sgd.record {
        rc.record = r;
    }
    Ok(rc)
}

// ---------------------------------------------------------------- moments, ode, sgd, compare

pub fn moments(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let gen = build_generator(cfg)?;
    let ms = moments_for(cfg, &gen)?;
    ms.save(&out.path("moments.geqmat"))?;
    out.record("moments.geqmat")?;
    let mut csv = String::from("index,rho\n");
    for (i, r) in ms.rho.iter().enumerate() {
        csv.push_str(&format!("{i},{r}\n"));
    }
    out.write("spectrum.csv", csv.as_bytes())
}

struct Prepared {
    gen: Generator<f64>,
    ms: MomentSet,
    teacher: Teacher<f64>,
    student: Student<f64>,
}

fn prepare(cfg: &ExperimentConfig) -> Result<Prepared, CliError> {
    check_student(cfg)?;
    let (d, _) = generator_dims(cfg)?;
    let gen = build_generator(cfg)?;
    let teacher = teacher_for(cfg, d, 0)?;
    let student = build_student(cfg, gen.output_dim(), &teacher)?;
    let ms = moments_for(cfg, &gen)?;
    Ok(Prepared { gen, ms, teacher, student })
}

fn integrate_ode(p: &Prepared, ode: &OdeConfig) -> Result<Trajectory, CliError> {
    let st = init_state::<f64>(&p.ms, p.student.w.as_ref(), &p.student.v, &p.teacher, p.student.kind)?;
    Ok(integrate(&st, ode)?.0)
}

pub fn ode(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let ode = ode_config(cfg)?;
    let p = prepare(cfg)?;
    let traj = integrate_ode(&p, &ode)?;
    out.write("ode.csv", traj.to_csv().as_bytes())
}

pub fn sgd(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let (_, n) = generator_dims(cfg)?;
    let rc = run_config(cfg, n)?;
    let p = prepare(cfg)?;
    let (traj, _) = run(&p.student, &p.teacher, &p.gen, &p.ms, &rc)?;
    out.write("sgd.csv", traj.to_csv().as_bytes())
}

#[derive(Debug, Serialize)]
struct CompareSummary {
    n_records: usize,
    max_abs_pmse_gap: f64,
    /// Gap to the Monte Carlo test error of the SGD student, when recorded.
    max_abs_pmse_mc_gap: Option<f64>,
    max_abs_q_gap: f64,
    max_abs_r_gap: f64,
    max_abs_v_gap: f64,
}

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn compare(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let ode = ode_config(cfg)?;
    let (_, n) = generator_dims(cfg)?;
    let mut rc = run_config(cfg, n)?;
    if rc.eta != ode.eta {
        return Err(config_err(format!("sgd.eta ({}) and ode.eta ({}) differ", rc.eta, ode.eta)));
    }
    // both trajectories on the ODE recording grid
    rc.record = ode.record;
    rc.steps = (ode.t_max * n as f64).round() as u64;
    let p = prepare(cfg)?;
    let th = integrate_ode(&p, &ode)?;
    let (sim, _) = run(&p.student, &p.teacher, &p.gen, &p.ms, &rc)?;
    if th.records.len() != sim.records.len() {
        return Err(CliError::Numerical(format!(
            "recording grids differ: {} ODE records, {} SGD records",
            th.records.len(),
            sim.records.len()
        )));
    }
    let mut s = CompareSummary {
        n_records: th.records.len(),
        max_abs_pmse_gap: 0.0,
        max_abs_pmse_mc_gap: None,
        max_abs_q_gap: 0.0,
        max_abs_r_gap: 0.0,
        max_abs_v_gap: 0.0,
    };
    for (a, b) in th.records.iter().zip(&sim.records) {
        s.max_abs_pmse_gap = s.max_abs_pmse_gap.max((a.pmse - b.pmse).abs());
        if let Some(mc) = &b.pmse_mc {
            let g = (a.pmse - mc.mean).abs();
            s.max_abs_pmse_mc_gap = Some(s.max_abs_pmse_mc_gap.map_or(g, |x| x.max(g)));
        }
        s.max_abs_q_gap = s.max_abs_q_gap.max(max_gap(&a.q, &b.q));
        s.max_abs_r_gap = s.max_abs_r_gap.max(max_gap(&a.r, &b.r));
        s.max_abs_v_gap = s.max_abs_v_gap.max(max_gap(&a.v, &b.v));
    }
    log::info!("max |pmse_ODE - pmse_SGD| = {:.3e}", s.max_abs_pmse_gap);
    out.write("ode.csv", th.to_csv().as_bytes())?;
    out.write("sgd.csv", sim.to_csv().as_bytes())?;
    out.write_json("summary.json", &s)
}

// ---------------------------------------------------------------- replica, erm, replica-compare

struct Learning<'a> {
    features: &'a FeaturesConfig,
    loss: Loss,
    student_kind: ActivationKind,
    teacher_kind: ActivationKind,
    gen: Generator<f64>,
    latent_dim: usize,
}

fn learning(cfg: &ExperimentConfig) -> Result<Learning<'_>, CliError> {
    let features = require(&cfg.features, "features")?;
    if features.n_tilde == 0 {
        return Err(config_err("features.n_tilde must be positive"));
    }
    let teacher = require(&cfg.teacher, "teacher")?;
    if teacher.units != 1 {
        return Err(config_err("teacher.units must be 1 for replica and ERM runs"));
    }
    let loss = match (&cfg.replica, &cfg.erm) {
        (Some(r), Some(e)) => {
            if let Some(l) = e.loss {
                if l != r.loss {
                    return Err(config_err("erm.loss and replica.loss differ"));
                }
            }
            r.loss
        }
        (Some(r), None) => r.loss,
        (None, Some(e)) => e.loss.unwrap_or(Loss::Square),
        (None, None) => return Err(config_err("missing `replica` or `erm` section")),
    };
    if loss == Loss::Logistic && teacher.activation != ActivationKind::Sign {
        return Err(config_err("logistic loss needs a sign teacher"));
    }
    let student_kind = cfg.replica.as_ref().and_then(|r| r.student_activation).unwrap_or(match loss {
        Loss::Square => ActivationKind::Linear,
        Loss::Logistic => ActivationKind::Sign,
    });
    let (latent_dim, _) = generator_dims(cfg)?;
    let gen = build_generator(cfg)?;
    Ok(Learning { features, loss, student_kind, teacher_kind: teacher.activation, gen, latent_dim })
}

impl Learning<'_> {
    fn feature_map(&self, master: u64, index: u64) -> FeatureMap {
        FeatureMap::random(
            self.features.n_tilde,
            self.gen.output_dim(),
            self.features.activation,
            derive_u64(master, "features", index),
        )
    }

    fn feature_moments(&self, fm: &FeatureMap, master: u64, index: u64) -> Result<MomentSet, CliError> {
        let n = self.features.n_samples.unwrap_or(50 * self.features.n_tilde);
        Ok(feature_moments(&self.gen, fm, n, derive_u64(master, "feature-moments", index))?)
    }

    fn delta(&self) -> f64 {
        self.latent_dim as f64 / self.features.n_tilde as f64
    }
}

fn replica_options(r: &ReplicaConfig) -> Result<SolveOptions, CliError> {
    if !(0.0..1.0).contains(&r.damping) || !(r.tol > 0.0) || r.max_iter == 0 {
        return Err(config_err("replica needs damping in [0, 1), tol > 0 and max_iter > 0"));
    }
    if !(r.lambda > 0.0) {
        return Err(config_err("replica.lambda must be positive"));
    }
    if r.alpha_grid.is_empty() {
        return Err(config_err("replica.alpha_grid must not be empty"));
    }
    if r.alpha_grid.iter().any(|a| !(*a >= 0.0)) {
        return Err(config_err("replica.alpha_grid entries must be non-negative"));
    }
    Ok(SolveOptions { damping: r.damping, tol: r.tol, max_iter: r.max_iter })
}

fn replica_rows(
    cfg: &ExperimentConfig,
    l: &Learning<'_>,
    r: &ReplicaConfig,
    opts: &SolveOptions,
    index: u64,
) -> Result<Vec<SweepRow>, CliError> {
    let master = cfg.seeds.master;
    let fm = l.feature_map(master, index);
    let ms = l.feature_moments(&fm, master, index)?;
    let inp = SpectralInputs::from_phi(ms.omega.as_ref(), ms.phi.as_ref(), r.lambda, 0.0, l.delta())?;
    let ch = ChannelSpec::new(l.loss, l.teacher_kind, 1.0)?;
    Ok(replica::sweep(&inp, &ch, &r.alpha_grid, l.student_kind, opts)?)
}

fn non_converged(rows: &[SweepRow]) -> Option<CliError> {
    let bad: Vec<String> = rows.iter().filter(|r| !r.converged).map(|r| r.alpha.to_string()).collect();
    (!bad.is_empty()).then(|| {
        CliError::Numerical(format!("replica iteration did not converge at alpha = {}", bad.join(", ")))
    })
}

pub fn replica(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<Option<CliError>, CliError> {
    let r = require(&cfg.replica, "replica")?;
    let opts = replica_options(r)?;
    let l = learning(cfg)?;
    let rows = replica_rows(cfg, &l, r, &opts, 0)?;
    out.write("replica.csv", replica::sweep_csv(&rows).as_bytes())?;
    Ok(non_converged(&rows))
}

fn erm_row(cfg: &ExperimentConfig, l: &Learning<'_>, e: &ErmConfig, t: usize, index: u64) -> Result<ErmRow, CliError> {
    let master = cfg.seeds.master;
    let fm = l.feature_map(master, index);
    let te = unit_teacher(cfg, l.latent_dim, index)?;
    let ds = build_dataset(&l.gen, &te, Some(&fm), t, derive_u64(master, "erm", index))?;
    let w = match l.loss {
        Loss::Square => ridge_fit(&ds, e.lambda)?,
        Loss::Logistic => {
            let fit = logistic_fit(&ds, e.lambda, &LogisticOptions::default())?;
            if !fit.converged {
                return Err(CliError::Numerical(format!(
                    "logistic fit stopped at gradient norm {:.3e} (T = {t}, seed {index})",
                    fit.grad_norm
                )));
            }
            fit.w
        }
    };
    let mc = generalization_error_mc(&w, &l.gen, &te, Some(&fm), l.student_kind, e.n_test, derive_u64(master, "erm-test", index))?;
    let ms = l.feature_moments(&fm, master, index)?;
    let (m, q) = measure_overlaps(&w, &ms, &te)?;
    Ok(ErmRow {
        alpha: t as f64 / l.features.n_tilde as f64,
        seed: index,
        n_tilde: l.features.n_tilde,
        lambda: e.lambda,
        eps_mc: mc.mean,
        eps_mc_stderr: mc.stderr,
        m_star: m,
        q_star: q,
        eps_from_overlaps: replica::test_error(1.0, m, q, l.student_kind, l.teacher_kind)?,
    })
}

fn erm_checked(cfg: &ExperimentConfig) -> Result<&ErmConfig, CliError> {
    let e = require(&cfg.erm, "erm")?;
    if !(e.lambda > 0.0) {
        return Err(config_err("erm.lambda must be positive"));
    }
    if e.seeds == 0 {
        return Err(config_err("erm.seeds must be positive"));
    }
    if e.n_test < 2 {
        return Err(config_err("erm.n_test must be at least 2"));
    }
    Ok(e)
}

fn t_grid(cfg: &ExperimentConfig, e: &ErmConfig, n_tilde: usize) -> Result<Vec<usize>, CliError> {
    let grid = match (&e.t_grid, &cfg.replica) {
        (Some(g), _) => g.clone(),
        (None, Some(r)) => r.alpha_grid.iter().map(|a| (a * n_tilde as f64).round() as usize).collect(),
        (None, None) => return Err(config_err("erm.T_grid is required without a replica section")),
    };
    if grid.is_empty() {
        return Err(config_err("erm.T_grid must not be empty"));
    }
    Ok(grid)
}

pub fn erm(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let e = erm_checked(cfg)?;
    let l = learning(cfg)?;
    let mut rows = Vec::new();
    for t in t_grid(cfg, e, l.features.n_tilde)? {
        for s in 0..e.seeds as u64 {
            rows.push(erm_row(cfg, &l, e, t, s)?);
        }
    }
    out.write("erm.csv", erm::sweep_csv(&rows).as_bytes())
}

#[derive(Debug, Serialize)]
struct AlphaSummary {
    alpha: f64,
    eps_replica: f64,
    eps_erm: f64,
    eps_erm_seed_stderr: f64,
    relative_error: f64,
    replica_converged: bool,
}

#[derive(Debug, Serialize)]
struct ReplicaCompareSummary {
    max_relative_error: f64,
    per_alpha: Vec<AlphaSummary>,
}

pub fn replica_compare(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<Option<CliError>, CliError> {
    let r = require(&cfg.replica, "replica")?;
    let opts = replica_options(r)?;
    let e = erm_checked(cfg)?;
    if e.t_grid.is_some() {
        return Err(config_err("replica-compare takes its sizes from replica.alpha_grid; drop erm.T_grid"));
    }
    let l = learning(cfg)?;
    let nt = l.features.n_tilde;
    let mut per_seed = Vec::new();
    for s in 0..e.seeds as u64 {
        let rows = replica_rows(cfg, &l, r, &opts, s)?;
        out.write(&format!("replica_seed{s}.csv"), replica::sweep_csv(&rows).as_bytes())?;
        per_seed.push(rows);
    }
    let mut erm_rows = Vec::new();
    let mut per_alpha = Vec::new();
    for (i, &alpha) in r.alpha_grid.iter().enumerate() {
        let t = (alpha * nt as f64).round() as usize;
        let rows: Vec<ErmRow> = (0..e.seeds as u64).map(|s| erm_row(cfg, &l, e, t, s)).collect::<Result<_, _>>()?;
        let k = rows.len() as f64;
        let eps_erm = rows.iter().map(|r| r.eps_mc).sum::<f64>() / k;
        let var = rows.iter().map(|r| (r.eps_mc - eps_erm).powi(2)).sum::<f64>() / (k - 1.0).max(1.0);
        let eps_replica = per_seed.iter().map(|rs| rs[i].eps_g).sum::<f64>() / k;
        per_alpha.push(AlphaSummary {
            alpha,
            eps_replica,
            eps_erm,
            eps_erm_seed_stderr: (var / k).sqrt(),
            relative_error: (eps_replica - eps_erm).abs() / eps_erm,
            replica_converged: per_seed.iter().all(|rs| rs[i].converged),
        });
        erm_rows.extend(rows);
    }
    out.write("erm.csv", erm::sweep_csv(&erm_rows).as_bytes())?;
    let summary = ReplicaCompareSummary {
        max_relative_error: per_alpha.iter().map(|a| a.relative_error).fold(0.0, f64::max),
        per_alpha,
    };
    out.write_json("summary.json", &summary)?;
    Ok(per_seed.iter().find_map(|rows| non_converged(rows)))
}

// ---------------------------------------------------------------- get-audit

#[derive(Debug, Serialize)]
struct SpectrumEntry {
    n: usize,
    matrix: String,
    lambda1_closed: f64,
    lambda1_numeric: f64,
    max_rel_err: f64,
    ones_cosine: f64,
}

#[derive(Debug, Serialize)]
struct DeterministicReport {
    mu: f64,
    max_rel_err: f64,
    min_ones_cosine: f64,
    k11_lambda1_log_log_slope: Option<f64>,
    spectra: Vec<SpectrumEntry>,
}

#[derive(Debug, Serialize)]
struct CumulantSummary {
    gaussian_null: bool,
    kurtosis_threshold: f64,
    max_abs_kurtosis: f64,
    max_abs_kurtosis_student_axes: f64,
    report: CumulantReport,
}

#[derive(Debug, Serialize)]
struct AuditReport {
    bound: GetSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    deterministic: Option<DeterministicReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cumulants: Option<CumulantSummary>,
}

fn audit_weights(g: &GetAuditConfig, master: u64) -> Result<Mat<f64>, CliError> {
    let seed = derive_u64(master, "A", 0);
    if !g.orthonormal {
        return Ok(sample_weights(g.weights, g.normalize_rows, g.n, g.d, seed));
    }
    if g.n > g.d {
        return Err(config_err(format!("orthonormal rows need n <= d, got n = {}, d = {}", g.n, g.d)));
    }
    let a: Mat<f64> = sample_weights(WeightLaw::IidGaussian { scale: 1.0 }, false, g.n, g.d, seed);
    let q = a.transpose().qr().compute_thin_Q();
    Ok(q.transpose().to_owned())
}

const K_NAMES: [&str; 4] = ["K11", "K12", "K21", "K22"];

pub fn get_audit(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let g = require(&cfg.get_audit, "get_audit")?;
    if g.n == 0 || g.d == 0 || g.student_units == 0 || g.teacher_units == 0 {
        return Err(config_err("get_audit dimensions must be positive"));
    }
    let scaling_idx = match &g.scaling {
        Some(s) => s
            .matrices
            .iter()
            .map(|m| {
                K_NAMES
                    .iter()
                    .position(|k| k == m)
                    .ok_or_else(|| config_err(format!("get_audit.scaling.matrices: unknown matrix `{m}`")))
            })
            .collect::<Result<Vec<_>, _>>()?,
        None => Vec::new(),
    };
    let master = cfg.seeds.master;
    let a = audit_weights(g, master)?;
    let w: Mat<f64> = sample_weights(
        WeightLaw::IidGaussian { scale: 1.0 },
        true,
        g.student_units,
        g.n,
        derive_u64(master, "student", 0),
    );
    let teacher = Teacher::<f64>::random(g.teacher_units, g.d, g.activation, derive_u64(master, "teacher", 0));
    let report = get_bound_with(w.as_ref(), teacher.w.as_ref(), a.as_ref(), g.activation, g.norm)?;

    let deterministic = match &g.deterministic {
        Some(det) => {
            let h = hermite_coefficients(g.activation);
            let mut spectra = Vec::new();
            let mut l1 = Vec::new();
            for &n in &det.n_list {
                for k in deterministic_k_spectra(det.mu, n, h)? {
                    if k.name == "K11" {
                        l1.push(k.numeric[0]);
                    }
                    spectra.push(SpectrumEntry {
                        n,
                        matrix: k.name.clone(),
                        lambda1_closed: k.lambda1_closed(),
                        lambda1_numeric: k.numeric[0],
                        max_rel_err: k.max_rel_err,
                        ones_cosine: k.ones_cosine,
                    });
                }
            }
            let xs: Vec<f64> = det.n_list.iter().map(|&n| n as f64).collect();
            let slope = (xs.len() >= 2 && l1.iter().all(|v| *v > 0.0)).then(|| log_log_slope(&xs, &l1));
            Some(DeterministicReport {
                mu: det.mu,
                max_rel_err: spectra.iter().map(|s| s.max_rel_err).fold(0.0, f64::max),
                min_ones_cosine: spectra.iter().map(|s| s.ones_cosine).fold(1.0, f64::min),
                k11_lambda1_log_log_slope: slope,
                spectra,
            })
        }
        None => None,
    };

    let cumulants = match &g.cumulants {
        Some(c) => {
            let dim = g.student_units + g.teacher_units;
            let samples = if c.gaussian_null {
                let z: Mat<f64> = sample_latent_batch(dim, c.n_samples, derive_u64(master, "null-fields", 0), 0);
                z.transpose().to_owned()
            } else {
                let gen = Generator::single_layer(a.clone(), ActivationKind::Sign);
                sample_local_fields(&gen, w.as_ref(), &teacher, c.n_samples, derive_u64(master, "fields", 0), 1024)?
            };
            let rep = gaussianity_cumulants(samples.as_ref(), &default_directions(dim, c.random_directions, master))?;
            Some(CumulantSummary {
                gaussian_null: c.gaussian_null,
                kurtosis_threshold: rep.kurtosis_threshold(c.safety),
                max_abs_kurtosis: rep.max_abs_kurtosis,
                max_abs_kurtosis_student_axes: rep.max_abs_kurtosis_in(0..g.student_units),
                report: rep,
            })
        }
        None => None,
    };

    if let Some(s) = &g.scaling {
        let seeds: Vec<u64> = (0..s.seeds as u64).map(|i| derive_u64(master, "scaling-seed", i)).collect();
        let study = scaling_study(s.beta, s.delta, &s.n_list, &seeds, &scaling_idx)?;
        out.write("scaling.csv", study.to_csv().as_bytes())?;
    }
    let full = AuditReport { bound: report.summary(), deterministic, cumulants };
    out.write_json("get_report.json", &full)
}
