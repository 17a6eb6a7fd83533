use std::path::{Path, PathBuf};

use geqlab::generators::WeightLaw;
use geqlab::get_audit::MatrixNorm;
use geqlab::ode::OdeConfig;
use geqlab::{ActivationKind, Loss, RecordSchedule};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher: Option<TeacherConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub student: Option<StudentConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moments: Option<MomentsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ode: Option<OdeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sgd: Option<SgdConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<FeaturesConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replica: Option<ReplicaConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub erm: Option<ErmConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub get_audit: Option<GetAuditConfig>,
    #[serde(default)]
    pub seeds: SeedsConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorConfig {
    /// `x = c`.
    Identity { dim: usize },
    /// Stack of random layers `x = σ_L(A_L ⋯ σ_1(A_1 c))`.
    Layers { latent_dim: usize, layers: Vec<LayerConfig> },
    /// Square sign layer followed by its inverse.
    InversePair { dim: usize, weights: WeightLaw },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerConfig {
    pub width: usize,
    pub activation: ActivationKind,
    #[serde(default = "unit_gaussian")]
    pub weights: WeightLaw,
    #[serde(default = "yes")]
    pub normalize_rows: bool,
}

fn unit_gaussian() -> WeightLaw {
    WeightLaw::IidGaussian { scale: 1.0 }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherConfig {
    #[serde(default = "one")]
    pub units: usize,
    pub activation: ActivationKind,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudentInit {
    #[default]
    Random,
    /// Copy of the teacher; needs an identity generator and matching widths.
    Teacher,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudentConfig {
    pub units: usize,
    pub activation: ActivationKind,
    #[serde(default = "default_w_scale")]
    pub w_scale: f64,
    #[serde(default = "one_f")]
    pub v_scale: f64,
    #[serde(default)]
    pub init: StudentInit,
}

fn default_w_scale() -> f64 {
    1e-3
}

fn one_f() -> f64 {
    1.0
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentsConfig {
    /// Monte Carlo sample count; absent means closed-form moments.
    #[serde(default)]
    pub n_samples: Option<usize>,
    #[serde(default)]
    pub center: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    pub eta: f64,
    /// Defaults to `t_max · N` from the ode section.
    #[serde(default)]
    pub steps: Option<u64>,
    #[serde(default = "default_sgd_n_test")]
    pub n_test: usize,
    /// Defaults to the ode section's schedule, then to the library default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record: Option<RecordSchedule>,
}

fn default_sgd_n_test() -> usize {
    2000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeaturesConfig {
    pub n_tilde: usize,
    pub activation: ActivationKind,
    /// Samples for Monte Carlo feature moments; defaults to `50 Ñ`.
    #[serde(default)]
    pub n_samples: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplicaConfig {
    pub alpha_grid: Vec<f64>,
    pub lambda: f64,
    #[serde(default = "default_damping")]
    pub damping: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "square")]
    pub loss: Loss,
    /// Prediction nonlinearity for the test error; defaults by loss.
    #[serde(default)]
    pub student_activation: Option<ActivationKind>,
}

fn default_damping() -> f64 {
    0.5
}

fn default_tol() -> f64 {
    1e-8
}

fn default_max_iter() -> usize {
    5000
}

fn square() -> Loss {
    Loss::Square
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErmConfig {
    /// Training-set sizes; defaults to `α Ñ` over the replica grid.
    #[serde(rename = "T_grid", default)]
    pub t_grid: Option<Vec<usize>>,
    pub lambda: f64,
    #[serde(default = "default_erm_seeds")]
    pub seeds: usize,
    #[serde(default)]
    pub loss: Option<Loss>,
    #[serde(default = "default_erm_n_test")]
    pub n_test: usize,
}

fn default_erm_seeds() -> usize {
    5
}

fn default_erm_n_test() -> usize {
    20_000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GetAuditConfig {
    pub n: usize,
    pub d: usize,
    /// Law of `A`; `orthonormal` replaces it by orthonormal rows (needs `n ≤ d`).
    #[serde(default = "unit_gaussian")]
    pub weights: WeightLaw,
    #[serde(default = "yes")]
    pub normalize_rows: bool,
    #[serde(default)]
    pub orthonormal: bool,
    #[serde(default = "erf")]
    pub activation: ActivationKind,
    #[serde(default = "two")]
    pub student_units: usize,
    #[serde(default = "one")]
    pub teacher_units: usize,
    #[serde(default)]
    pub norm: MatrixNorm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deterministic: Option<DeterministicConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaling: Option<ScalingConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cumulants: Option<CumulantConfig>,
}

fn erf() -> ActivationKind {
    ActivationKind::Erf
}

fn two() -> usize {
    2
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeterministicConfig {
    pub mu: f64,
    pub n_list: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingConfig {
    pub beta: f64,
    pub delta: f64,
    pub n_list: Vec<usize>,
    #[serde(default = "one")]
    pub seeds: usize,
    /// Names among K11, K12, K21, K22.
    pub matrices: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CumulantConfig {
    pub n_samples: usize,
    #[serde(default = "default_random_dirs")]
    pub random_directions: usize,
    /// Draw exact Gaussian fields instead of generator samples.
    #[serde(default)]
    pub gaussian_null: bool,
    #[serde(default = "default_safety")]
    pub safety: f64,
}

fn default_random_dirs() -> usize {
    64
}

fn default_safety() -> f64 {
    5.0
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedsConfig {
    #[serde(default)]
    pub master: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out")]
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: default_out() }
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// Returns the section or a config error naming its key.
pub fn require<'a, T>(section: &'a Option<T>, key: &str) -> Result<&'a T, CliError> {
    section.as_ref().ok_or_else(|| CliError::Config(format!("missing `{key}` section")))
}
