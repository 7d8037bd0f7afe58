//! Experiment configurations, readable from TOML or JSON.
//!
//! Every field except the model has a default, and the resolved config is
//! serialized back into each report.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use heavyfpca::func_core::{fourier_basis, polynomial_basis};
use heavyfpca::heavytail_sim::{AngularMeasure, RvCurveModel, ScoreLaw};
use heavyfpca::rate_harness::{Backend, ExperimentConfig};
use heavyfpca::{Curve, Grid, HsOperator};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BasisKind {
    #[default]
    Fourier,
    Polynomial,
}

impl BasisKind {
    pub fn build(self, grid: &Arc<Grid>, count: usize) -> heavyfpca::Result<Vec<Curve>> {
        match self {
            BasisKind::Fourier => fourier_basis(grid, count),
            BasisKind::Polynomial => polynomial_basis(grid, count),
        }
    }
}

fn default_law() -> ScoreLaw {
    ScoreLaw::SymmetricPareto
}

/// Curve model. Polar atoms are coefficient vectors in the basis and are
/// normalized to unit length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ModelSpec {
    /// Fourier basis, 8 components, `τ_j = 1/j`, symmetric Pareto scores.
    Reference { alpha: f64 },
    KlScores {
        alpha: f64,
        tau: Vec<f64>,
        #[serde(default = "default_law")]
        law: ScoreLaw,
        #[serde(default)]
        basis: BasisKind,
    },
    Polar {
        alpha: f64,
        atoms: Vec<Vec<f64>>,
        weights: Vec<f64>,
        #[serde(default)]
        basis: BasisKind,
    },
}

impl ModelSpec {
    pub fn alpha(&self) -> f64 {
        match self {
            ModelSpec::Reference { alpha } | ModelSpec::KlScores { alpha, .. } | ModelSpec::Polar { alpha, .. } => {
                *alpha
            }
        }
    }

    pub fn basis_kind(&self) -> BasisKind {
        match self {
            ModelSpec::Reference { .. } => BasisKind::Fourier,
            ModelSpec::KlScores { basis, .. } | ModelSpec::Polar { basis, .. } => *basis,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ModelSpec::Reference { .. } => 8,
            ModelSpec::KlScores { tau, .. } => tau.len(),
            ModelSpec::Polar { atoms, .. } => atoms.first().map_or(0, Vec::len),
        }
    }

    pub fn build(&self, grid: &Arc<Grid>) -> heavyfpca::Result<RvCurveModel> {
        match self {
            ModelSpec::Reference { alpha } => RvCurveModel::reference(*alpha, grid),
            ModelSpec::KlScores { alpha, tau, law, basis } => {
                RvCurveModel::kl_scores(*alpha, basis.build(grid, tau.len())?, tau.clone(), *law)
            }
            ModelSpec::Polar {
                alpha,
                atoms,
                weights,
                basis,
            } => {
                let dim = self.dim();
                if dim == 0 || atoms.iter().any(|a| a.len() != dim) {
                    return Err(heavyfpca::Error::InvalidModel(
                        "polar atoms must be non-empty coefficient vectors of equal length".into(),
                    ));
                }
                let b = basis.build(grid, dim)?;
                let curves = atoms
                    .iter()
                    .map(|a| combination(&b, a, true))
                    .collect::<heavyfpca::Result<Vec<_>>>()?;
                RvCurveModel::polar(*alpha, b, AngularMeasure::new(curves, weights.clone())?)
            }
        }
    }

    /// The same basis and `τ` with Gaussian scores.
    pub fn gaussian_control(&self) -> Option<ModelSpec> {
        match self {
            ModelSpec::Reference { alpha } => Some(ModelSpec::KlScores {
                alpha: *alpha,
                tau: (1..=8).map(|j| 1.0 / j as f64).collect(),
                law: ScoreLaw::Gaussian,
                basis: BasisKind::Fourier,
            }),
            ModelSpec::KlScores { alpha, tau, basis, .. } => Some(ModelSpec::KlScores {
                alpha: *alpha,
                tau: tau.clone(),
                law: ScoreLaw::Gaussian,
                basis: *basis,
            }),
            ModelSpec::Polar { .. } => None,
        }
    }
}

/// `Σ c_j b_j`, optionally normalized to unit L² norm.
pub fn combination(basis: &[Curve], coeffs: &[f64], normalize: bool) -> heavyfpca::Result<Curve> {
    if coeffs.len() > basis.len() {
        return Err(heavyfpca::Error::Dimension(format!(
            "{} coefficients for a basis of {}",
            coeffs.len(),
            basis.len()
        )));
    }
    let mut x = Curve::zeros(basis[0].grid().clone());
    for (c, b) in coeffs.iter().zip(basis) {
        x = x.axpy(*c, b)?;
    }
    if normalize {
        let n = x.l2_norm();
        if !(n > 0.0) {
            return Err(heavyfpca::Error::InvalidModel("zero coefficient vector".into()));
        }
        x = x.scaled(1.0 / n);
    }
    Ok(x)
}

fn default_grid_points() -> usize {
    256
}
fn default_seed() -> u64 {
    1
}
fn default_replicates() -> usize {
    200
}
fn default_gamma() -> f64 {
    1.0
}
fn default_n_grid() -> Vec<usize> {
    ExperimentConfig::default_n_grid()
}
fn default_slope_window() -> f64 {
    0.10
}
fn default_control_window() -> f64 {
    0.07
}
fn default_true() -> bool {
    true
}
fn default_components() -> usize {
    3
}
fn default_hill_fraction() -> f64 {
    0.05
}
fn default_one() -> f64 {
    1.0
}
fn default_hill_window() -> f64 {
    0.3
}
fn default_centering_tolerance() -> f64 {
    0.15
}
fn default_stable_n() -> usize {
    10_000
}
fn default_stable_replicates() -> usize {
    10_000
}

/// Exactly one of `curves` (grid-header CSV) or `prices` (intraday price panel).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curves: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prices: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FpcaConfig {
    pub input: InputSpec,
    #[serde(default = "default_components")]
    pub components: usize,
    #[serde(default = "default_true")]
    pub subtract_mean: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HillConfig {
    pub input: InputSpec,
    /// Number of leading FPC score levels.
    #[serde(default = "default_levels_count")]
    pub levels: usize,
    /// Defaults to about 20 log-spaced values between `max(10, N/200)` and `N/20`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_grid: Option<Vec<usize>>,
    #[serde(default = "default_true")]
    pub subtract_mean: bool,
}

fn default_levels_count() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub model: ModelSpec,
    pub n: usize,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateConfig {
    pub model: ModelSpec,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default = "default_n_grid")]
    pub n_grid: Vec<usize>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub backend: Backend,
    #[serde(default = "default_slope_window")]
    pub slope_window: f64,
    /// 1-based eigen levels; empty runs the covariance experiment only.
    #[serde(default)]
    pub levels: Vec<usize>,
    /// Also run the Gaussian-score control with the same basis and `τ`.
    #[serde(default)]
    pub control: bool,
    #[serde(default = "default_control_window")]
    pub control_window: f64,
}

/// Probe `left ⊗ right` given by basis coefficients; the kernel is
/// `right(t) left(s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSpec {
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StableConfig {
    pub model: ModelSpec,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default = "default_stable_n")]
    pub n: usize,
    #[serde(default = "default_stable_replicates")]
    pub replicates: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Defaults to `b₁ ⊗ b₁` for the first basis curve.
    #[serde(default)]
    pub probes: Vec<ProbeSpec>,
    #[serde(default = "default_hill_fraction")]
    pub hill_fraction: f64,
    #[serde(default = "default_one")]
    pub c0: f64,
    #[serde(default = "default_hill_window")]
    pub hill_window: f64,
    #[serde(default = "default_centering_tolerance")]
    pub centering_tolerance: f64,
}

/// One rank-one piece `weight · b_to ⊗ b_from` of `Ψ`, mapping basis curve
/// `from` to `to` (1-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsiTerm {
    pub from: usize,
    pub to: usize,
    #[serde(default = "default_one")]
    pub weight: f64,
}

fn default_flr_grid_points() -> usize {
    128
}
fn default_flr_n_grid() -> Vec<usize> {
    vec![500, 1000, 2000, 4000]
}
fn default_flr_replicates() -> usize {
    100
}
fn default_flr_gamma() -> f64 {
    1.3
}
fn default_ratio() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlrConfig {
    pub x_model: ModelSpec,
    pub psi: Vec<PsiTerm>,
    #[serde(default)]
    pub noise_scale: f64,
    /// Noise lives on the first `noise_dim` basis curves.
    #[serde(default)]
    pub noise_dim: usize,
    #[serde(default = "default_flr_grid_points")]
    pub grid_points: usize,
    #[serde(default = "default_flr_n_grid")]
    pub n_grid: Vec<usize>,
    #[serde(default = "default_flr_replicates")]
    pub replicates: usize,
    #[serde(default = "default_flr_gamma")]
    pub gamma: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_one")]
    pub bound: f64,
    /// `[K_max, L_max]`; defaults to the population ranks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caps: Option<[usize; 2]>,
    /// `--check` requires the median error at the largest `N` to be at most
    /// this fraction of the one at the smallest `N`.
    #[serde(default = "default_ratio")]
    pub max_error_ratio: f64,
}

impl FlrConfig {
    /// Basis large enough for the model, `Ψ` and the noise.
    pub fn basis(&self, grid: &Arc<Grid>) -> heavyfpca::Result<Vec<Curve>> {
        let m = self
            .psi
            .iter()
            .flat_map(|t| [t.from, t.to])
            .chain([self.x_model.dim(), self.noise_dim])
            .max()
            .unwrap_or(1);
        self.x_model.basis_kind().build(grid, m)
    }

    pub fn psi_operator(&self, basis: &[Curve]) -> heavyfpca::Result<HsOperator> {
        let mut psi = HsOperator::zeros(basis[0].grid().clone());
        for t in &self.psi {
            if t.from == 0 || t.to == 0 {
                return Err(heavyfpca::Error::InvalidModel("psi term indices are 1-based".into()));
            }
            let piece = HsOperator::tensor_product(&basis[t.from - 1], &basis[t.to - 1])?;
            psi = psi.axpy(t.weight, &piece)?;
        }
        Ok(psi)
    }
}

/// Reads a config; `.json` and `.toml` extensions pick the format, anything
/// else tries JSON first and then TOML.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse(&text, path.extension().and_then(|e| e.to_str()))
}

pub fn parse<T: DeserializeOwned>(text: &str, extension: Option<&str>) -> Result<T, CliError> {
    let json = || serde_json::from_str::<T>(text).map_err(|e| CliError::Config(format!("JSON: {e}")));
    let toml = || toml::from_str::<T>(text).map_err(|e| CliError::Config(format!("TOML: {e}")));
    match extension {
        Some("json") => json(),
        Some("toml") => toml(),
        _ => json().or_else(|je| toml().map_err(|te| CliError::Config(format!("{je}; {te}")))),
    }
}
