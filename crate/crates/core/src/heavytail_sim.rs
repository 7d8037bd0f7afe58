//! Generators of regularly varying random curves, the normalizing sequences
//! `a_N`, `k_N`, `r_N`, the stable-limit centering operator and the scalar
//! stable reference generator.
//!
//! Randomness is counter based: every draw sequence comes from a ChaCha8
//! stream selected by `(master seed, stream id)`, so replicate `r` of an
//! experiment sees the same numbers no matter which worker runs it.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::func_core::{basis_matrix, ensure_same_grid, Curve, CurveSample, Grid, HsOperator};

pub type SimRng = ChaCha8Rng;

/// RNG for stream `stream` of master seed `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Packs an experiment tag, a design-point index and a replicate index into a stream id.
pub fn stream_id(tag: u8, point: u32, replicate: u32) -> u64 {
    ((tag as u64) << 56) | (((point as u64) & 0x00ff_ffff) << 32) | replicate as u64
}

/// Uniform on (0, 1].
fn open_uniform(rng: &mut impl Rng) -> f64 {
    1.0 - rng.random::<f64>()
}

/// Inverse-CDF Pareto draw `U^{−1/α}`.
pub fn pareto_from_uniform(u: f64, alpha: f64) -> f64 {
    u.powf(-1.0 / alpha)
}

/// `n` iid Pareto(α) radii with `P(R > u) = u^{−α}`, `u ≥ 1`.
pub fn sample_radius(alpha: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::Domain(format!("alpha must be positive, got {alpha}")));
    }
    let mut rng = stream_rng(seed, 0);
    Ok((0..n)
        .map(|_| pareto_from_uniform(open_uniform(&mut rng), alpha))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreLaw {
    /// Random sign times a Pareto(α) magnitude, scaled to unit variance.
    SymmetricPareto,
    /// Pareto(α) minus its mean, scaled to unit variance (right tail only).
    ParetoMinusMean,
    /// Standard normal scores; the light-tailed control.
    Gaussian,
}

impl ScoreLaw {
    pub fn is_heavy_tailed(self) -> bool {
        !matches!(self, ScoreLaw::Gaussian)
    }

    fn draw(self, alpha: f64, rng: &mut impl Rng) -> f64 {
        match self {
            ScoreLaw::SymmetricPareto => {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let p = pareto_from_uniform(open_uniform(rng), alpha);
                sign * p / (alpha / (alpha - 2.0)).sqrt()
            }
            ScoreLaw::ParetoMinusMean => {
                let p = pareto_from_uniform(open_uniform(rng), alpha);
                let mean = alpha / (alpha - 1.0);
                let sd = (alpha / (alpha - 2.0)).sqrt() / (alpha - 1.0);
                (p - mean) / sd
            }
            ScoreLaw::Gaussian => rng.sample(StandardNormal),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// `X = Σ_j τ_j η_j v_j` with iid unit-variance scores.
    KlScores,
    /// `X = R·Θ`, `R` Pareto(α), `Θ` from a discrete angular measure.
    Polar,
}

/// Discrete probability measure on the unit sphere of L².
#[derive(Debug, Clone)]
pub struct AngularMeasure {
    atoms: Vec<Curve>,
    weights: Vec<f64>,
}

impl AngularMeasure {
    pub fn new(atoms: Vec<Curve>, weights: Vec<f64>) -> Result<AngularMeasure> {
        if atoms.is_empty() || atoms.len() != weights.len() {
            return Err(Error::InvalidModel(format!(
                "{} atoms with {} weights",
                atoms.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidModel("angular weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidModel(format!("angular weights sum to {total}")));
        }
        for (k, a) in atoms.iter().enumerate() {
            ensure_same_grid(atoms[0].grid(), a.grid())?;
            let norm = a.l2_norm();
            if (norm - 1.0).abs() > 1e-8 {
                return Err(Error::InvalidModel(format!("atom {k} has norm {norm}")));
            }
        }
        Ok(AngularMeasure { atoms, weights })
    }

    pub fn point_mass(atom: Curve) -> Result<AngularMeasure> {
        AngularMeasure::new(vec![atom], vec![1.0])
    }

    pub fn atoms(&self) -> &[Curve] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.atoms[0].grid()
    }
}

/// Regularly varying curve model on a finite orthonormal basis.
#[derive(Debug, Clone)]
pub struct RvCurveModel {
    alpha: f64,
    basis: Vec<Curve>,
    tau: Vec<f64>,
    score_law: ScoreLaw,
    variant: Variant,
    angular: Option<AngularMeasure>,
    atom_coeffs: Vec<DVector<f64>>,
    cumulative: Vec<f64>,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 2.0 && alpha < 4.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("tail index must lie in (2, 4), got {alpha}")))
    }
}

fn check_basis(basis: &[Curve]) -> Result<()> {
    let first = basis
        .first()
        .ok_or_else(|| Error::InvalidModel("basis is empty".into()))?;
    for (i, a) in basis.iter().enumerate() {
        ensure_same_grid(first.grid(), a.grid())?;
        for (j, b) in basis.iter().enumerate().take(i + 1) {
            let ip = a.inner_product(b)?;
            let want = if i == j { 1.0 } else { 0.0 };
            if (ip - want).abs() > 1e-8 {
                return Err(Error::InvalidModel(format!(
                    "basis not orthonormal: <v{i}, v{j}> = {ip}"
                )));
            }
        }
    }
    Ok(())
}

impl RvCurveModel {
    /// `X = Σ_j τ_j η_j v_j`. The tail index is only checked for heavy-tailed laws.
    pub fn kl_scores(alpha: f64, basis: Vec<Curve>, tau: Vec<f64>, score_law: ScoreLaw) -> Result<RvCurveModel> {
        if score_law.is_heavy_tailed() {
            check_alpha(alpha)?;
        }
        check_basis(&basis)?;
        if tau.len() != basis.len() {
            return Err(Error::InvalidModel(format!(
                "{} scale factors for {} basis curves",
                tau.len(),
                basis.len()
            )));
        }
        if tau.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
            return Err(Error::InvalidModel("scale factors must be positive".into()));
        }
        Ok(RvCurveModel {
            alpha,
            basis,
            tau,
            score_law,
            variant: Variant::KlScores,
            angular: None,
            atom_coeffs: Vec::new(),
            cumulative: Vec::new(),
        })
    }

    /// `X = R·Θ` with atoms lying in the span of `basis`.
    pub fn polar(alpha: f64, basis: Vec<Curve>, angular: AngularMeasure) -> Result<RvCurveModel> {
        check_alpha(alpha)?;
        check_basis(&basis)?;
        ensure_same_grid(basis[0].grid(), angular.grid())?;
        let mut atom_coeffs = Vec::with_capacity(angular.atoms.len());
        for (k, a) in angular.atoms.iter().enumerate() {
            let c = basis.iter().map(|v| a.inner_product(v)).collect::<Result<Vec<_>>>()?;
            let c = DVector::from_vec(c);
            if (c.norm() - 1.0).abs() > 1e-8 {
                return Err(Error::InvalidModel(format!(
                    "atom {k} is not representable on the basis"
                )));
            }
            atom_coeffs.push(c);
        }
        let mut acc = 0.0;
        let cumulative = angular
            .weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        let j = basis.len();
        Ok(RvCurveModel {
            alpha,
            basis,
            tau: vec![1.0; j],
            score_law: ScoreLaw::SymmetricPareto,
            variant: Variant::Polar,
            angular: Some(angular),
            atom_coeffs,
            cumulative,
        })
    }

    /// Default reference model: Fourier basis, `J = 8`, `τ_j = 1/j`, symmetric Pareto scores.
    pub fn reference(alpha: f64, grid: &Arc<Grid>) -> Result<RvCurveModel> {
        let basis = crate::func_core::fourier_basis(grid, 8)?;
        let tau = (1..=8).map(|j| 1.0 / j as f64).collect();
        RvCurveModel::kl_scores(alpha, basis, tau, ScoreLaw::SymmetricPareto)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn basis(&self) -> &[Curve] {
        &self.basis
    }

    pub fn tau(&self) -> &[f64] {
        &self.tau
    }

    pub fn score_law(&self) -> ScoreLaw {
        self.score_law
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn angular(&self) -> Option<&AngularMeasure> {
        self.angular.as_ref()
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.basis[0].grid()
    }

    /// Basis dimension `J`.
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn is_heavy_tailed(&self) -> bool {
        self.variant == Variant::Polar || self.score_law.is_heavy_tailed()
    }

    /// Coefficients of the atoms on the basis (polar variant only).
    pub fn atom_coefficients(&self) -> &[DVector<f64>] {
        &self.atom_coeffs
    }

    /// `E[X ⊗ X]` in basis coordinates (`J × J`); this is the covariance for
    /// mean-zero models.
    pub fn second_moment_coeffs(&self) -> DMatrix<f64> {
        let j = self.dim();
        match self.variant {
            Variant::KlScores => DMatrix::from_diagonal(&DVector::from_iterator(j, self.tau.iter().map(|t| t * t))),
            Variant::Polar => {
                let er2 = self.alpha / (self.alpha - 2.0);
                let weights = &self.angular.as_ref().expect("polar model").weights;
                let mut m = DMatrix::zeros(j, j);
                for (c, w) in self.atom_coeffs.iter().zip(weights) {
                    m += c * c.transpose() * (er2 * w);
                }
                m
            }
        }
    }

    /// One draw's basis coefficients, written into `out`.
    pub fn draw_coefficients(&self, rng: &mut impl Rng, out: &mut [f64]) {
        match self.variant {
            Variant::KlScores => {
                for (o, t) in out.iter_mut().zip(&self.tau) {
                    *o = t * self.score_law.draw(self.alpha, rng);
                }
            }
            Variant::Polar => {
                let r = pareto_from_uniform(open_uniform(rng), self.alpha);
                let k = if self.cumulative.len() == 1 {
                    0
                } else {
                    let u = rng.random::<f64>();
                    self.cumulative
                        .iter()
                        .position(|c| u < *c)
                        .unwrap_or(self.cumulative.len() - 1)
                };
                for (o, c) in out.iter_mut().zip(self.atom_coeffs[k].iter()) {
                    *o = r * c;
                }
            }
        }
    }

    /// `n × J` matrix of basis coefficients.
    pub fn sample_coefficients(&self, n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
        let j = self.dim();
        let mut rows = vec![0.0; n * j];
        for chunk in rows.chunks_exact_mut(j) {
            self.draw_coefficients(rng, chunk);
        }
        DMatrix::from_row_slice(n, j, &rows)
    }

    /// Curves with the given basis coefficients.
    pub fn curves_from_coefficients(&self, coeffs: &DMatrix<f64>) -> Result<CurveSample> {
        let b = basis_matrix(&self.basis);
        CurveSample::new(self.grid().clone(), coeffs * b.transpose())
    }
}

/// `N` curves from `model`, drawn from stream 0 of `seed`.
pub fn sample_curves(model: &RvCurveModel, n: usize, grid: &Arc<Grid>, seed: u64) -> Result<CurveSample> {
    ensure_same_grid(model.grid(), grid)?;
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let mut rng = stream_rng(seed, 0);
    let coeffs = model.sample_coefficients(n, &mut rng);
    model.curves_from_coefficients(&coeffs)
}

/// Normalizing sequences for sample size `N`, tail index `α` and constant
/// slowly varying factor `c0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizerSet {
    pub n: usize,
    pub alpha: f64,
    /// `a_N = c0 · N^{1/α}`.
    pub a_n: f64,
    /// `k_N = (α/(4−α))^{2/α} a_N²`; blows up as `α → 4`.
    pub k_n: f64,
    /// `r_N = N / k_N`.
    pub r_n: f64,
}

impl NormalizerSet {
    pub fn new(n: usize, alpha: f64, c0: f64) -> Result<NormalizerSet> {
        if n == 0 {
            return Err(Error::Domain("N must be at least 1".into()));
        }
        check_alpha(alpha)?;
        if !(c0 > 0.0) || !c0.is_finite() {
            return Err(Error::Domain(format!("c0 must be positive, got {c0}")));
        }
        let a_n = c0 * (n as f64).powf(1.0 / alpha);
        let k_n = (alpha / (4.0 - alpha)).powf(2.0 / alpha) * a_n * a_n;
        Ok(NormalizerSet {
            n,
            alpha,
            a_n,
            k_n,
            r_n: n as f64 / k_n,
        })
    }

    /// `a_N²`, the level with `N·P(‖X‖² > a_N²) → 1`.
    pub fn tail_level(&self) -> f64 {
        self.a_n * self.a_n
    }
}

/// `M = α/(α−2) Σ_k w_k θ_k ⊗ θ_k`.
pub fn centering_offset(angular: &AngularMeasure, alpha: f64, grid: &Arc<Grid>) -> Result<HsOperator> {
    check_alpha(alpha)?;
    ensure_same_grid(angular.grid(), grid)?;
    let mut m = HsOperator::zeros(grid.clone());
    for (a, w) in angular.atoms.iter().zip(&angular.weights) {
        m = m.axpy(*w, &HsOperator::tensor_product(a, a)?)?;
    }
    Ok(m.scaled(alpha / (alpha - 2.0)))
}

/// `λ_p = p(1−p) / (Γ(3−p) cos(πp/2))`, `2/π` at `p = 1`.
pub fn lambda_p(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 2.0) {
        return Err(Error::Domain(format!("p must lie in (0, 2), got {p}")));
    }
    if p == 1.0 {
        return Ok(2.0 / PI);
    }
    Ok(p * (1.0 - p) / (statrs::function::gamma::gamma(3.0 - p) * (PI * p / 2.0).cos()))
}

/// Symmetric `p`-stable draw with characteristic function `exp(−|t|^p)`
/// (Chambers–Mallows–Stuck).
pub fn stable_draw(p: f64, rng: &mut impl Rng) -> f64 {
    let v = PI * (rng.random::<f64>() - 0.5);
    let w = -open_uniform(rng).ln();
    if p == 1.0 {
        return v.tan();
    }
    (p * v).sin() / v.cos().powf(1.0 / p) * ((v * (1.0 - p)).cos() / w).powf((1.0 - p) / p)
}

pub fn sample_scalar_stable(p: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
    if !(p > 0.0 && p < 2.0) {
        return Err(Error::Domain(format!("stability index must lie in (0, 2), got {p}")));
    }
    let mut rng = stream_rng(seed, 0);
    Ok((0..n).map(|_| stable_draw(p, &mut rng)).collect())
}
