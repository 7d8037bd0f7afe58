//! Monte Carlo experiments for the convergence of `Ĉ`, `λ̂_j`, `v̂_j` and the
//! stable limit of `(N/k_N)(Ĉ − C)`.
//!
//! Replicates run in parallel on the rayon pool. Each replicate draws from its
//! own ChaCha stream derived from `(seed, design point, replicate)` and results
//! are reduced in replicate order, so reports are bit-identical for any number
//! of worker threads.
//!
//! Two numerically equivalent backends are available. `Grid` builds every
//! curve on the grid and runs the dense FPCA pipeline. `Span` works with the
//! basis coefficients directly: with a grid-orthonormal basis `B`,
//! `Ĉ = B S Bᵀ` where `S` is the `J × J` coefficient second-moment matrix, so
//! HS distances, eigenvalues and eigenfunction distances coincide exactly with
//! their coefficient-space counterparts.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fpca::{align_eigensystem, eigen_gaps, eigendecompose, sample_cov};
use crate::func_core::{basis_matrix, ensure_same_grid, Curve, Grid, HsOperator};
use crate::heavytail_sim::{stream_id, stream_rng, NormalizerSet, RvCurveModel, ScoreLaw, Variant};
use crate::tail_diag::hill_estimator;

const TAG_RATE: u8 = 1;
const TAG_STABLE: u8 = 3;

/// Slack added to both sides of the perturbation inequalities.
pub const PERTURBATION_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    #[default]
    Span,
    Grid,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub model: RvCurveModel,
    pub n_grid: Vec<usize>,
    pub replicates: usize,
    /// Moment order of the reported mean errors.
    pub gamma: f64,
    pub seed: u64,
    /// Directions for limit projections in [`run_stable_limit`].
    pub probes: Vec<HsOperator>,
    pub backend: Backend,
    /// Accepted distance between fitted and theoretical slope.
    pub slope_window: f64,
    /// Constant slowly varying factor in `a_N`.
    pub c0: f64,
    /// Fraction of replicates used as upper order statistics in limit-tail Hill fits.
    pub hill_fraction: f64,
}

impl ExperimentConfig {
    pub fn new(model: RvCurveModel, n_grid: Vec<usize>, replicates: usize, seed: u64) -> Self {
        ExperimentConfig {
            model,
            n_grid,
            replicates,
            gamma: 1.0,
            seed,
            probes: Vec::new(),
            backend: Backend::Span,
            slope_window: 0.10,
            c0: 1.0,
            hill_fraction: 0.05,
        }
    }

    /// Default design: `N ∈ {250, …, 8000}`, `R = 200`.
    pub fn default_n_grid() -> Vec<usize> {
        vec![250, 500, 1000, 2000, 4000, 8000]
    }

    fn validate(&self, need_slope: bool) -> Result<()> {
        if self.n_grid.is_empty() || self.n_grid.contains(&0) {
            return Err(Error::Domain("N grid must be non-empty and positive".into()));
        }
        if self.n_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain("N grid must be strictly increasing".into()));
        }
        if need_slope && self.n_grid.len() < 2 {
            return Err(Error::Domain("slope fits need at least 2 sample sizes".into()));
        }
        if self.replicates < 2 {
            return Err(Error::Domain("need at least 2 replicates".into()));
        }
        if self.n_grid.len() > 0x00ff_ffff || self.replicates > u32::MAX as usize {
            return Err(Error::Domain("design too large for stream ids".into()));
        }
        let heavy = self.model.is_heavy_tailed();
        if !(self.gamma > 0.0) || (heavy && self.gamma >= self.model.alpha() / 2.0) {
            return Err(Error::Domain(format!(
                "gamma must lie in (0, alpha/2), got {}",
                self.gamma
            )));
        }
        if !(self.slope_window > 0.0) {
            return Err(Error::Domain("slope window must be positive".into()));
        }
        Ok(())
    }

    /// `−γ(1 − 2/α)` for heavy-tailed models, `−γ/2` for the Gaussian control.
    pub fn theoretical_slope(&self) -> f64 {
        if self.model.is_heavy_tailed() {
            -self.gamma * (1.0 - 2.0 / self.model.alpha())
        } else {
            -self.gamma / 2.0
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelSummary {
    pub alpha: f64,
    pub dim: usize,
    pub variant: Variant,
    pub score_law: ScoreLaw,
    pub tau: Vec<f64>,
    pub heavy_tailed: bool,
}

impl ModelSummary {
    pub fn of(model: &RvCurveModel) -> Self {
        ModelSummary {
            alpha: model.alpha(),
            dim: model.dim(),
            variant: model.variant(),
            score_law: model.score_law(),
            tau: model.tau().to_vec(),
            heavy_tailed: model.is_heavy_tailed(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ErrorSeries {
    /// `cov_hs`, `lambda`, or `eigenfunction`.
    pub metric: String,
    pub level: Option<usize>,
    pub n: Vec<usize>,
    /// Monte Carlo mean of `error^γ` per sample size.
    pub mean_error: Vec<f64>,
    pub slope: f64,
    pub slope_stderr: f64,
    pub theoretical_slope: f64,
    pub window: f64,
    pub pass: bool,
    pub spearman_rho: f64,
    /// One-sided p-value for a decreasing trend.
    pub spearman_p: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PerturbationAudit {
    pub checks: usize,
    pub violations: usize,
    /// `max(|λ̂_j − λ_j| − ‖Ĉ − C‖_S)` over all checks.
    pub worst_lambda_margin: f64,
    /// `max(‖v̂_j − v_j‖ − 2√2 α_j⁻¹ ‖Ĉ − C‖_S)` over all checks.
    pub worst_eigenfunction_margin: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ProbeTail {
    pub probe: usize,
    pub degenerate: bool,
    pub hill_k: usize,
    pub hill_alpha: Option<f64>,
    pub target_alpha: f64,
    pub mean_projection: f64,
    pub median_projection: f64,
    /// `⟨M, A⟩_S` for the model's angular measure (polar models only).
    pub offset_projection: Option<f64>,
    /// `(N/u)·Ê[⟨X⊗X, A⟩ 1{‖X‖² > u}]` at `u = a_N²`, pooled over replicates.
    pub empirical_offset_at_tail_level: f64,
    /// Same at `u = k_N`; its limit is `(4 − α)/α · ⟨M, A⟩`.
    pub empirical_offset_at_k_n: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RateReport {
    pub kind: String,
    pub model: ModelSummary,
    pub seed: u64,
    pub replicates: usize,
    pub gamma: f64,
    pub n_grid: Vec<usize>,
    pub backend: Backend,
    pub theoretical_slope: f64,
    pub series: Vec<ErrorSeries>,
    pub perturbation: Option<PerturbationAudit>,
    pub failed_replicates: usize,
    pub skipped_levels: Vec<usize>,
    pub normalizers: Option<NormalizerSet>,
    pub probes: Vec<ProbeTail>,
    pub warnings: Vec<String>,
    pub passed: bool,
}

/// Population second-moment operator `E[X ⊗ X]` on the grid (the covariance
/// for mean-zero models).
pub fn true_cov(model: &RvCurveModel, grid: &Arc<Grid>) -> Result<HsOperator> {
    ensure_same_grid(model.grid(), grid)?;
    let b = basis_matrix(model.basis());
    let kernel = &b * model.second_moment_coeffs() * b.transpose();
    HsOperator::new(grid.clone(), kernel)
}

/// OLS slope and its standard error.
pub fn slope_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return Err(Error::Domain(format!(
            "need at least 2 paired points, got {n}/{}",
            y.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Domain("slope fit inputs must be finite".into()));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx <= f64::EPSILON * mx.abs().max(1.0) {
        return Err(Error::Domain("degenerate abscissae".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    if n == 2 {
        return Ok((slope, 0.0));
    }
    let intercept = my - slope * mx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    Ok((slope, (rss / (n - 2) as f64 / sxx).sqrt()))
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx = (0..v.len()).collect::<Vec<_>>();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}

/// Spearman correlation and the one-sided p-value `P(ρ ≤ observed)` under
/// exchangeability (exact enumeration up to 8 points, normal approximation above).
pub fn spearman_decreasing(x: &[f64], y: &[f64]) -> (f64, f64) {
    let rx = ranks(x);
    let ry = ranks(y);
    let rho = pearson(&rx, &ry);
    let n = x.len();
    if n <= 8 {
        let mut perm = ry.clone();
        let mut total = 0usize;
        let mut hits = 0usize;
        permutations(&mut perm, 0, &mut |p| {
            total += 1;
            if pearson(&rx, p) <= rho + 1e-12 {
                hits += 1;
            }
        });
        (rho, hits as f64 / total as f64)
    } else {
        let z = rho * ((n - 1) as f64).sqrt();
        (rho, statrs::function::erf::erfc(-z / 2f64.sqrt()) / 2.0)
    }
}

fn permutations(v: &mut Vec<f64>, k: usize, f: &mut impl FnMut(&[f64])) {
    if k == v.len() {
        f(v);
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permutations(v, k + 1, f);
        v.swap(k, i);
    }
}

/// Population eigenpairs in basis coordinates, sorted non-increasing.
struct Population {
    cov: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    eigenvectors: Vec<DVector<f64>>,
    eigenfunctions: Vec<Curve>,
    gaps: Option<Vec<f64>>,
    grid_cov: Option<HsOperator>,
}

fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, Vec<DVector<f64>>) {
    let j = m.nrows();
    let sym = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order = (0..j).collect::<Vec<_>>();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&k| eig.eigenvalues[k].max(0.0)).collect();
    let vectors = order.iter().map(|&k| eig.eigenvectors.column(k).into_owned()).collect();
    (values, vectors)
}

impl Population {
    fn new(model: &RvCurveModel, backend: Backend) -> Result<Population> {
        let cov = model.second_moment_coeffs();
        let (eigenvalues, eigenvectors) = sorted_eigen(cov.clone());
        let b = basis_matrix(model.basis());
        let eigenfunctions = eigenvectors
            .iter()
            .map(|e| Curve::new(model.grid().clone(), (&b * e).iter().copied().collect()))
            .collect::<Result<Vec<_>>>()?;
        let mut padded = eigenvalues.clone();
        if model.dim() < model.grid().len() {
            padded.push(0.0);
        }
        let gaps = eigen_gaps(&padded).ok().map(|g| g.alpha);
        let grid_cov = match backend {
            Backend::Grid => Some(true_cov(model, model.grid())?),
            Backend::Span => None,
        };
        Ok(Population {
            cov,
            eigenvalues,
            eigenvectors,
            eigenfunctions,
            gaps,
            grid_cov,
        })
    }

    /// Gap around level `j` (0-based), if the level is usable.
    fn gap(&self, j: usize) -> Option<f64> {
        let alpha = self.gaps.as_ref()?.get(j).copied()?;
        (alpha >= 1e-6).then_some(alpha)
    }
}

#[derive(Debug, Clone)]
struct ReplicateOutcome {
    cov_err: f64,
    lambda_err: Vec<f64>,
    v_err: Vec<f64>,
}

fn replicate_span(
    model: &RvCurveModel,
    pop: &Population,
    n: usize,
    levels: &[usize],
    rng: &mut impl rand::Rng,
) -> Result<ReplicateOutcome> {
    let coeffs = model.sample_coefficients(n, rng);
    let s = coeffs.tr_mul(&coeffs) / n as f64;
    let diff = &s - &pop.cov;
    let cov_err = diff.norm();
    let mut lambda_err = Vec::with_capacity(levels.len());
    let mut v_err = Vec::with_capacity(levels.len());
    if !levels.is_empty() {
        let (values, vectors) = sorted_eigen(s);
        for &j in levels {
            lambda_err.push((values[j] - pop.eigenvalues[j]).abs());
            let reference = &pop.eigenvectors[j];
            let sign = if vectors[j].dot(reference) < 0.0 { -1.0 } else { 1.0 };
            v_err.push((&vectors[j] * sign - reference).norm());
        }
    }
    if !cov_err.is_finite() || lambda_err.iter().chain(&v_err).any(|e| !e.is_finite()) {
        return Err(Error::Experiment("non-finite replicate error".into()));
    }
    Ok(ReplicateOutcome {
        cov_err,
        lambda_err,
        v_err,
    })
}

fn replicate_grid(
    model: &RvCurveModel,
    pop: &Population,
    n: usize,
    levels: &[usize],
    rng: &mut impl rand::Rng,
) -> Result<ReplicateOutcome> {
    let coeffs = model.sample_coefficients(n, rng);
    let sample = model.curves_from_coefficients(&coeffs)?;
    let c_hat = sample_cov(&sample, false)?;
    let c = pop.grid_cov.as_ref().expect("grid backend population");
    let cov_err = c_hat.sub(c)?.hs_norm();
    let mut lambda_err = Vec::with_capacity(levels.len());
    let mut v_err = Vec::with_capacity(levels.len());
    if let Some(&top) = levels.iter().max() {
        let eig = eigendecompose(&c_hat, top + 1)?;
        let reference = &pop.eigenfunctions[..=top];
        let eig = align_eigensystem(&eig, reference)?;
        for &j in levels {
            lambda_err.push((eig.eigenvalues[j] - pop.eigenvalues[j]).abs());
            v_err.push(eig.eigenfunctions[j].sub(&reference[j])?.l2_norm());
        }
    }
    Ok(ReplicateOutcome {
        cov_err,
        lambda_err,
        v_err,
    })
}

/// Replicate outcomes per design point; failed replicates are `None`.
fn simulate(cfg: &ExperimentConfig, pop: &Population, levels: &[usize]) -> Vec<Vec<Option<ReplicateOutcome>>> {
    cfg.n_grid
        .iter()
        .enumerate()
        .map(|(point, &n)| {
            (0..cfg.replicates)
                .into_par_iter()
                .map(|r| {
                    let mut rng = stream_rng(cfg.seed, stream_id(TAG_RATE, point as u32, r as u32));
                    let out = match cfg.backend {
                        Backend::Span => replicate_span(&cfg.model, pop, n, levels, &mut rng),
                        Backend::Grid => replicate_grid(&cfg.model, pop, n, levels, &mut rng),
                    };
                    out.ok()
                })
                .collect()
        })
        .collect()
}

fn build_series(
    cfg: &ExperimentConfig,
    metric: &str,
    level: Option<usize>,
    per_point: &[Vec<f64>],
) -> Result<ErrorSeries> {
    let mean_error = per_point
        .iter()
        .map(|errs| errs.iter().map(|e| e.powf(cfg.gamma)).sum::<f64>() / errs.len() as f64)
        .collect::<Vec<_>>();
    let log_n = cfg.n_grid.iter().map(|n| (*n as f64).ln()).collect::<Vec<_>>();
    let log_e = mean_error.iter().map(|e| e.ln()).collect::<Vec<_>>();
    let (slope, slope_stderr) = slope_fit(&log_n, &log_e)?;
    let theoretical_slope = cfg.theoretical_slope();
    let n_f = cfg.n_grid.iter().map(|n| *n as f64).collect::<Vec<_>>();
    let (spearman_rho, spearman_p) = spearman_decreasing(&n_f, &mean_error);
    Ok(ErrorSeries {
        metric: metric.into(),
        level,
        n: cfg.n_grid.clone(),
        mean_error,
        slope,
        slope_stderr,
        theoretical_slope,
        window: cfg.slope_window,
        pass: (slope - theoretical_slope).abs() <= cfg.slope_window,
        spearman_rho,
        spearman_p,
    })
}

fn collect_ok(
    cfg: &ExperimentConfig,
    raw: Vec<Vec<Option<ReplicateOutcome>>>,
) -> Result<(Vec<Vec<ReplicateOutcome>>, usize)> {
    let total = cfg.replicates * cfg.n_grid.len();
    let failed = raw.iter().flatten().filter(|o| o.is_none()).count();
    if failed * 100 > total {
        return Err(Error::Experiment(format!("{failed} of {total} replicates failed")));
    }
    let ok = raw
        .into_iter()
        .map(|v| v.into_iter().flatten().collect::<Vec<_>>())
        .collect::<Vec<_>>();
    if ok.iter().any(|v| v.is_empty()) {
        return Err(Error::Experiment("a design point has no successful replicate".into()));
    }
    Ok((ok, failed))
}

fn base_report(cfg: &ExperimentConfig, kind: &str) -> RateReport {
    RateReport {
        kind: kind.into(),
        model: ModelSummary::of(&cfg.model),
        seed: cfg.seed,
        replicates: cfg.replicates,
        gamma: cfg.gamma,
        n_grid: cfg.n_grid.clone(),
        backend: cfg.backend,
        theoretical_slope: cfg.theoretical_slope(),
        series: Vec::new(),
        perturbation: None,
        failed_replicates: 0,
        skipped_levels: Vec::new(),
        normalizers: None,
        probes: Vec::new(),
        warnings: Vec::new(),
        passed: false,
    }
}

/// Mean `‖Ĉ − C‖_S^γ` per sample size and its log–log slope.
pub fn run_cov_rate(cfg: &ExperimentConfig) -> Result<RateReport> {
    cfg.validate(true)?;
    let pop = Population::new(&cfg.model, cfg.backend)?;
    let (ok, failed) = collect_ok(cfg, simulate(cfg, &pop, &[]))?;
    let errs = ok
        .iter()
        .map(|v| v.iter().map(|o| o.cov_err).collect::<Vec<_>>())
        .collect::<Vec<_>>();
    let mut report = base_report(cfg, "covariance");
    report.failed_replicates = failed;
    report.series.push(build_series(cfg, "cov_hs", None, &errs)?);
    if cfg.replicates < 50 {
        report.warnings.push("fewer than 50 replicates per sample size".into());
    }
    report.passed = report.series.iter().all(|s| s.pass);
    Ok(report)
}

/// Mean `|λ̂_j − λ_j|^γ` and `‖v̂_j − v_j‖^γ` (signs aligned) per level, plus an
/// audit of the perturbation inequalities on every replicate.
///
/// `levels` are 1-based. Levels whose population gap is below `1e-6` are skipped.
pub fn run_eigen_rate(cfg: &ExperimentConfig, levels: &[usize]) -> Result<RateReport> {
    cfg.validate(true)?;
    let pop = Population::new(&cfg.model, cfg.backend)?;
    let mut report = base_report(cfg, "eigen");
    let mut used = Vec::new();
    for &j in levels {
        if j == 0 || j > cfg.model.dim() {
            return Err(Error::Domain(format!("level {j} outside 1..={}", cfg.model.dim())));
        }
        match pop.gap(j - 1) {
            Some(_) => used.push(j - 1),
            None => {
                report.skipped_levels.push(j);
                report.warnings.push(format!("level {j} skipped: eigen-gap below 1e-6"));
            }
        }
    }
    let (ok, failed) = collect_ok(cfg, simulate(cfg, &pop, &used))?;
    report.failed_replicates = failed;

    let mut audit = PerturbationAudit {
        checks: 0,
        violations: 0,
        worst_lambda_margin: f64::NEG_INFINITY,
        worst_eigenfunction_margin: f64::NEG_INFINITY,
    };
    for point in &ok {
        for o in point {
            for (idx, &j) in used.iter().enumerate() {
                let gap = pop.gap(j).expect("usable level");
                let lm = o.lambda_err[idx] - o.cov_err;
                let vm = o.v_err[idx] - 2.0 * 2f64.sqrt() / gap * o.cov_err;
                audit.checks += 1;
                if lm > PERTURBATION_SLACK || vm > PERTURBATION_SLACK {
                    audit.violations += 1;
                }
                audit.worst_lambda_margin = audit.worst_lambda_margin.max(lm);
                audit.worst_eigenfunction_margin = audit.worst_eigenfunction_margin.max(vm);
            }
        }
    }

    for (idx, &j) in used.iter().enumerate() {
        let lam = ok
            .iter()
            .map(|v| v.iter().map(|o| o.lambda_err[idx]).collect::<Vec<_>>())
            .collect::<Vec<_>>();
        let vv = ok
            .iter()
            .map(|v| v.iter().map(|o| o.v_err[idx]).collect::<Vec<_>>())
            .collect::<Vec<_>>();
        report.series.push(build_series(cfg, "lambda", Some(j + 1), &lam)?);
        report
            .series
            .push(build_series(cfg, "eigenfunction", Some(j + 1), &vv)?);
    }
    let cov = ok
        .iter()
        .map(|v| v.iter().map(|o| o.cov_err).collect::<Vec<_>>())
        .collect::<Vec<_>>();
    let mut cov_series = build_series(cfg, "cov_hs", None, &cov)?;
    // reported for reference, not part of the eigen verdict
    cov_series.pass = true;
    report.series.push(cov_series);
    report.passed = audit.violations == 0 && report.series.iter().all(|s| s.pass);
    report.perturbation = Some(audit);
    if cfg.replicates < 50 {
        report.warnings.push("fewer than 50 replicates per sample size".into());
    }
    Ok(report)
}

/// Projection of a grid operator onto basis coordinates: `Bᵀ D A D B`.
fn probe_coefficients(model: &RvCurveModel, probe: &HsOperator) -> Result<DMatrix<f64>> {
    ensure_same_grid(model.grid(), probe.grid())?;
    let mut b = basis_matrix(model.basis());
    for (i, w) in model.grid().weights().iter().enumerate() {
        b.row_mut(i).scale_mut(*w);
    }
    Ok(b.transpose() * probe.kernel() * b)
}

/// Orthogonal projector, in basis coordinates, onto the range of `E[X ⊗ X]`.
/// Every draw lies in this range, so a probe that vanishes on it sees only zeros.
fn support_projector(model: &RvCurveModel) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(model.second_moment_coeffs());
    let top = eig.eigenvalues.amax();
    let j = model.dim();
    let mut p = DMatrix::zeros(j, j);
    for (i, l) in eig.eigenvalues.iter().enumerate() {
        if *l > 1e-12 * top {
            let v = eig.eigenvectors.column(i);
            p += v * v.transpose();
        }
    }
    p
}

struct StableReplicate {
    projections: Vec<f64>,
    tail_sums_a: Vec<f64>,
    tail_sums_k: Vec<f64>,
}

/// Replicates of `W_N = (N/k_N)(Ĉ − C)` at the largest `N` of the design,
/// projected on each probe, with Hill fits of the projection tails and the
/// empirical truncated-tail centering.
pub fn run_stable_limit(cfg: &ExperimentConfig) -> Result<RateReport> {
    cfg.validate(false)?;
    if cfg.probes.is_empty() {
        return Err(Error::Domain("stable-limit experiment needs at least one probe".into()));
    }
    if !cfg.model.is_heavy_tailed() {
        return Err(Error::Domain(
            "stable-limit experiment needs a heavy-tailed model".into(),
        ));
    }
    let alpha = cfg.model.alpha();
    let n = *cfg.n_grid.last().expect("validated");
    let norm = NormalizerSet::new(n, alpha, cfg.c0)?;
    let pop = Population::new(&cfg.model, cfg.backend)?;
    let probe_coeffs = cfg
        .probes
        .iter()
        .map(|p| probe_coefficients(&cfg.model, p))
        .collect::<Result<Vec<_>>>()?;
    let tail_level = norm.tail_level();
    let grid_probes = cfg.backend == Backend::Grid;

    let reps = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| -> Result<StableReplicate> {
            let mut rng = stream_rng(cfg.seed, stream_id(TAG_STABLE, 0, r as u32));
            let coeffs = cfg.model.sample_coefficients(n, &mut rng);
            let mut tail_sums_a = vec![0.0; probe_coeffs.len()];
            let mut tail_sums_k = vec![0.0; probe_coeffs.len()];
            for row in coeffs.row_iter() {
                let x = row.transpose();
                let sq = x.norm_squared();
                if sq > tail_level.min(norm.k_n) {
                    for (p, a) in probe_coeffs.iter().enumerate() {
                        let proj = (a * &x).dot(&x);
                        if sq > tail_level {
                            tail_sums_a[p] += proj;
                        }
                        if sq > norm.k_n {
                            tail_sums_k[p] += proj;
                        }
                    }
                }
            }
            let projections = if grid_probes {
                let sample = cfg.model.curves_from_coefficients(&coeffs)?;
                let c_hat = sample_cov(&sample, false)?;
                let w = c_hat
                    .sub(pop.grid_cov.as_ref().expect("grid population"))?
                    .scaled(norm.r_n);
                cfg.probes.iter().map(|a| w.hs_inner(a)).collect::<Result<Vec<_>>>()?
            } else {
                let w = (coeffs.tr_mul(&coeffs) / n as f64 - &pop.cov) * norm.r_n;
                probe_coeffs.iter().map(|a| w.dot(a)).collect()
            };
            Ok(StableReplicate {
                projections,
                tail_sums_a,
                tail_sums_k,
            })
        })
        .collect::<Vec<_>>();
    let failed = reps.iter().filter(|r| r.is_err()).count();
    if failed * 100 > cfg.replicates {
        return Err(Error::Experiment(format!(
            "{failed} of {} replicates failed",
            cfg.replicates
        )));
    }
    let reps = reps.into_iter().flatten().collect::<Vec<_>>();
    let used = reps.len();

    let mut report = base_report(cfg, "stable-limit");
    report.failed_replicates = failed;
    report.normalizers = Some(norm);
    if used < 1000 {
        report
            .warnings
            .push(format!("only {used} replicates; limit-tail Hill fits are unreliable"));
    }
    let hill_k = ((cfg.hill_fraction * used as f64).round() as usize).clamp(1, used.saturating_sub(1).max(1));
    let offset = cfg
        .model
        .angular()
        .map(|g| crate::heavytail_sim::centering_offset(g, alpha, cfg.model.grid()))
        .transpose()?;
    let support = support_projector(&cfg.model);
    let pooled = (n * used) as f64;
    let mut all_ok = true;
    for (p, probe) in cfg.probes.iter().enumerate() {
        let proj = reps.iter().map(|r| r.projections[p]).collect::<Vec<_>>();
        let in_span = (&support * &probe_coeffs[p] * &support).norm();
        let degenerate = in_span <= 1e-10 * probe.hs_norm().max(f64::MIN_POSITIVE);
        let hill_alpha = if degenerate {
            None
        } else {
            hill_estimator(&proj, hill_k).ok()
        };
        let mut sorted = proj.clone();
        sorted.sort_by(f64::total_cmp);
        let median = if used % 2 == 1 {
            sorted[used / 2]
        } else {
            0.5 * (sorted[used / 2 - 1] + sorted[used / 2])
        };
        let emp_a = n as f64 / tail_level * reps.iter().map(|r| r.tail_sums_a[p]).sum::<f64>() / pooled;
        let emp_k = n as f64 / norm.k_n * reps.iter().map(|r| r.tail_sums_k[p]).sum::<f64>() / pooled;
        if !degenerate && hill_alpha.is_none() {
            all_ok = false;
        }
        report.probes.push(ProbeTail {
            probe: p,
            degenerate,
            hill_k,
            hill_alpha,
            target_alpha: alpha / 2.0,
            mean_projection: proj.iter().sum::<f64>() / used as f64,
            median_projection: median,
            offset_projection: offset.as_ref().map(|m| m.hs_inner(probe)).transpose()?,
            empirical_offset_at_tail_level: emp_a,
            empirical_offset_at_k_n: emp_k,
        });
    }
    report.passed = all_ok;
    Ok(report)
}
