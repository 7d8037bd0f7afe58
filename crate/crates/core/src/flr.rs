//! Functional linear regression `Y = Ψ(X) + ε` with the truncated
//! FPC-expansion estimator `ψ̂_KL(t, s) = Σ_{k≤K} Σ_{ℓ≤L} σ̂_ℓk/λ̂_ℓ û_k(t) v̂_ℓ(s)`.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fpca::{eigen_gaps, eigendecompose, fpca, scores};
use crate::func_core::{basis_matrix, ensure_same_grid, Curve, CurveSample, Grid, HsOperator};
use crate::heavytail_sim::{stream_id, stream_rng, RvCurveModel};
use crate::rate_harness::{spearman_decreasing, true_cov};

const TAG_FLR: u8 = 4;

/// `λ̂_L` at or below this is treated as numerically zero.
pub const RANK_FLOOR: f64 = 1e-12;

/// Population eigenvalues below this fraction of the largest are dropped.
const SPECTRUM_CUTOFF: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct FlrModel {
    psi: HsOperator,
    x_model: RvCurveModel,
    noise_scale: f64,
    noise_basis: Vec<Curve>,
}

impl FlrModel {
    /// Noise is `Σ_{j≤J_Y} (noise_scale/√J_Y) g_j e_j` with iid standard normal
    /// `g_j` and orthonormal `e_j` from `noise_basis`, so `E‖ε‖² = noise_scale²`.
    pub fn new(psi: HsOperator, x_model: RvCurveModel, noise_scale: f64, noise_basis: Vec<Curve>) -> Result<FlrModel> {
        ensure_same_grid(psi.grid(), x_model.grid())?;
        if !(noise_scale >= 0.0) || !noise_scale.is_finite() {
            return Err(Error::InvalidModel(format!(
                "noise scale must be >= 0, got {noise_scale}"
            )));
        }
        if noise_scale > 0.0 && noise_basis.is_empty() {
            return Err(Error::InvalidModel("positive noise needs a noise basis".into()));
        }
        for (i, a) in noise_basis.iter().enumerate() {
            ensure_same_grid(psi.grid(), a.grid())?;
            for (j, b) in noise_basis.iter().enumerate().take(i + 1) {
                let ip = a.inner_product(b)?;
                let want = if i == j { 1.0 } else { 0.0 };
                if (ip - want).abs() > 1e-8 {
                    return Err(Error::InvalidModel(format!(
                        "noise basis not orthonormal: <e{i}, e{j}> = {ip}"
                    )));
                }
            }
        }
        Ok(FlrModel {
            psi,
            x_model,
            noise_scale,
            noise_basis,
        })
    }

    pub fn psi(&self) -> &HsOperator {
        &self.psi
    }

    pub fn x_model(&self) -> &RvCurveModel {
        &self.x_model
    }

    pub fn noise_scale(&self) -> f64 {
        self.noise_scale
    }

    pub fn noise_basis(&self) -> &[Curve] {
        &self.noise_basis
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.psi.grid()
    }

    /// `E[ε ⊗ ε]`.
    pub fn noise_cov(&self) -> Result<HsOperator> {
        let mut c = HsOperator::zeros(self.grid().clone());
        if self.noise_scale == 0.0 {
            return Ok(c);
        }
        let v = self.noise_scale * self.noise_scale / self.noise_basis.len() as f64;
        for e in &self.noise_basis {
            c = c.axpy(v, &HsOperator::tensor_product(e, e)?)?;
        }
        Ok(c)
    }

    /// `C_Y = Ψ C_X Ψ* + C_ε`.
    pub fn response_cov(&self) -> Result<HsOperator> {
        let cx = true_cov(&self.x_model, self.grid())?;
        let c = self.psi.compose(&cx)?.compose(&self.psi.adjoint())?;
        let c = c.axpy(1.0, &c.adjoint())?.scaled(0.5);
        c.axpy(1.0, &self.noise_cov()?)
    }

    /// `E‖Y‖² = tr C_Y`.
    pub fn expected_response_sq_norm(&self) -> Result<f64> {
        let c = self.response_cov()?;
        let w = self.grid().weights();
        Ok((0..w.len()).map(|i| w[i] * c.kernel()[(i, i)]).sum())
    }

    /// Population eigenstructure of `C_X` and `C_Y` and the cross moments `σ_ℓk`.
    pub fn truth(&self) -> Result<FlrTruth> {
        let grid = self.grid().clone();
        let cx = true_cov(&self.x_model, &grid)?;
        let ex = leading(&cx, self.x_model.dim())?;
        let cy = self.response_cov()?;
        let ey = leading(&cy, grid.len())?;
        let (lambda, v) = ex;
        let (gamma, u) = ey;
        let psi_cx = self.psi.compose(&cx)?;
        let mut sigma = DMatrix::zeros(lambda.len(), gamma.len());
        let mut sigma_cross = DMatrix::zeros(lambda.len(), gamma.len());
        for (l, vl) in v.iter().enumerate() {
            let pv = self.psi.apply(vl)?;
            let cv = psi_cx.apply(vl)?;
            for (k, uk) in u.iter().enumerate() {
                sigma[(l, k)] = lambda[l] * pv.inner_product(uk)?;
                sigma_cross[(l, k)] = cv.inner_product(uk)?;
            }
        }
        let full = assemble_psi(&lambda, &v, &u, &sigma)?;
        let unrepresented = self.psi.sub(&full)?.hs_norm();
        Ok(FlrTruth {
            psi_hs: self.psi.hs_norm(),
            lambda,
            v,
            gamma,
            u,
            sigma,
            sigma_cross,
            unrepresented,
            psi: self.psi.clone(),
        })
    }
}

fn leading(c: &HsOperator, max: usize) -> Result<(Vec<f64>, Vec<Curve>)> {
    let eig = eigendecompose(c, max.min(c.grid().len()))?;
    let top = eig.eigenvalues.first().copied().unwrap_or(0.0);
    let keep = eig
        .eigenvalues
        .iter()
        .take_while(|&&l| top > 0.0 && l > SPECTRUM_CUTOFF * top)
        .count();
    Ok((eig.eigenvalues[..keep].to_vec(), eig.eigenfunctions[..keep].to_vec()))
}

/// Closed-form model quantities.
#[derive(Debug, Clone)]
pub struct FlrTruth {
    pub psi: HsOperator,
    pub psi_hs: f64,
    /// Non-zero eigenvalues of `C_X` and their eigenfunctions.
    pub lambda: Vec<f64>,
    pub v: Vec<Curve>,
    /// Non-zero eigenvalues of `C_Y` and their eigenfunctions.
    pub gamma: Vec<f64>,
    pub u: Vec<Curve>,
    /// `σ_ℓk = λ_ℓ ⟨Ψ(v_ℓ), u_k⟩`, `L × K`.
    pub sigma: DMatrix<f64>,
    /// `E[ξ_ℓ ζ_k] = ⟨Ψ C_X v_ℓ, u_k⟩`, `L × K`.
    pub sigma_cross: DMatrix<f64>,
    /// `‖Ψ − Σ_{k,ℓ} σ_ℓk/λ_ℓ u_k ⊗ v_ℓ‖_S`; zero on finite models.
    pub unrepresented: f64,
}

impl FlrTruth {
    /// `Σ_{k,ℓ} σ²_ℓk / λ²_ℓ`.
    pub fn h2_sum(&self) -> f64 {
        self.tail_sum(0, 0)
    }

    /// `Σ_{k>K or ℓ>L} σ²_ℓk / λ²_ℓ`, the squared HS norm of `Ψ_KL − Ψ`.
    pub fn tail_sum(&self, k: usize, l: usize) -> f64 {
        let mut total = 0.0;
        for li in 0..self.lambda.len() {
            for ki in 0..self.gamma.len() {
                if ki >= k || li >= l {
                    let r = self.sigma[(li, ki)] / self.lambda[li];
                    total += r * r;
                }
            }
        }
        total
    }

    /// `Ψ_KL = Σ_{k≤K} Σ_{ℓ≤L} σ_ℓk/λ_ℓ u_k ⊗ v_ℓ`.
    pub fn truncated_psi(&self, k: usize, l: usize) -> Result<HsOperator> {
        let k = k.min(self.gamma.len());
        let l = l.min(self.lambda.len());
        let sigma = self.sigma.view((0, 0), (l, k)).into_owned();
        assemble_psi(&self.lambda[..l], &self.v[..l], &self.u[..k], &sigma)
    }
}

/// `Y_i = Ψ(X_i) + ε_i` for `N` draws from stream 0 of `seed`.
///
/// `X` coincides with `sample_curves(model.x_model(), n, grid, seed)`.
pub fn simulate_flr(model: &FlrModel, n: usize, grid: &Arc<Grid>, seed: u64) -> Result<(CurveSample, CurveSample)> {
    ensure_same_grid(model.grid(), grid)?;
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let prep = Prepared::new(model);
    let mut rng = stream_rng(seed, 0);
    prep.draw(model, n, &mut rng)
}

/// Per-model matrices reused across draws.
struct Prepared {
    /// `T × J`, column `j` is `Ψ(b_j)`.
    psi_basis: DMatrix<f64>,
    noise_basis: DMatrix<f64>,
}

impl Prepared {
    fn new(model: &FlrModel) -> Prepared {
        let mut b = basis_matrix(model.x_model.basis());
        for (i, w) in model.grid().weights().iter().enumerate() {
            b.row_mut(i).scale_mut(*w);
        }
        Prepared {
            psi_basis: model.psi.kernel() * b,
            noise_basis: basis_matrix(&model.noise_basis),
        }
    }

    fn draw(&self, model: &FlrModel, n: usize, rng: &mut impl Rng) -> Result<(CurveSample, CurveSample)> {
        let coeffs = model.x_model.sample_coefficients(n, rng);
        let x = model.x_model.curves_from_coefficients(&coeffs)?;
        let mut y = &coeffs * self.psi_basis.transpose();
        if model.noise_scale > 0.0 {
            let jy = model.noise_basis.len();
            let sd = model.noise_scale / (jy as f64).sqrt();
            let g = DMatrix::from_fn(n, jy, |_, _| sd * rng.sample::<f64, _>(StandardNormal));
            y += g * self.noise_basis.transpose();
        }
        Ok((x, CurveSample::new(model.grid().clone(), y)?))
    }
}

/// `σ̂_ℓk = N⁻¹ Σ_i ⟨X_i, v̂_ℓ⟩⟨Y_i, û_k⟩`, an `L × K` matrix.
pub fn estimate_sigma(
    x: &CurveSample,
    y: &CurveSample,
    vhat: &[Curve],
    uhat: &[Curve],
    k: usize,
    l: usize,
) -> Result<DMatrix<f64>> {
    ensure_same_grid(x.grid(), y.grid())?;
    if x.len() != y.len() {
        return Err(Error::Dimension(format!(
            "{} regressors but {} responses",
            x.len(),
            y.len()
        )));
    }
    if l > vhat.len() || k > uhat.len() {
        return Err(Error::Dimension(format!(
            "K = {k}, L = {l} with {} response and {} regressor components",
            uhat.len(),
            vhat.len()
        )));
    }
    let xi = scores(x, &vhat[..l])?;
    let zeta = scores(y, &uhat[..k])?;
    Ok(xi.tr_mul(&zeta) / x.len() as f64)
}

/// Kernel `Σ_{k,ℓ} σ_ℓk/λ_ℓ u_k(t) v_ℓ(s)` from its ingredients.
pub fn assemble_psi(lambda: &[f64], v: &[Curve], u: &[Curve], sigma: &DMatrix<f64>) -> Result<HsOperator> {
    let l = lambda.len();
    let k = u.len();
    if v.len() != l || sigma.nrows() != l || sigma.ncols() != k {
        return Err(Error::Dimension(format!(
            "sigma is {}x{} for L = {l}, K = {k}",
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    let grid = v
        .first()
        .or(u.first())
        .map(|c| c.grid().clone())
        .ok_or_else(|| Error::Dimension("no components".into()))?;
    if k == 0 || l == 0 {
        return Ok(HsOperator::zeros(grid));
    }
    for c in v.iter().chain(u) {
        ensure_same_grid(&grid, c.grid())?;
    }
    let mut m = sigma.clone();
    for (li, lam) in lambda.iter().enumerate() {
        m.row_mut(li).unscale_mut(*lam);
    }
    let um = basis_matrix(u) * m.transpose();
    HsOperator::new(grid, um * basis_matrix(v).transpose())
}

/// `ψ̂_KL` with `v̂_ℓ` from `Ĉ_X` and `û_k` from `Ĉ_Y`. `K = 0` or `L = 0`
/// gives the zero operator.
pub fn estimate_psi(x: &CurveSample, y: &CurveSample, k: usize, l: usize) -> Result<HsOperator> {
    ensure_same_grid(x.grid(), y.grid())?;
    if k == 0 || l == 0 {
        return Ok(HsOperator::zeros(x.grid().clone()));
    }
    let fx = fpca(x, l, false)?;
    let fy = fpca(y, k, false)?;
    psi_from_fits(x, y, &fx.eigenvalues, &fx.eigenfunctions, &fy.eigenfunctions, k, l)
}

fn psi_from_fits(
    x: &CurveSample,
    y: &CurveSample,
    lambda: &[f64],
    v: &[Curve],
    u: &[Curve],
    k: usize,
    l: usize,
) -> Result<HsOperator> {
    if lambda[l - 1] <= RANK_FLOOR {
        return Err(Error::RankDeficient {
            index: l,
            value: lambda[l - 1],
        });
    }
    let sigma = estimate_sigma(x, y, &v[..l], &u[..k], k, l)?;
    assemble_psi(&lambda[..l], &v[..l], &u[..k], &sigma)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationChoice {
    pub k: usize,
    pub l: usize,
    pub gamma: f64,
    pub bound: f64,
    /// The four rate statistics at the chosen `(K, L)`.
    pub diagnostics: [f64; 4],
}

/// Finite-N rate statistics at `(K, L)`, each multiplied by `N^{1/γ−1}`:
///
/// 1. `λ_L^{−3/2} L^{1/2}`
/// 2. `λ_L^{−1} Σ_{j≤L} α_j⁻¹`
/// 3. `λ_L^{−1} K^{1/2}`
/// 4. `λ_L^{−1} [Σ_{k≤K} β_k⁻¹ + (Σ_{k≤K} β_k⁻²)^{1/2}]`
pub fn condition_statistics(
    lambda: &[f64],
    alpha_gaps: &[f64],
    beta_gaps: &[f64],
    n: usize,
    gamma: f64,
    k: usize,
    l: usize,
) -> [f64; 4] {
    let rate = (n as f64).powf(1.0 / gamma - 1.0);
    let lam = lambda[l - 1];
    let inv_alpha: f64 = alpha_gaps[..l].iter().map(|a| 1.0 / a).sum();
    let inv_beta: f64 = beta_gaps[..k].iter().map(|b| 1.0 / b).sum();
    let inv_beta2: f64 = beta_gaps[..k].iter().map(|b| 1.0 / (b * b)).sum();
    let lf = l as f64;
    let kf = k as f64;
    [
        lam.powf(-1.5) * lf.sqrt() * rate,
        inv_alpha / lam * rate,
        kf.sqrt() / lam * rate,
        (inv_beta + inv_beta2.sqrt()) / lam * rate,
    ]
}

/// Largest `(L, K) ≤ caps` in lexicographic order whose four rate
/// statistics are all `≤ bound`.
///
/// Gaps come from the full supplied lists, so the last entry of each list
/// only has its left gap. `caps = (K_max, L_max)`.
pub fn select_truncation(
    lambda_hat: &[f64],
    gamma_hat: &[f64],
    n: usize,
    gamma: f64,
    caps: (usize, usize),
    bound: f64,
) -> Result<TruncationChoice> {
    let (kmax, lmax) = caps;
    if !(gamma > 1.0) || !gamma.is_finite() {
        return Err(Error::Domain(format!("gamma must exceed 1, got {gamma}")));
    }
    if !(bound > 0.0) || n == 0 {
        return Err(Error::Domain("bound and N must be positive".into()));
    }
    if kmax == 0 || lmax == 0 || lmax > lambda_hat.len() || kmax > gamma_hat.len() {
        return Err(Error::Domain(format!(
            "caps (K, L) = ({kmax}, {lmax}) must be positive and within the supplied spectra"
        )));
    }
    let alpha_gaps = eigen_gaps(lambda_hat)?.alpha;
    let beta_gaps = eigen_gaps(gamma_hat)?.alpha;
    for l in (1..=lmax).rev() {
        if !(lambda_hat[l - 1] > 0.0) {
            continue;
        }
        for k in (1..=kmax).rev() {
            let d = condition_statistics(lambda_hat, &alpha_gaps, &beta_gaps, n, gamma, k, l);
            if d.iter().all(|s| s.is_finite() && *s <= bound) {
                return Ok(TruncationChoice {
                    k,
                    l,
                    gamma,
                    bound,
                    diagnostics: d,
                });
            }
        }
    }
    let d = condition_statistics(lambda_hat, &alpha_gaps, &beta_gaps, n, gamma, 1, 1);
    Err(Error::NoTruncation(format!(
        "(K, L) = (1, 1) gives statistics {d:?} above bound {bound} at N = {n}"
    )))
}

#[derive(Debug, Clone)]
pub struct FlrExperimentConfig {
    pub model: FlrModel,
    pub n_grid: Vec<usize>,
    pub replicates: usize,
    /// Moment order in the rate conditions, in `(1, α/2)`.
    pub gamma: f64,
    pub seed: u64,
    pub bound: f64,
    /// `(K_max, L_max)`; `None` uses the model's population ranks.
    pub caps: Option<(usize, usize)>,
}

impl FlrExperimentConfig {
    pub fn new(model: FlrModel, n_grid: Vec<usize>, replicates: usize, gamma: f64, seed: u64) -> Self {
        FlrExperimentConfig {
            model,
            n_grid,
            replicates,
            gamma,
            seed,
            bound: 1.0,
            caps: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Trend {
    Decreasing,
    FlatAtFloor,
    NotDecreasing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlrPoint {
    pub n: usize,
    /// Median of `‖Ψ̂_KL − Ψ‖_L` over successful replicates.
    pub median_error: f64,
    /// Lower medians of the selected truncation levels.
    pub k: usize,
    pub l: usize,
    /// `‖Ψ_KL − Ψ‖_S` at the median `(K, L)`, from the closed-form tail sum.
    pub bias_hs: f64,
    pub failed_replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlrReport {
    pub kind: String,
    pub seed: u64,
    pub replicates: usize,
    pub gamma: f64,
    pub bound: f64,
    pub caps: (usize, usize),
    pub psi_hs_norm: f64,
    pub psi_operator_norm: f64,
    pub points: Vec<FlrPoint>,
    /// Median error at the largest `N` over that at the smallest.
    pub error_ratio: f64,
    pub spearman_rho: f64,
    pub trend: Trend,
    pub warnings: Vec<String>,
}

fn lower_median<T: Copy + PartialOrd>(v: &mut [T]) -> T {
    v.sort_by(|a, b| a.partial_cmp(b).expect("comparable"));
    v[(v.len() - 1) / 2]
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Median operator-norm error of `Ψ̂_KL` per sample size, with `(K, L)` chosen
/// by [`select_truncation`] on every replicate.
pub fn flr_consistency_experiment(cfg: &FlrExperimentConfig) -> Result<FlrReport> {
    if cfg.n_grid.len() < 2 || cfg.n_grid.windows(2).any(|w| w[1] <= w[0]) || cfg.n_grid[0] == 0 {
        return Err(Error::Domain(
            "N grid must be strictly increasing with at least 2 entries".into(),
        ));
    }
    if cfg.replicates == 0 {
        return Err(Error::Domain("need at least 1 replicate".into()));
    }
    let xm = cfg.model.x_model();
    if xm.is_heavy_tailed() && cfg.gamma >= xm.alpha() / 2.0 {
        return Err(Error::Domain(format!(
            "gamma must lie in (1, alpha/2), got {}",
            cfg.gamma
        )));
    }
    let truth = cfg.model.truth()?;
    let caps = cfg.caps.unwrap_or((truth.gamma.len(), truth.lambda.len()));
    if caps.0 == 0 || caps.1 == 0 {
        return Err(Error::Domain("truncation caps must be positive".into()));
    }
    // one extra eigenvalue gives the last capped level both of its gaps
    let px = (caps.1 + 1).min(xm.dim()).max(2);
    let py = (caps.0 + 1).min(truth.gamma.len()).max(2);
    if caps.1 > px || caps.0 > py {
        return Err(Error::Domain(format!("caps {caps:?} exceed the model ranks")));
    }
    let prep = Prepared::new(&cfg.model);
    let mut points = Vec::with_capacity(cfg.n_grid.len());
    let mut warnings = Vec::new();
    for (p, &n) in cfg.n_grid.iter().enumerate() {
        let reps = (0..cfg.replicates)
            .into_par_iter()
            .map(|r| -> Result<(f64, usize, usize)> {
                let mut rng = stream_rng(cfg.seed, stream_id(TAG_FLR, p as u32, r as u32));
                let (x, y) = prep.draw(&cfg.model, n, &mut rng)?;
                let fx = fpca(&x, px, false)?;
                let fy = fpca(&y, py, false)?;
                let choice = select_truncation(&fx.eigenvalues, &fy.eigenvalues, n, cfg.gamma, caps, cfg.bound)?;
                let psi = psi_from_fits(
                    &x,
                    &y,
                    &fx.eigenvalues,
                    &fx.eigenfunctions,
                    &fy.eigenfunctions,
                    choice.k,
                    choice.l,
                )?;
                Ok((psi.sub(cfg.model.psi())?.operator_norm(), choice.k, choice.l))
            })
            .collect::<Vec<_>>();
        let failed = reps.iter().filter(|r| r.is_err()).count();
        if failed * 100 > cfg.replicates {
            let first = reps.into_iter().find_map(|r| r.err()).expect("a failure");
            return Err(Error::Experiment(format!(
                "{failed} of {} replicates failed at N = {n}: {first}",
                cfg.replicates
            )));
        }
        if failed > 0 {
            warnings.push(format!("{failed} replicates failed at N = {n}"));
        }
        let ok = reps.into_iter().flatten().collect::<Vec<_>>();
        let mut errs = ok.iter().map(|o| o.0).collect::<Vec<_>>();
        let mut ks = ok.iter().map(|o| o.1).collect::<Vec<_>>();
        let mut ls = ok.iter().map(|o| o.2).collect::<Vec<_>>();
        let k = lower_median(&mut ks);
        let l = lower_median(&mut ls);
        points.push(FlrPoint {
            n,
            median_error: median(&mut errs),
            k,
            l,
            bias_hs: truth.tail_sum(k, l).sqrt(),
            failed_replicates: failed,
        });
    }
    let n_f = points.iter().map(|p| p.n as f64).collect::<Vec<_>>();
    let med = points.iter().map(|p| p.median_error).collect::<Vec<_>>();
    let (rho, _) = spearman_decreasing(&n_f, &med);
    let first = med[0];
    let last = med[med.len() - 1];
    let trend = if truth.psi_hs <= 1e-12 {
        Trend::FlatAtFloor
    } else if rho < 0.0 && last < first {
        Trend::Decreasing
    } else {
        Trend::NotDecreasing
    };
    Ok(FlrReport {
        kind: "flr-consistency".into(),
        seed: cfg.seed,
        replicates: cfg.replicates,
        gamma: cfg.gamma,
        bound: cfg.bound,
        caps,
        psi_hs_norm: truth.psi_hs,
        psi_operator_norm: cfg.model.psi().operator_norm(),
        points,
        error_ratio: if first > 0.0 { last / first } else { f64::NAN },
        spearman_rho: rho,
        trend,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::func_core::fourier_basis;
    use crate::heavytail_sim::ScoreLaw;

    fn setup(t: usize) -> (Arc<Grid>, Vec<Curve>, RvCurveModel) {
        let grid = Grid::uniform(t).unwrap();
        let basis = fourier_basis(&grid, 4).unwrap();
        let tau = vec![1.0, 0.5, 1.0 / 3.0, 0.25];
        let xm = RvCurveModel::kl_scores(3.0, basis.clone(), tau, ScoreLaw::SymmetricPareto).unwrap();
        (grid, basis, xm)
    }

    #[test]
    fn zero_model_gives_zero_response() {
        let (grid, _, xm) = setup(32);
        let m = FlrModel::new(HsOperator::zeros(grid.clone()), xm, 0.0, vec![]).unwrap();
        let (_, y) = simulate_flr(&m, 50, &grid, 3).unwrap();
        assert!(y.data().iter().all(|v| *v == 0.0));
        let (x, y) = simulate_flr(&m, 50, &grid, 3).unwrap();
        assert_eq!(estimate_psi(&x, &y, 0, 2).unwrap().hs_norm(), 0.0);
    }

    #[test]
    fn rank_one_action() {
        let (grid, basis, xm) = setup(32);
        let psi = HsOperator::tensor_product(&basis[0], &basis[2]).unwrap();
        let m = FlrModel::new(psi, xm, 0.0, vec![]).unwrap();
        let (x, y) = simulate_flr(&m, 20, &grid, 9).unwrap();
        for i in 0..20 {
            let xi = x.curve(i).inner_product(&basis[0]).unwrap();
            let want = basis[2].scaled(xi);
            assert!(y.curve(i).sub(&want).unwrap().l2_norm() < 1e-12);
        }
    }

    #[test]
    fn closed_form_identities() {
        let (_, basis, xm) = setup(64);
        let psi = HsOperator::tensor_product(&basis[0], &basis[1])
            .unwrap()
            .axpy(0.5, &HsOperator::tensor_product(&basis[1], &basis[3]).unwrap())
            .unwrap();
        let m = FlrModel::new(psi.clone(), xm, 0.2, basis.clone()).unwrap();
        let truth = m.truth().unwrap();
        assert!(truth.unrepresented < 1e-8);
        let rel = (truth.sigma.clone() - &truth.sigma_cross).amax() / truth.sigma.amax();
        assert!(rel < 1e-10, "{rel}");
        let h2 = truth.h2_sum();
        assert!((h2 - truth.psi_hs.powi(2)).abs() <= 1e-8 * h2);
        let trunc = truth.truncated_psi(1, 1).unwrap();
        let diff = psi.sub(&trunc).unwrap();
        let tail = truth.tail_sum(1, 1).sqrt();
        assert!((diff.hs_norm() - tail).abs() <= 1e-8 * tail);
        assert!(diff.operator_norm() <= diff.hs_norm() * (1.0 + 1e-12));
    }

    #[test]
    fn truncation_picks_lexicographic_max() {
        let lambda = (1..=8).map(|j| 1.0 / (j * j) as f64).collect::<Vec<_>>();
        let c = select_truncation(&lambda, &lambda, 1_000_000, 1.4, (8, 8), 1.0).unwrap();
        assert!(c.l >= 1 && c.diagnostics.iter().all(|d| *d <= 1.0));
        assert!(select_truncation(&lambda, &lambda, 2, 1.4, (8, 8), 1e-6).is_err());
        let tied = [1.0, 0.5, 0.5, 0.1];
        assert!(matches!(
            select_truncation(&tied, &lambda, 1000, 1.4, (2, 2), 1.0),
            Err(Error::DegenerateSpectrum(2, 3))
        ));
    }
}
