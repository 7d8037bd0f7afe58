//! Sample covariance operators, their eigenstructure and FPC scores.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::func_core::{basis_matrix, ensure_same_grid, Curve, CurveSample, Grid, HsOperator};

/// Ties closer than this make an eigen-level unusable.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Relative asymmetry accepted by [`eigendecompose`].
pub const SYMMETRY_TOLERANCE: f64 = 1e-10;

/// Eigenvalues (non-increasing) and L²-orthonormal eigenfunctions.
#[derive(Debug, Clone)]
pub struct Eigensystem {
    pub eigenvalues: Vec<f64>,
    pub eigenfunctions: Vec<Curve>,
}

#[derive(Debug, Clone)]
pub struct FpcaResult {
    pub eigenvalues: Vec<f64>,
    pub eigenfunctions: Vec<Curve>,
    /// `N × p`, entry `(i, j)` is `⟨X_i − mean, v̂_j⟩`.
    pub scores: DMatrix<f64>,
    pub mean_removed: bool,
    pub mean: Option<Curve>,
}

/// Eigen-gaps `α_1 = λ_1 − λ_2`, `α_j = min(λ_j − λ_{j+1}, λ_{j−1} − λ_j)`.
///
/// The last entry only has a left neighbour and uses `λ_{j−1} − λ_j`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EigenGaps {
    pub alpha: Vec<f64>,
    pub values: Vec<f64>,
}

/// `ĉ(t, s) = N⁻¹ Σ_n X̃_n(t) X̃_n(s)`, with `X̃ = X − X̄` when `subtract_mean`.
pub fn sample_cov(sample: &CurveSample, subtract_mean: bool) -> Result<HsOperator> {
    let n = sample.len();
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let centered;
    let x = if subtract_mean {
        let mean = sample.data().row_mean();
        let mut c = sample.data().clone();
        for mut row in c.row_iter_mut() {
            row -= &mean;
        }
        centered = c;
        &centered
    } else {
        sample.data()
    };
    let mut kernel = x.tr_mul(x);
    kernel /= n as f64;
    // exact symmetry regardless of the gemm's summation order
    let t = kernel.nrows();
    for i in 0..t {
        for j in i + 1..t {
            let v = 0.5 * (kernel[(i, j)] + kernel[(j, i)]);
            kernel[(i, j)] = v;
            kernel[(j, i)] = v;
        }
    }
    Ok(HsOperator::from_parts_unchecked(sample.grid().clone(), kernel))
}

/// Top-`p` eigenpairs of a symmetric operator.
///
/// Solves the eigenproblem of `D^{1/2} K D^{1/2}` and maps eigenvectors back
/// with `D^{−1/2}`, which makes the eigenfunctions orthonormal in the grid
/// geometry. Round-off negative eigenvalues are clamped to zero.
pub fn eigendecompose(c: &HsOperator, p: usize) -> Result<Eigensystem> {
    let grid = c.grid().clone();
    let t = grid.len();
    if p > t {
        return Err(Error::TooManyComponents {
            requested: p,
            available: t,
        });
    }
    let scale = c.kernel().amax().max(1.0);
    let asym = c.asymmetry();
    if asym > SYMMETRY_TOLERANCE * scale {
        return Err(Error::NotSymmetric(asym));
    }
    let mut m = c.weighted_matrix();
    m = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(m);
    let mut order = (0..t).collect::<Vec<_>>();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let sw = grid.sqrt_weights();
    let mut eigenvalues = Vec::with_capacity(p);
    let mut eigenfunctions = Vec::with_capacity(p);
    for &k in order.iter().take(p) {
        eigenvalues.push(eig.eigenvalues[k].max(0.0));
        let col = eig.eigenvectors.column(k);
        let values = (0..t).map(|i| col[i] / sw[i]).collect::<Vec<_>>();
        let v = Curve::new(grid.clone(), values)?;
        let norm = v.l2_norm();
        eigenfunctions.push(v.scaled(1.0 / norm));
    }
    Ok(Eigensystem {
        eigenvalues,
        eigenfunctions,
    })
}

/// Sample covariance, top-`p` eigenpairs and scores in one pass.
pub fn fpca(sample: &CurveSample, p: usize, subtract_mean: bool) -> Result<FpcaResult> {
    let cov = sample_cov(sample, subtract_mean)?;
    let eig = eigendecompose(&cov, p)?;
    let (scores, mean) = if subtract_mean {
        let mean = sample.mean();
        let mut data = sample.data().clone();
        let m = nalgebra::RowDVector::from_row_slice(mean.values());
        for mut row in data.row_iter_mut() {
            row -= &m;
        }
        let centered = CurveSample::new(sample.grid().clone(), data)?;
        (scores(&centered, &eig.eigenfunctions)?, Some(mean))
    } else {
        (scores(sample, &eig.eigenfunctions)?, None)
    };
    Ok(FpcaResult {
        eigenvalues: eig.eigenvalues,
        eigenfunctions: eig.eigenfunctions,
        scores,
        mean_removed: subtract_mean,
        mean,
    })
}

/// `scores[i][j] = ⟨X_i, v̂_j⟩`.
pub fn scores(sample: &CurveSample, fpcs: &[Curve]) -> Result<DMatrix<f64>> {
    for f in fpcs {
        ensure_same_grid(sample.grid(), f.grid())?;
    }
    let mut b = basis_matrix(fpcs);
    if fpcs.is_empty() {
        return Ok(DMatrix::zeros(sample.len(), 0));
    }
    for (i, w) in sample.grid().weights().iter().enumerate() {
        b.row_mut(i).scale_mut(*w);
    }
    Ok(sample.data() * b)
}

/// Sign multipliers `sign⟨v̂_j, v_j⟩`, with `+1` on an exact zero.
pub fn sign_flips(estimated: &[Curve], reference: &[Curve]) -> Result<Vec<f64>> {
    if estimated.len() != reference.len() {
        return Err(Error::Dimension(format!(
            "{} estimated curves vs {} reference curves",
            estimated.len(),
            reference.len()
        )));
    }
    estimated
        .iter()
        .zip(reference)
        .map(|(e, r)| Ok(if e.inner_product(r)? < 0.0 { -1.0 } else { 1.0 }))
        .collect()
}

/// Flip each `v̂_j` (and score column `j`) so that `⟨v̂_j, v_j⟩ ≥ 0`.
pub fn align_signs(estimated: &FpcaResult, reference: &[Curve]) -> Result<FpcaResult> {
    let flips = sign_flips(&estimated.eigenfunctions, reference)?;
    let mut out = estimated.clone();
    for (j, s) in flips.iter().enumerate() {
        if *s < 0.0 {
            out.eigenfunctions[j] = out.eigenfunctions[j].scaled(-1.0);
            out.scores.column_mut(j).scale_mut(-1.0);
        }
    }
    Ok(out)
}

/// Same as [`align_signs`] for a bare eigensystem.
pub fn align_eigensystem(estimated: &Eigensystem, reference: &[Curve]) -> Result<Eigensystem> {
    let flips = sign_flips(&estimated.eigenfunctions, reference)?;
    Ok(Eigensystem {
        eigenvalues: estimated.eigenvalues.clone(),
        eigenfunctions: estimated
            .eigenfunctions
            .iter()
            .zip(&flips)
            .map(|(v, s)| v.scaled(*s))
            .collect(),
    })
}

/// `X̂_i = Σ_{j<J} scores[i][j] v̂_j`.
pub fn reconstruct(scores: &DMatrix<f64>, fpcs: &[Curve], j: usize) -> Result<CurveSample> {
    if j > fpcs.len() || j > scores.ncols() {
        return Err(Error::TooManyComponents {
            requested: j,
            available: fpcs.len().min(scores.ncols()),
        });
    }
    let grid: Arc<Grid> = fpcs
        .first()
        .map(|f| f.grid().clone())
        .ok_or_else(|| Error::Dimension("no eigenfunctions supplied".into()))?;
    for f in fpcs {
        ensure_same_grid(&grid, f.grid())?;
    }
    let b = basis_matrix(&fpcs[..j]);
    let data = if j == 0 {
        DMatrix::zeros(scores.nrows(), grid.len())
    } else {
        scores.columns(0, j) * b.transpose()
    };
    CurveSample::new(grid, data)
}

/// Gap quantities for a non-increasing list of at least two eigenvalues.
pub fn eigen_gaps(eigenvalues: &[f64]) -> Result<EigenGaps> {
    let n = eigenvalues.len();
    if n < 2 {
        return Err(Error::Domain(format!("need at least 2 eigenvalues, got {n}")));
    }
    let diffs = eigenvalues.windows(2).map(|w| w[0] - w[1]).collect::<Vec<_>>();
    for (j, d) in diffs.iter().enumerate() {
        if d.abs() <= TIE_TOLERANCE {
            return Err(Error::DegenerateSpectrum(j + 1, j + 2));
        }
        if *d < 0.0 {
            return Err(Error::Domain(format!(
                "eigenvalues must be non-increasing (position {})",
                j + 2
            )));
        }
    }
    let alpha = (0..n)
        .map(|j| match j {
            0 => diffs[0],
            j if j == n - 1 => diffs[j - 1],
            j => diffs[j].min(diffs[j - 1]),
        })
        .collect();
    Ok(EigenGaps {
        alpha,
        values: eigenvalues.to_vec(),
    })
}
