//! Discretized L² functions on [0, 1] and Hilbert–Schmidt integral operators.
//!
//! A [`Grid`] carries abscissae and quadrature weights; every inner product,
//! norm and operator application below is the corresponding quadrature sum.
//! Operators are stored by kernel values `kernel[(t, s)] ≈ ψ(t_t, t_s)` and act
//! by `Ψ(x)(t) = Σ_s w_s ψ(t, s) x(s)`.
//!
//! Geometry in the weighted space is mapped to Euclidean geometry through the
//! matrix `D^{1/2} K D^{1/2}` (`D` the diagonal of weights); singular values and
//! eigenvalues of that matrix are exactly those of the discretized operator.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Abscissae and positive quadrature weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl Grid {
    /// Uniform grid of `t` points on [0, 1] with composite trapezoid weights.
    pub fn uniform(t: usize) -> Result<Arc<Grid>> {
        if t < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2 points, got {t}")));
        }
        let h = 1.0 / (t - 1) as f64;
        let points = (0..t).map(|i| i as f64 * h).collect::<Vec<_>>();
        let mut weights = vec![h; t];
        weights[0] = h / 2.0;
        weights[t - 1] = h / 2.0;
        Self::with_weights(points, weights)
    }

    /// Trapezoid weights for arbitrary strictly increasing points in [0, 1].
    pub fn trapezoid(points: Vec<f64>) -> Result<Arc<Grid>> {
        if points.len() < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2 points, got {}",
                points.len()
            )));
        }
        let t = points.len();
        let mut weights = vec![0.0; t];
        for i in 0..t - 1 {
            let h = points[i + 1] - points[i];
            weights[i] += h / 2.0;
            weights[i + 1] += h / 2.0;
        }
        Self::with_weights(points, weights)
    }

    /// User-supplied points and weights.
    pub fn with_weights(points: Vec<f64>, weights: Vec<f64>) -> Result<Arc<Grid>> {
        if points.len() < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2 points, got {}",
                points.len()
            )));
        }
        if points.len() != weights.len() {
            return Err(Error::InvalidGrid(format!(
                "{} points but {} weights",
                points.len(),
                weights.len()
            )));
        }
        if points.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
            return Err(Error::InvalidGrid("points must lie in [0, 1]".into()));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid("points must be strictly increasing".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
            return Err(Error::InvalidGrid("weights must be positive".into()));
        }
        Ok(Arc::new(Grid { points, weights }))
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn sqrt_weights(&self) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.weights.iter().map(|w| w.sqrt()))
    }
}

pub(crate) fn ensure_same_grid(a: &Arc<Grid>, b: &Arc<Grid>) -> Result<()> {
    if Arc::ptr_eq(a, b) || **a == **b {
        Ok(())
    } else {
        Err(Error::GridMismatch(format!(
            "grid of {} points vs grid of {} points",
            a.len(),
            b.len()
        )))
    }
}

/// Function values on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl Curve {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Curve> {
        if values.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "curve has {} values on a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("curve values must be finite".into()));
        }
        Ok(Curve { grid, values })
    }

    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(f64) -> f64) -> Result<Curve> {
        let values = grid.points().iter().map(|&t| f(t)).collect();
        Curve::new(grid, values)
    }

    pub fn zeros(grid: Arc<Grid>) -> Curve {
        let values = vec![0.0; grid.len()];
        Curve { grid, values }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// `Σ_t w_t f(t) g(t)`.
    pub fn inner_product(&self, other: &Curve) -> Result<f64> {
        ensure_same_grid(&self.grid, &other.grid)?;
        Ok(weighted_dot(self.grid.weights(), &self.values, &other.values))
    }

    pub fn l2_norm(&self) -> f64 {
        weighted_dot(self.grid.weights(), &self.values, &self.values).sqrt()
    }

    pub fn scaled(&self, c: f64) -> Curve {
        Curve {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }

    /// `self + c·other`.
    pub fn axpy(&self, c: f64, other: &Curve) -> Result<Curve> {
        ensure_same_grid(&self.grid, &other.grid)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + c * b).collect();
        Ok(Curve {
            grid: self.grid.clone(),
            values,
        })
    }

    pub fn sub(&self, other: &Curve) -> Result<Curve> {
        self.axpy(-1.0, other)
    }
}

pub(crate) fn weighted_dot(w: &[f64], f: &[f64], g: &[f64]) -> f64 {
    w.iter().zip(f).zip(g).map(|((w, f), g)| w * (f * g)).sum()
}

/// A panel of `N` curves on a shared grid, stored row-wise (`N × T`).
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSample {
    grid: Arc<Grid>,
    data: DMatrix<f64>,
}

impl CurveSample {
    pub fn new(grid: Arc<Grid>, data: DMatrix<f64>) -> Result<CurveSample> {
        if data.nrows() == 0 {
            return Err(Error::EmptySample);
        }
        if data.ncols() != grid.len() {
            return Err(Error::Dimension(format!(
                "sample has {} columns on a grid of {} points",
                data.ncols(),
                grid.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("sample values must be finite".into()));
        }
        Ok(CurveSample { grid, data })
    }

    pub fn from_curves(curves: &[Curve]) -> Result<CurveSample> {
        let first = curves.first().ok_or(Error::EmptySample)?;
        let grid = first.grid.clone();
        for c in curves {
            ensure_same_grid(&grid, &c.grid)?;
        }
        let t = grid.len();
        let data = DMatrix::from_fn(curves.len(), t, |i, j| curves[i].values[j]);
        Ok(CurveSample { grid, data })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    /// Number of curves.
    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn curve(&self, i: usize) -> Curve {
        Curve {
            grid: self.grid.clone(),
            values: self.data.row(i).iter().copied().collect(),
        }
    }

    pub fn curves(&self) -> impl Iterator<Item = Curve> + '_ {
        (0..self.len()).map(move |i| self.curve(i))
    }

    pub fn mean(&self) -> Curve {
        let n = self.len() as f64;
        let values = self.data.row_mean().iter().copied().collect::<Vec<_>>();
        debug_assert!(n > 0.0);
        Curve {
            grid: self.grid.clone(),
            values,
        }
    }

    pub fn l2_norms(&self) -> Vec<f64> {
        let w = self.grid.weights();
        self.data
            .row_iter()
            .map(|r| r.iter().zip(w).map(|(x, w)| w * x * x).sum::<f64>().sqrt())
            .collect()
    }
}

/// Integral operator with kernel on `Grid × Grid`.
#[derive(Debug, Clone, PartialEq)]
pub struct HsOperator {
    grid: Arc<Grid>,
    kernel: DMatrix<f64>,
}

impl HsOperator {
    pub fn new(grid: Arc<Grid>, kernel: DMatrix<f64>) -> Result<HsOperator> {
        let t = grid.len();
        if kernel.nrows() != t || kernel.ncols() != t {
            return Err(Error::Dimension(format!(
                "kernel is {}x{} on a grid of {t} points",
                kernel.nrows(),
                kernel.ncols()
            )));
        }
        if kernel.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("kernel entries must be finite".into()));
        }
        Ok(HsOperator { grid, kernel })
    }

    pub fn zeros(grid: Arc<Grid>) -> HsOperator {
        let t = grid.len();
        HsOperator {
            grid,
            kernel: DMatrix::zeros(t, t),
        }
    }

    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(f64, f64) -> f64) -> Result<HsOperator> {
        let p = grid.points();
        let kernel = DMatrix::from_fn(grid.len(), grid.len(), |i, j| f(p[i], p[j]));
        HsOperator::new(grid, kernel)
    }

    /// `y ⊗ z`, the operator `x ↦ ⟨y, x⟩ z`; its kernel is `z(t) y(s)`.
    pub fn tensor_product(y: &Curve, z: &Curve) -> Result<HsOperator> {
        ensure_same_grid(&y.grid, &z.grid)?;
        let t = y.grid.len();
        let kernel = DMatrix::from_fn(t, t, |i, j| z.values[i] * y.values[j]);
        Ok(HsOperator {
            grid: y.grid.clone(),
            kernel,
        })
    }

    pub(crate) fn from_parts_unchecked(grid: Arc<Grid>, kernel: DMatrix<f64>) -> HsOperator {
        debug_assert_eq!(kernel.nrows(), grid.len());
        HsOperator { grid, kernel }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn kernel(&self) -> &DMatrix<f64> {
        &self.kernel
    }

    /// `Σ_{t,s} w_t w_s A(t,s) B(t,s)`.
    pub fn hs_inner(&self, other: &HsOperator) -> Result<f64> {
        ensure_same_grid(&self.grid, &other.grid)?;
        let w = self.grid.weights();
        let t = w.len();
        let mut total = 0.0;
        for s in 0..t {
            let a = self.kernel.column(s);
            let b = other.kernel.column(s);
            let col: f64 = (0..t).map(|i| w[i] * a[i] * b[i]).sum();
            total += w[s] * col;
        }
        Ok(total)
    }

    pub fn hs_norm(&self) -> f64 {
        self.hs_inner(self).expect("same grid").max(0.0).sqrt()
    }

    /// `D^{1/2} K D^{1/2}`.
    pub fn weighted_matrix(&self) -> DMatrix<f64> {
        let sw = self.grid.sqrt_weights();
        let t = sw.len();
        DMatrix::from_fn(t, t, |i, j| sw[i] * self.kernel[(i, j)] * sw[j])
    }

    /// HS norm as the root sum of squared singular values of the weighted kernel.
    pub fn hs_norm_from_singular_values(&self) -> f64 {
        let sv = self.weighted_matrix().singular_values();
        sv.iter().map(|s| s * s).sum::<f64>().sqrt()
    }

    /// `Ψ(x)(t) = Σ_s w_s ψ(t, s) x(s)`.
    pub fn apply(&self, x: &Curve) -> Result<Curve> {
        ensure_same_grid(&self.grid, &x.grid)?;
        let wx = DVector::from_iterator(
            x.values.len(),
            x.values.iter().zip(self.grid.weights()).map(|(v, w)| v * w),
        );
        let out = &self.kernel * wx;
        Ok(Curve {
            grid: self.grid.clone(),
            values: out.iter().copied().collect(),
        })
    }

    /// Largest singular value of the weighted kernel, i.e. `sup_{‖x‖=1} ‖Ψ(x)‖`.
    pub fn operator_norm(&self) -> f64 {
        self.weighted_matrix()
            .singular_values()
            .iter()
            .copied()
            .fold(0.0, f64::max)
    }

    /// Kernel of the adjoint, `ψ*(t, s) = ψ(s, t)`.
    pub fn adjoint(&self) -> HsOperator {
        HsOperator {
            grid: self.grid.clone(),
            kernel: self.kernel.transpose(),
        }
    }

    /// Kernel of `self ∘ other`.
    pub fn compose(&self, other: &HsOperator) -> Result<HsOperator> {
        ensure_same_grid(&self.grid, &other.grid)?;
        let mut right = other.kernel.clone();
        for (i, w) in self.grid.weights().iter().enumerate() {
            right.row_mut(i).scale_mut(*w);
        }
        Ok(HsOperator {
            grid: self.grid.clone(),
            kernel: &self.kernel * right,
        })
    }

    pub fn scaled(&self, c: f64) -> HsOperator {
        HsOperator {
            grid: self.grid.clone(),
            kernel: &self.kernel * c,
        }
    }

    /// `self + c·other`.
    pub fn axpy(&self, c: f64, other: &HsOperator) -> Result<HsOperator> {
        ensure_same_grid(&self.grid, &other.grid)?;
        Ok(HsOperator {
            grid: self.grid.clone(),
            kernel: &self.kernel + &other.kernel * c,
        })
    }

    pub fn sub(&self, other: &HsOperator) -> Result<HsOperator> {
        self.axpy(-1.0, other)
    }

    /// Largest absolute entry of `K − Kᵀ`.
    pub fn asymmetry(&self) -> f64 {
        let t = self.kernel.nrows();
        let mut worst: f64 = 0.0;
        for i in 0..t {
            for j in i + 1..t {
                worst = worst.max((self.kernel[(i, j)] - self.kernel[(j, i)]).abs());
            }
        }
        worst
    }
}

/// Weighted Gram–Schmidt; returns curves orthonormal in the grid geometry.
pub fn orthonormalize(curves: &[Curve]) -> Result<Vec<Curve>> {
    let mut out: Vec<Curve> = Vec::with_capacity(curves.len());
    for c in curves {
        let mut v = c.clone();
        // two passes keep orthogonality at machine precision
        for _ in 0..2 {
            for q in &out {
                let proj = v.inner_product(q)?;
                v = v.axpy(-proj, q)?;
            }
        }
        let norm = v.l2_norm();
        if norm <= 1e-12 * c.l2_norm().max(1e-300) {
            return Err(Error::Domain("curves are linearly dependent".into()));
        }
        out.push(v.scaled(1.0 / norm));
    }
    Ok(out)
}

/// Orthonormal trigonometric system `√2 sin(2πkt), √2 cos(2πkt)`, `k = 1, 2, …`,
/// re-orthonormalized in the grid geometry.
pub fn fourier_basis(grid: &Arc<Grid>, count: usize) -> Result<Vec<Curve>> {
    use std::f64::consts::PI;
    let raw = (0..count)
        .map(|j| {
            let k = (j / 2 + 1) as f64;
            if j % 2 == 0 {
                Curve::from_fn(grid.clone(), |t| 2f64.sqrt() * (2.0 * PI * k * t).sin())
            } else {
                Curve::from_fn(grid.clone(), |t| 2f64.sqrt() * (2.0 * PI * k * t).cos())
            }
        })
        .collect::<Result<Vec<_>>>()?;
    orthonormalize(&raw)
}

/// Shifted Legendre-type polynomial system (`1, t, t², …` orthonormalized).
pub fn polynomial_basis(grid: &Arc<Grid>, count: usize) -> Result<Vec<Curve>> {
    let raw = (0..count)
        .map(|j| Curve::from_fn(grid.clone(), |t| (2.0 * t - 1.0).powi(j as i32)))
        .collect::<Result<Vec<_>>>()?;
    orthonormalize(&raw)
}

/// `T × J` matrix whose columns are the curves' values.
pub(crate) fn basis_matrix(basis: &[Curve]) -> DMatrix<f64> {
    let t = basis.first().map(|c| c.values.len()).unwrap_or(0);
    DMatrix::from_fn(t, basis.len(), |i, j| basis[j].values[i])
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn g(t: usize) -> Arc<Grid> {
        Grid::uniform(t).unwrap()
    }

    #[test]
    fn uniform_weights_sum_to_one() {
        for t in [2, 3, 17, 256, 512] {
            let s: f64 = g(t).weights().iter().sum();
            assert!((s - 1.0).abs() <= 1e-12);
        }
        assert!(Grid::uniform(1).is_err());
    }

    #[test]
    fn grid_rejects_bad_input() {
        assert!(Grid::with_weights(vec![0.0, 0.5, 0.4], vec![0.3, 0.3, 0.3]).is_err());
        assert!(Grid::with_weights(vec![0.0, 1.5], vec![0.5, 0.5]).is_err());
        assert!(Grid::with_weights(vec![0.0, 1.0], vec![0.5, 0.0]).is_err());
        let tz = Grid::trapezoid(vec![0.0, 0.1, 0.5, 1.0]).unwrap();
        assert!((tz.weights().iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn inner_product_examples() {
        let grid = g(64);
        let one = Curve::from_fn(grid.clone(), |_| 1.0).unwrap();
        assert!((one.inner_product(&one).unwrap() - 1.0).abs() <= 1e-12);

        let grid = g(512);
        let s = Curve::from_fn(grid.clone(), |t| 2f64.sqrt() * (2.0 * PI * t).sin()).unwrap();
        let c = Curve::from_fn(grid.clone(), |t| 2f64.sqrt() * (2.0 * PI * t).cos()).unwrap();
        assert!(s.inner_product(&c).unwrap().abs() <= 1e-6);
        let id = Curve::from_fn(grid.clone(), |t| t).unwrap();
        assert!((id.inner_product(&id).unwrap() - 1.0 / 3.0).abs() <= 1e-4);
    }

    #[test]
    fn inner_product_grid_mismatch() {
        let a = Curve::zeros(g(10));
        let b = Curve::zeros(g(11));
        assert!(matches!(a.inner_product(&b), Err(Error::GridMismatch(_))));
        assert!(HsOperator::tensor_product(&a, &b).is_err());
    }

    #[test]
    fn norm_examples() {
        let grid = g(512);
        assert_eq!(Curve::zeros(grid.clone()).l2_norm(), 0.0);
        let two = Curve::from_fn(grid.clone(), |_| 2.0).unwrap();
        assert!((two.l2_norm() - 2.0).abs() <= 1e-12);
        let s = Curve::from_fn(grid, |t| 2f64.sqrt() * (2.0 * PI * t).sin()).unwrap();
        assert!((s.l2_norm() - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn tensor_product_examples() {
        let grid = g(128);
        let basis = fourier_basis(&grid, 3).unwrap();
        let zero = Curve::zeros(grid.clone());
        let op = HsOperator::tensor_product(&zero, &basis[1]).unwrap();
        assert!(op.kernel().iter().all(|v| *v == 0.0));

        let y = &basis[0];
        let z = basis[2].scaled(3.5);
        let op = HsOperator::tensor_product(y, &z).unwrap();
        let out = op.apply(y).unwrap();
        for (a, b) in out.values().iter().zip(z.values()) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn kernel_ts_applied_to_one() {
        let grid = g(512);
        let op = HsOperator::from_fn(grid.clone(), |t, s| t * s).unwrap();
        let one = Curve::from_fn(grid, |_| 1.0).unwrap();
        let out = op.apply(&one).unwrap();
        for (v, t) in out.values().iter().zip(out.grid().points()) {
            assert!((v - t / 2.0).abs() <= 1e-4);
        }
    }

    #[test]
    fn hs_inner_examples() {
        let grid = g(64);
        let basis = fourier_basis(&grid, 3).unwrap();
        let a = HsOperator::tensor_product(&basis[0], &basis[1]).unwrap();
        assert_eq!(a.hs_inner(&HsOperator::zeros(grid.clone())).unwrap(), 0.0);
        let vv = HsOperator::tensor_product(&basis[2], &basis[2]).unwrap();
        assert!((vv.hs_inner(&vv).unwrap() - 1.0).abs() <= 1e-10);

        // X = Σ ξ_j v_j; ⟨X⊗X, v_i⊗v_j⟩ = ξ_i ξ_j
        let xi = [1.3, -0.7, 2.1];
        let mut x = Curve::zeros(grid.clone());
        for (c, v) in xi.iter().zip(&basis) {
            x = x.axpy(*c, v).unwrap();
        }
        let xx = HsOperator::tensor_product(&x, &x).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let vij = HsOperator::tensor_product(&basis[i], &basis[j]).unwrap();
                assert!((xx.hs_inner(&vij).unwrap() - xi[i] * xi[j]).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn operator_norm_examples() {
        let grid = g(64);
        let basis = fourier_basis(&grid, 2).unwrap();
        assert_eq!(HsOperator::zeros(grid.clone()).operator_norm(), 0.0);
        let p1 = HsOperator::tensor_product(&basis[0], &basis[0]).unwrap();
        assert!((p1.operator_norm() - 1.0).abs() <= 1e-8);
        let p2 = HsOperator::tensor_product(&basis[1], &basis[1]).unwrap();
        let a = p1.scaled(2.0).axpy(1.0, &p2).unwrap();
        assert!((a.operator_norm() - 2.0).abs() <= 1e-8);
        assert!(a.operator_norm() <= a.hs_norm());
        assert!((a.hs_norm() - 5f64.sqrt()).abs() <= 1e-10);
    }

    #[test]
    fn compose_matches_sequential_application() {
        let grid = g(40);
        let a = HsOperator::from_fn(grid.clone(), |t, s| (t - s).cos()).unwrap();
        let b = HsOperator::from_fn(grid.clone(), |t, s| t * s + 1.0).unwrap();
        let x = Curve::from_fn(grid, |t| t * t - 0.3).unwrap();
        let direct = a.apply(&b.apply(&x).unwrap()).unwrap();
        let composed = a.compose(&b).unwrap().apply(&x).unwrap();
        for (u, v) in direct.values().iter().zip(composed.values()) {
            assert!((u - v).abs() <= 1e-12 * (1.0 + u.abs()));
        }
    }

    #[test]
    fn bases_are_orthonormal() {
        let grid = g(100);
        for basis in [fourier_basis(&grid, 8).unwrap(), polynomial_basis(&grid, 6).unwrap()] {
            for i in 0..basis.len() {
                for j in 0..basis.len() {
                    let ip = basis[i].inner_product(&basis[j]).unwrap();
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((ip - want).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn sample_rejects_bad_shapes() {
        let grid = g(5);
        assert!(matches!(
            CurveSample::new(grid.clone(), DMatrix::zeros(0, 5)),
            Err(Error::EmptySample)
        ));
        assert!(CurveSample::new(grid.clone(), DMatrix::zeros(2, 4)).is_err());
        assert!(Curve::new(grid, vec![0.0, 1.0, f64::NAN, 0.0, 0.0]).is_err());
    }
}
