use std::sync::Arc;

use nalgebra::DMatrix;
use proptest::prelude::*;

use heavyfpca::flr::{assemble_psi, select_truncation};
use heavyfpca::fpca::{align_signs, fpca, sample_cov, sign_flips};
use heavyfpca::func_core::{fourier_basis, orthonormalize};
use heavyfpca::tail_diag::{hill_estimator, q_nm_statistic};
use heavyfpca::{Curve, CurveSample, Grid, HsOperator};

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn grid(t: usize) -> Arc<Grid> {
    Grid::uniform(t).unwrap()
}

fn curve_strategy(t: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, t)
}

fn nonzero(v: &[f64]) -> bool {
    v.iter().any(|x| x.abs() > 1e-3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn inner_product_is_symmetric_bilinear(
        f in curve_strategy(24), g in curve_strategy(24), h in curve_strategy(24), a in -5.0f64..5.0
    ) {
        let gr = grid(24);
        let (f, g, h) = (
            Curve::new(gr.clone(), f).unwrap(),
            Curve::new(gr.clone(), g).unwrap(),
            Curve::new(gr, h).unwrap(),
        );
        let lhs = f.axpy(a, &g).unwrap().inner_product(&h).unwrap();
        let rhs = f.inner_product(&h).unwrap() + a * g.inner_product(&h).unwrap();
        let scale = f.l2_norm() * h.l2_norm() + a.abs() * g.l2_norm() * h.l2_norm();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * scale.max(1.0));
        prop_assert_eq!(f.inner_product(&g).unwrap(), g.inner_product(&f).unwrap());
        let n = f.l2_norm();
        prop_assert!(rel(n * n, f.inner_product(&f).unwrap()) <= 1e-12 || n < 1e-150);
    }

    #[test]
    fn tensor_norm_is_product_of_norms(y in curve_strategy(32), z in curve_strategy(32)) {
        prop_assume!(nonzero(&y) && nonzero(&z));
        let gr = grid(32);
        let y = Curve::new(gr.clone(), y).unwrap();
        let z = Curve::new(gr, z).unwrap();
        let yz = HsOperator::tensor_product(&y, &z).unwrap();
        prop_assert!(rel(yz.hs_norm(), y.l2_norm() * z.l2_norm()) <= 1e-10);
        prop_assert!(rel(yz.hs_norm_from_singular_values(), yz.hs_norm()) <= 1e-10);
        prop_assert!(rel(yz.operator_norm(), yz.hs_norm()) <= 1e-10);
        let yy = HsOperator::tensor_product(&y, &y).unwrap();
        prop_assert!(rel(yy.hs_norm(), y.l2_norm().powi(2)) <= 1e-10);
    }

    #[test]
    fn tensor_action(y in curve_strategy(20), z in curve_strategy(20), x in curve_strategy(20)) {
        let gr = grid(20);
        let y = Curve::new(gr.clone(), y).unwrap();
        let z = Curve::new(gr.clone(), z).unwrap();
        let x = Curve::new(gr, x).unwrap();
        let got = HsOperator::tensor_product(&y, &z).unwrap().apply(&x).unwrap();
        let want = z.scaled(y.inner_product(&x).unwrap());
        let scale = y.l2_norm() * z.l2_norm() * x.l2_norm();
        prop_assert!(got.sub(&want).unwrap().l2_norm() <= 1e-12 * scale.max(1.0));
    }

    #[test]
    fn operator_norm_bounded_by_hs_norm(k in prop::collection::vec(-3.0f64..3.0, 144)) {
        let gr = grid(12);
        let a = HsOperator::new(gr, DMatrix::from_vec(12, 12, k)).unwrap();
        prop_assert!(a.operator_norm() <= a.hs_norm() * (1.0 + 1e-12));
        let adj = a.adjoint();
        prop_assert!(rel(adj.hs_norm(), a.hs_norm()) <= 1e-12 || a.hs_norm() == 0.0);
    }

    #[test]
    fn trace_and_hs_identities(n in 2usize..12, seed in prop::collection::vec(-5.0f64..5.0, 12 * 16)) {
        let t = 16;
        let gr = grid(t);
        let data = DMatrix::from_row_slice(n, t, &seed[..n * t]);
        let sample = CurveSample::new(gr, data).unwrap();
        let res = fpca(&sample, t, false).unwrap();
        let trace: f64 = res.eigenvalues.iter().sum();
        let mean_sq = sample.l2_norms().iter().map(|x| x * x).sum::<f64>() / n as f64;
        prop_assert!((trace - mean_sq).abs() <= 1e-8 * mean_sq.max(1.0));
        let c = sample_cov(&sample, false).unwrap();
        prop_assert_eq!(c.asymmetry(), 0.0);
        let sq: f64 = res.eigenvalues.iter().map(|l| l * l).sum();
        prop_assert!(rel(c.hs_norm().powi(2), sq) <= 1e-9);
        for (i, a) in res.eigenfunctions.iter().enumerate().take(n) {
            for (j, b) in res.eigenfunctions.iter().enumerate().take(n) {
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((a.inner_product(b).unwrap() - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn sign_alignment_is_idempotent(n in 3usize..10, seed in prop::collection::vec(-5.0f64..5.0, 10 * 12)) {
        let t = 12;
        let gr = grid(t);
        let sample = CurveSample::new(gr.clone(), DMatrix::from_row_slice(n, t, &seed[..n * t])).unwrap();
        let res = fpca(&sample, 3, true).unwrap();
        let reference = fourier_basis(&gr, 3).unwrap();
        let once = align_signs(&res, &reference).unwrap();
        let twice = align_signs(&once, &reference).unwrap();
        prop_assert_eq!(&once.eigenvalues, &twice.eigenvalues);
        for (a, b) in once.eigenfunctions.iter().zip(&twice.eigenfunctions) {
            prop_assert_eq!(a.values(), b.values());
        }
        prop_assert!(sign_flips(&twice.eigenfunctions, &reference).unwrap().iter().all(|s| *s == 1.0));
        for (j, f) in once.eigenfunctions.iter().enumerate() {
            prop_assert!(f.inner_product(&reference[j]).unwrap() >= 0.0);
        }
    }

    #[test]
    fn hill_is_scale_invariant(data in prop::collection::vec(0.01f64..100.0, 30..200), c in 1e-3f64..1e3, k in 1usize..20) {
        prop_assume!(k < data.len());
        let scaled = data.iter().map(|x| c * x).collect::<Vec<_>>();
        match (hill_estimator(&data, k), hill_estimator(&scaled, k)) {
            (Ok(a), Ok(b)) => prop_assert!(rel(a, b) <= 1e-12, "{} vs {}", a, b),
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "{:?} vs {:?}", a, b),
        }
    }

    #[test]
    fn q_nm_is_monotone(rows in 50usize..120, seed in prop::collection::vec(-3.0f64..3.0, 120 * 4)) {
        let scores = DMatrix::from_row_slice(rows, 4, &seed[..rows * 4]);
        for m in 1..=4 {
            let mut prev = f64::INFINITY;
            for n in 1..=4 {
                let q = q_nm_statistic(&scores, n, m, 0.05).unwrap();
                prop_assert!(q <= prev);
                prop_assert!(q == q_nm_statistic(&scores, m, n, 0.05).unwrap());
                prev = q;
            }
        }
        prop_assert_eq!(q_nm_statistic(&scores, 1, 1, 0.05).unwrap(), 1.0);
    }

    #[test]
    fn psi_hat_ignores_component_signs(
        sigma in prop::collection::vec(-2.0f64..2.0, 6),
        flips in prop::collection::vec(any::<bool>(), 5),
    ) {
        let gr = grid(24);
        let v = fourier_basis(&gr, 3).unwrap();
        let raw = (0..2).map(|j| Curve::from_fn(gr.clone(), |t| t.powi(j + 1) - 0.3).unwrap()).collect::<Vec<_>>();
        let u = orthonormalize(&raw).unwrap();
        let lambda = [1.0, 0.4, 0.1];
        let s = DMatrix::from_row_slice(3, 2, &sigma);
        let base = assemble_psi(&lambda, &v, &u, &s).unwrap();
        let mut v2 = v.clone();
        let mut u2 = u.clone();
        let mut s2 = s.clone();
        for (l, f) in flips[..3].iter().enumerate() {
            if *f {
                v2[l] = v2[l].scaled(-1.0);
                s2.row_mut(l).neg_mut();
            }
        }
        for (k, f) in flips[3..].iter().enumerate() {
            if *f {
                u2[k] = u2[k].scaled(-1.0);
                s2.column_mut(k).neg_mut();
            }
        }
        let flipped = assemble_psi(&lambda, &v2, &u2, &s2).unwrap();
        prop_assert_eq!(base.kernel(), flipped.kernel());
    }

    #[test]
    fn truncation_non_decreasing_in_n(decay in 1.2f64..3.0, logn in 3.0f64..7.0, gamma in 1.1f64..1.45) {
        let lambda = (1..=10).map(|j| (j as f64).powf(-decay)).collect::<Vec<_>>();
        let gam = (1..=10).map(|j| 2.0 * (j as f64).powf(-decay - 0.5)).collect::<Vec<_>>();
        let n = 10f64.powf(logn) as usize;
        let small = select_truncation(&lambda, &gam, n, gamma, (10, 10), 1.0);
        let large = select_truncation(&lambda, &gam, n * 10, gamma, (10, 10), 1.0);
        if let Ok(s) = small {
            let l = large.unwrap();
            prop_assert!(l.l >= s.l);
            if l.l == s.l {
                prop_assert!(l.k >= s.k);
            }
        }
    }
}
