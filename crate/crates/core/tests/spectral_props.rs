//! Invariants of the spectral transform and the fractional elliptic operator.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use pdy_core::grid::{from_spectral, to_spectral, BoundaryCondition, Field, GridSpec, SpectralBasis};
use pdy_core::spde::{apply_fractional_op, pde_residual_sq, EllipticOpParams};
use pdy_core::Error;
use proptest::prelude::*;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn grid_strategy() -> impl Strategy<Value = GridSpec> {
    (
        prop::collection::vec(2usize..9, 1..=2),
        0.5f64..3.0,
        prop::sample::select(BoundaryCondition::ALL.to_vec()),
    )
        .prop_map(|(dims, len, bc)| {
            let extent = dims.iter().map(|_| len).collect();
            GridSpec::new(dims, extent, bc).unwrap()
        })
}

fn field_pair() -> impl Strategy<Value = (Field, Vec<f64>, Vec<f64>)> {
    grid_strategy().prop_flat_map(|spec| {
        let n = spec.len();
        (
            Just(spec),
            1usize..3,
            prop::collection::vec(-3.0f64..3.0, 2 * n),
            prop::collection::vec(-3.0f64..3.0, 2 * n),
        )
            .prop_map(|(spec, ch, a, b)| {
                let n = spec.len() * ch;
                let f = Field::new(spec, ch, a[..n].to_vec()).unwrap();
                (f, a[..n].to_vec(), b[..n].to_vec())
            })
    })
}

fn op(bc: BoundaryCondition, l: f64, alpha: f64) -> EllipticOpParams {
    EllipticOpParams { l, alpha, bc }
}

#[test]
fn sampled_eigenfunctions_are_scaled_by_the_symbol() {
    let (n, len, l, alpha) = (12usize, 2.0, 0.3, 1.5);
    let cases: [(BoundaryCondition, Box<dyn Fn(usize, usize) -> f64>, Box<dyn Fn(usize) -> f64>); 3] = [
        (
            BoundaryCondition::Periodic,
            Box::new(move |k, j| (2.0 * PI * (k * j) as f64 / n as f64).cos()),
            Box::new(move |k| (2.0 * PI * k as f64 / len).powi(2)),
        ),
        (
            BoundaryCondition::Dirichlet,
            Box::new(move |k, j| (PI * (k * (j + 1)) as f64 / (n + 1) as f64).sin()),
            Box::new(move |k| (PI * k as f64 / len).powi(2)),
        ),
        (
            BoundaryCondition::Neumann,
            Box::new(move |k, j| (PI * k as f64 * (j as f64 + 0.5) / n as f64).cos()),
            Box::new(move |k| (PI * k as f64 / len).powi(2)),
        ),
    ];
    for (bc, shape, mu) in &cases {
        let spec = GridSpec::line(n, len, *bc).unwrap();
        for k in 1..5 {
            let values: Vec<f64> = (0..n).map(|j| shape(k, j)).collect();
            let f = Field::new(spec.clone(), 1, values.clone()).unwrap();
            let out = apply_fractional_op(&f, &op(*bc, l, alpha)).unwrap();
            let s = (1.0 + l * l * mu(k)).powf(alpha / 2.0);
            for (o, v) in out.values.iter().zip(&values) {
                assert!((o - s * v).abs() < 1e-11, "{bc} k={k}: {o} vs {}", s * v);
            }
        }
    }
}

#[test]
fn boundary_mismatch_is_rejected() {
    let spec = GridSpec::line(8, 1.0, BoundaryCondition::Periodic).unwrap();
    let f = Field::new(spec, 1, vec![1.0; 8]).unwrap();
    let err = apply_fractional_op(&f, &op(BoundaryCondition::Dirichlet, 0.1, 2.0)).unwrap_err();
    assert!(matches!(err, Error::BoundaryMismatch { .. }));
}

#[test]
fn zero_order_operator_is_identity() {
    let spec = GridSpec::square(6, 1.0, BoundaryCondition::Neumann).unwrap();
    let values: Vec<f64> = (0..36).map(|k| (k as f64 * 0.37).sin()).collect();
    let f = Field::new(spec, 1, values.clone()).unwrap();
    let out = apply_fractional_op(&f, &op(BoundaryCondition::Neumann, 0.4, 0.0)).unwrap();
    for (o, v) in out.values.iter().zip(&values) {
        assert!((o - v).abs() < 1e-12);
    }
}

/// Sorted eigenvalues of the dense second-order finite-difference `−Δ`.
fn fd_eigenvalues(spec: &GridSpec) -> Vec<f64> {
    let n = spec.dims[0];
    let h = spec.spacing(0);
    let mut a = DMatrix::from_fn(n, n, |i, j| match i.abs_diff(j) {
        0 => 2.0,
        1 => -1.0,
        _ => 0.0,
    });
    match spec.bc {
        BoundaryCondition::Periodic => {
            a[(0, n - 1)] = -1.0;
            a[(n - 1, 0)] = -1.0;
        }
        BoundaryCondition::Neumann => {
            a[(0, 0)] = 1.0;
            a[(n - 1, n - 1)] = 1.0;
        }
        BoundaryCondition::Dirichlet => {}
    }
    let mut ev: Vec<f64> = a.symmetric_eigenvalues().iter().map(|v| v / (h * h)).collect();
    ev.sort_by(f64::total_cmp);
    ev
}

#[test]
fn low_eigenvalues_agree_with_finite_differences() {
    let n = 64;
    for bc in BoundaryCondition::ALL {
        let spec = GridSpec::line(n, 1.0, bc).unwrap();
        let mut mu = SpectralBasis::new(&spec).unwrap().eigenvalues().to_vec();
        mu.sort_by(f64::total_cmp);
        let fd = fd_eigenvalues(&spec);
        for m in 0..n / 4 {
            if mu[m] == 0.0 {
                assert!(fd[m].abs() < 1e-9, "{bc}: zero mode {}", fd[m]);
                continue;
            }
            let rel = (fd[m] - mu[m]).abs() / mu[m];
            match bc {
                // the second-order symbol is exactly sinc² of the half angle
                BoundaryCondition::Periodic => {
                    let half = PI * ((m + 1) / 2) as f64 / n as f64;
                    let sinc2 = (half.sin() / half).powi(2);
                    assert!((fd[m] - mu[m] * sinc2).abs() < 1e-10 * mu[m], "{bc} mode {m}");
                }
                _ => assert!(rel < 0.05, "{bc} mode {m}: {rel}"),
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn transform_round_trips((f, _, _) in field_pair()) {
        let c = to_spectral(&f).unwrap();
        let back = from_spectral(&c, &f.spec, f.channels).unwrap();
        for (a, b) in back.values.iter().zip(&f.values) {
            prop_assert!((a - b).abs() < 1e-11);
        }
    }

    #[test]
    fn parseval_with_cell_weight((f, _, _) in field_pair()) {
        let c = to_spectral(&f).unwrap();
        let energy = f.spec.cell_weight() * dot(&f.values, &f.values);
        prop_assert!((dot(&c, &c) - energy).abs() <= 1e-10 * (1.0 + energy));
    }

    #[test]
    fn operator_is_linear((f, a, b) in field_pair(), s in -2.0f64..2.0, l in 0.01f64..0.5, alpha in 0.0f64..3.0) {
        let p = op(f.spec.bc, l, alpha);
        let fa = f.with_values(a.clone());
        let fb = f.with_values(b.clone());
        let mix = f.with_values(a.iter().zip(&b).map(|(x, y)| x + s * y).collect());
        let (oa, ob, om) = (
            apply_fractional_op(&fa, &p).unwrap(),
            apply_fractional_op(&fb, &p).unwrap(),
            apply_fractional_op(&mix, &p).unwrap(),
        );
        let scale = 1.0 + om.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for ((x, y), z) in oa.values.iter().zip(&ob.values).zip(&om.values) {
            prop_assert!((x + s * y - z).abs() < 1e-10 * scale);
        }
    }

    #[test]
    fn operator_is_self_adjoint((f, a, b) in field_pair(), l in 0.01f64..0.5, alpha in 0.0f64..3.0) {
        let p = op(f.spec.bc, l, alpha);
        let fa = f.with_values(a.clone());
        let fb = f.with_values(b.clone());
        let lhs = dot(&apply_fractional_op(&fa, &p).unwrap().values, &b);
        let rhs = dot(&a, &apply_fractional_op(&fb, &p).unwrap().values);
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
    }

    #[test]
    fn residual_grows_with_order_and_length((f, _, _) in field_pair(), l in 0.01f64..0.5, alpha in 0.0f64..2.5) {
        let bc = f.spec.bc;
        let base = pde_residual_sq(&f, &op(bc, l, alpha)).unwrap();
        let tol = 1e-12 * (1.0 + base);
        prop_assert!(base >= f.mean_square() - tol);
        prop_assert!(pde_residual_sq(&f, &op(bc, l, alpha + 0.5)).unwrap() >= base - tol);
        prop_assert!(pde_residual_sq(&f, &op(bc, 1.5 * l, alpha)).unwrap() >= base - tol);
    }
}
