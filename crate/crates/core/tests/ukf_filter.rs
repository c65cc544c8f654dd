//! Unscented filter against closed-form linear-Gaussian results.

use nalgebra::{DMatrix, DVector};
use pdy_core::ukf::{predict, sigma_points, ukf_nll, ukf_nll_parts, update, GaussianBelief, UkfParams};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(r: usize, c: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn random_pd(n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let a = random_matrix(n, n, rng);
    &a * a.transpose() + DMatrix::identity(n, n) * 0.3
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

fn linear(a: DMatrix<f64>, b: DVector<f64>) -> impl FnMut(&DMatrix<f64>) -> pdy_core::Result<DMatrix<f64>> {
    move |x: &DMatrix<f64>| {
        let mut y = &a * x;
        for mut col in y.column_iter_mut() {
            col += &b;
        }
        Ok(y)
    }
}

#[test]
fn matches_a_classical_kalman_filter_over_twenty_steps() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (n, m) = (4, 3);
    let a = random_matrix(n, n, &mut rng) * 0.5 + DMatrix::identity(n, n) * 0.6;
    let b = DVector::from_fn(n, |_, _| rng.random_range(-0.1..0.1));
    let h = random_matrix(m, n, &mut rng);
    let p = UkfParams { alpha: 0.8, beta: 2.0, kappa: 1.0, q_scale: 0.03, r_scale: 0.2, p0_scale: 0.5 };
    let q = DMatrix::identity(n, n) * p.q_scale;
    let r = DMatrix::identity(m, m) * p.r_scale;

    let mut ukf = GaussianBelief::isotropic(&[0.3, -0.2, 0.1, 0.0], p.p0_scale);
    let (mut x, mut cov) = (ukf.mean.clone(), ukf.cov.clone());
    let mut truth = DVector::from_vec(vec![1.0, -1.0, 0.5, 0.2]);
    for step in 0..20 {
        truth = &a * &truth + &b;
        let z: Vec<f64> = (&h * &truth).iter().map(|v| v + rng.random_range(-0.3..0.3)).collect();

        let pred = predict(&ukf, linear(a.clone(), b.clone()), &p).unwrap();
        ukf = update(&pred, &z, linear(h.clone(), DVector::zeros(m)), &p).unwrap();

        x = &a * &x + &b;
        cov = &a * &cov * a.transpose() + &q;
        let s = &h * &cov * h.transpose() + &r;
        let gain = &cov * h.transpose() * s.clone().try_inverse().unwrap();
        x = &x + &gain * (DVector::from_vec(z) - &h * &x);
        cov = &cov - &gain * &s * gain.transpose();

        let dm = (&ukf.mean - &x).amax();
        let dc = max_abs(&(&ukf.cov - &cov));
        assert!(dm < 1e-8 && dc < 1e-8, "step {step}: mean diff {dm}, cov diff {dc}");
    }
}

#[test]
fn weight_identities_and_hand_case() {
    let p = UkfParams { alpha: 1.0, beta: 2.0, kappa: 0.0, ..UkfParams::default() };
    let s = sigma_points(&GaussianBelief::new(DVector::from_element(1, 3.0), DMatrix::identity(1, 1)).unwrap(), &p).unwrap();
    assert_eq!(s.w_m, vec![0.0, 0.5, 0.5]);
    assert_eq!(s.w_c, vec![2.0, 0.5, 0.5]);
    assert_eq!(s.points.as_slice(), &[3.0, 4.0, 2.0]);
}

#[test]
fn second_moment_reconstruction_in_three_dimensions() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cov = random_pd(3, &mut rng);
    let mean = DVector::from_vec(vec![0.5, -1.0, 2.0]);
    let p = UkfParams { alpha: 1.0, beta: 0.0, kappa: 0.0, ..UkfParams::default() };
    let s = sigma_points(&GaussianBelief::new(mean.clone(), cov.clone()).unwrap(), &p).unwrap();
    let mut rec = DMatrix::zeros(3, 3);
    let mut m = DVector::zeros(3);
    for c in 0..s.points.ncols() {
        m += s.points.column(c) * s.w_m[c];
        let dx = s.points.column(c) - &mean;
        rec += &dx * dx.transpose() * s.w_c[c];
    }
    assert!((&m - &mean).amax() < 1e-10);
    assert!(max_abs(&(&rec - &cov)) < 1e-8);
}

#[test]
fn square_map_and_identity_map_limits() {
    let p = UkfParams { alpha: 1.0, beta: 2.0, kappa: 0.0, q_scale: 1e-300, ..UkfParams::default() };
    let b = GaussianBelief::new(DVector::zeros(1), DMatrix::identity(1, 1)).unwrap();
    let out = predict(&b, |x: &DMatrix<f64>| Ok(x.map(|v| v * v)), &p).unwrap();
    assert!((out.mean[0] - 1.0).abs() < 1e-15);

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let b = GaussianBelief::new(DVector::from_vec(vec![1.0, 2.0, 3.0]), random_pd(3, &mut rng)).unwrap();
    let same = predict(&b, |x: &DMatrix<f64>| Ok(x.clone()), &UkfParams { q_scale: 1e-300, ..UkfParams::default() }).unwrap();
    assert!((&same.mean - &b.mean).amax() < 1e-10);
    assert!(max_abs(&(&same.cov - &b.cov)) < 1e-10);
}

#[test]
fn uninformative_measurement_leaves_the_prior() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let b = GaussianBelief::new(DVector::from_vec(vec![0.2, -0.4]), random_pd(2, &mut rng)).unwrap();
    let p = UkfParams { r_scale: 1e12, ..UkfParams::default() };
    let post = update(&b, &[5.0, -5.0], |x: &DMatrix<f64>| Ok(x.clone()), &p).unwrap();
    assert!((&post.mean - &b.mean).amax() <= 1e-4 * b.mean.amax());
    assert!(max_abs(&(&post.cov - &b.cov)) <= 1e-4 * max_abs(&b.cov));
}

#[test]
fn nll_matches_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for n in 1..=5 {
        let cov = random_pd(n, &mut rng);
        let mean = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let e = DVector::from_column_slice(&x) - &mean;
        let inv = cov.clone().try_inverse().unwrap();
        let want = 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
            + 0.5 * cov.determinant().ln()
            + 0.5 * (e.transpose() * &inv * &e)[(0, 0)];
        let got = ukf_nll(&x, &GaussianBelief::new(mean, cov).unwrap()).unwrap();
        assert!((got - want).abs() < 1e-8, "n={n}: {got} vs {want}");
    }
    let unit = ukf_nll(&[0.0], &GaussianBelief::isotropic(&[0.0], 1.0)).unwrap();
    assert!((unit - 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
}

fn belief_strategy() -> impl Strategy<Value = (GaussianBelief, Vec<f64>, u64)> {
    (1usize..5, any::<u64>()).prop_map(|(n, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cov = random_pd(n, &mut rng);
        let mean = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        let x = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        (GaussianBelief::new(mean, cov).unwrap(), x, seed)
    })
}

proptest! {
    #[test]
    fn weight_sums_are_exact(n in 1usize..40, alpha in 0.1f64..1.5, beta in 0.0f64..3.0, kappa in 0.0f64..3.0) {
        let p = UkfParams { alpha, beta, kappa, ..UkfParams::default() };
        prop_assume!(p.validate(n).is_ok());
        let (wm, wc) = p.weights(n);
        let sm: f64 = wm.iter().sum();
        let sc: f64 = wc.iter().sum();
        prop_assert!((sm - 1.0).abs() < 1e-9 * (1.0 + wm[0].abs()));
        prop_assert!((sc - (2.0 - alpha * alpha + beta)).abs() < 1e-9 * (1.0 + wc[0].abs()));
    }

    #[test]
    fn nll_lower_bound((b, x, _) in belief_strategy()) {
        let parts = ukf_nll_parts(&x, &b).unwrap();
        let floor = 0.5 * b.dim() as f64 * (2.0 * std::f64::consts::PI).ln() + 0.5 * parts.log_det;
        prop_assert!(parts.value >= floor - 1e-12);
        let at_mean = ukf_nll(b.mean.as_slice(), &b).unwrap();
        prop_assert!((at_mean - floor).abs() < 1e-12);
    }

    #[test]
    fn update_never_increases_trace((b, z, _) in belief_strategy(), r in 1e-3f64..10.0) {
        let p = UkfParams { r_scale: r, ..UkfParams::default() };
        let post = update(&b, &z, |x: &DMatrix<f64>| Ok(x.clone()), &p).unwrap();
        prop_assert!(post.cov.trace() <= b.cov.trace() + 1e-12);
        let asym = max_abs(&(&post.cov - post.cov.transpose()));
        prop_assert!(asym < 1e-10);
    }

    #[test]
    fn sigma_mean_is_belief_mean((b, _, _) in belief_strategy()) {
        let s = sigma_points(&b, &UkfParams::default()).unwrap();
        let mut m = DVector::zeros(b.dim());
        for c in 0..s.points.ncols() {
            m += s.points.column(c) * s.w_m[c];
        }
        prop_assert!((&m - &b.mean).amax() < 1e-10);
    }
}
