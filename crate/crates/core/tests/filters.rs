use extobs_core::demo;
use extobs_core::integrator::{HermiteSegment, InputSegment};
use extobs_core::linalg;
use extobs_core::parametrizer::{mix, FilterBank, FilterConfig, MixingGain, WeightOrigin};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn config(t_eps: f64) -> FilterConfig {
    FilterConfig::new(
        DVector::from_row_slice(&[3.0, 3.0, 1.0]),
        DMatrix::from_row_slice(2, 2, &[-4.0, 1.0, -2.0, 0.0]),
        DVector::from_row_slice(&[1.0, 2.0]),
        &demo::exosystem(),
        25.0,
        1.0,
        MixingGain::Constant(1.0),
        t_eps,
        WeightOrigin::ExtensionStart,
    )
    .unwrap()
}

fn y(t: f64) -> (f64, f64) {
    ((t).sin() + 0.5 * (3.3 * t).sin(), t.cos() + 1.65 * (3.3 * t).cos())
}

fn u(t: f64) -> (f64, f64) {
    ((1.7 * t).cos() + 0.3 * (5.0 * t).sin(), -1.7 * (1.7 * t).sin() + 1.5 * (5.0 * t).cos())
}

fn segment(t: f64, h: f64) -> InputSegment {
    let (y0, dy0) = y(t);
    let (y1, dy1) = y(t + h);
    let (u0, du0) = u(t);
    let (u1, du1) = u(t + h);
    InputSegment {
        y: HermiteSegment { t0: t, h, v0: y0, v1: y1, d0: dy0, d1: dy1 },
        u: HermiteSegment { t0: t, h, v0: u0, v1: u1, d0: du0, d1: du1 },
    }
}

/// Runs the bank to `t_end`, calling `visit` after every step.
fn run(cfg: &FilterConfig, dt: f64, t_end: f64, mut visit: impl FnMut(f64, &FilterBank)) -> FilterBank {
    let mut bank = FilterBank::for_config(cfg);
    let steps = (t_end / dt).round() as usize;
    for i in 0..steps {
        let t = i as f64 * dt;
        bank.step(cfg, &segment(t, dt)).unwrap();
        visit(t + dt, &bank);
    }
    bank
}

#[test]
fn extension_matrix_is_psd_and_nondecreasing() {
    let cfg = config(2.0);
    let mut prev: Option<DMatrix<f64>> = None;
    let mut checked = 0;
    run(&cfg, 1e-3, 8.0, |t, b| {
        let scale = 1e-12 * (1.0 + b.phi.norm());
        assert!((&b.phi - b.phi.transpose()).amax() <= scale, "phi not symmetric at t = {t}");
        assert!(linalg::sym_min_eigenvalue(&b.phi) >= -scale, "phi not PSD at t = {t}");
        if let Some(p) = &prev {
            assert!(linalg::sym_min_eigenvalue(&(&b.phi - p)) >= -scale, "phi decreased at t = {t}");
            checked += 1;
        }
        if t < 2.0 {
            assert_eq!(b.phi.amax(), 0.0);
        }
        prev = Some(b.phi.clone());
    });
    assert!(checked > 5000);
}

#[test]
fn step_halving_converges() {
    let cfg = config(1.0);
    let a = run(&cfg, 2e-3, 4.0, |_, _| {});
    let b = run(&cfg, 1e-3, 4.0, |_, _| {});
    let rel = |x: &DMatrix<f64>, y: &DMatrix<f64>| (x - y).norm() / y.norm();
    assert!(rel(&a.phi, &b.phi) < 1e-8);
    assert!((&a.q - &b.q).norm() / b.q.norm() < 1e-8);
    assert!((&a.z - &b.z).norm() / b.z.norm() < 1e-8);
}

proptest! {
    #[test]
    fn mixing_an_exact_regression(
        entries in prop::collection::vec(-1.0f64..1.0, 36),
        eta in prop::collection::vec(-10.0f64..10.0, 6),
        k in 0.1f64..10.0,
    ) {
        let r = DMatrix::from_column_slice(6, 6, &entries);
        let phi = &r * r.transpose() + DMatrix::identity(6, 6) * 0.1;
        let eta = DVector::from_vec(eta);
        let mut bank = FilterBank::zeros(3, 2);
        bank.q = &phi * &eta;
        bank.phi = phi;
        let lre = mix(&bank, k);
        prop_assert!(lre.m > 0.0);
        let err = (&lre.y - &eta * lre.m).norm() / (lre.m * (1.0 + eta.norm()));
        prop_assert!(err < 1e-9);
    }
}
