//! Adaptive observer for the extended state, its switched parameter
//! estimator, and the exact-parameter baseline observer.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hetero::Lre;
use crate::integrator::{rk4_step, InputSegment, State};
use crate::linalg;
use crate::lti::{regressor_phi, ExtendedSystem, SystemSpec};

/// States larger than this abort the run.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// Tolerance of the power iteration for `lambda_max(phi phi^T)`.
pub const LAMBDA_TOL: f64 = 1e-8;

/// Constants of the switched estimation law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimationGains {
    pub gamma0: f64,
    pub gamma1: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObserverState {
    pub x_hat: DVector<f64>,
    /// `(Theta_AB_hat; L_hat)`.
    pub kappa_hat: DVector<f64>,
    pub gains: EstimationGains,
}

impl ObserverState {
    pub fn new(x_hat: DVector<f64>, kappa_hat: DVector<f64>, gains: EstimationGains) -> Self {
        Self { x_hat, kappa_hat, gains }
    }

    pub fn lifted_hat(&self, n_lifted: usize) -> DVector<f64> {
        self.kappa_hat.rows(0, n_lifted).into_owned()
    }

    pub fn gain_hat(&self, n_lifted: usize) -> DVector<f64> {
        let ne = self.kappa_hat.len() - n_lifted;
        self.kappa_hat.rows(n_lifted, ne).into_owned()
    }

    pub fn y_hat(&self, spec: &SystemSpec) -> f64 {
        spec.c.dot(&self.x_hat.rows(0, spec.n))
    }
}

/// `phi^T = [Phi^T(x_hat, u), -y_tilde I]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRegressor {
    pub phi_t: DMatrix<f64>,
    pub y_tilde: f64,
    n_lifted: usize,
}

impl ErrorRegressor {
    /// `lambda_max(phi phi^T)`, computed on the smaller Gram `Phi^T Phi + y_tilde^2 I`.
    pub fn lambda_max(&self) -> f64 {
        let big_phi = self.phi_t.columns(0, self.n_lifted);
        let ne = self.phi_t.nrows();
        let gram = big_phi * big_phi.transpose() + DMatrix::identity(ne, ne) * (self.y_tilde * self.y_tilde);
        linalg::lambda_max_psd(&gram, LAMBDA_TOL, 10_000)
    }
}

pub fn error_regressor(st: &ObserverState, u: f64, y: f64, spec: &SystemSpec) -> ErrorRegressor {
    let ne = spec.n_e;
    let y_tilde = st.y_hat(spec) - y;
    let mut phi_t = DMatrix::zeros(ne, spec.n_lifted + ne);
    phi_t.view_mut((0, 0), (ne, spec.n_lifted)).copy_from(&regressor_phi(&st.x_hat, u, spec));
    phi_t.view_mut((0, spec.n_lifted), (ne, ne)).fill_diagonal(-y_tilde);
    ErrorRegressor { phi_t, y_tilde, n_lifted: spec.n_lifted }
}

fn guard(what: &'static str, x: &DVector<f64>, t: f64) -> Result<()> {
    if x.iter().all(|v| v.is_finite() && v.abs() <= DIVERGENCE_LIMIT) {
        Ok(())
    } else {
        Err(Error::Divergence { what, t, detail: format!("state {:?}", x.as_slice()) })
    }
}

/// `Phi^T(x_hat, u) Theta_hat + A_delta x_hat - L_hat (C_e^T x_hat - y)`.
pub fn observer_rhs(
    x_hat: &DVector<f64>,
    u: f64,
    y: f64,
    kappa_hat: &DVector<f64>,
    spec: &SystemSpec,
    a_delta: &DMatrix<f64>,
) -> DVector<f64> {
    let nl = spec.n_lifted;
    let lifted = kappa_hat.rows(0, nl);
    let l_hat = kappa_hat.rows(nl, spec.n_e);
    let y_hat = spec.c.dot(&x_hat.rows(0, spec.n));
    regressor_phi(x_hat, u, spec) * lifted + a_delta * x_hat - l_hat * (y_hat - y)
}

/// One RK4 step of the observer with `kappa_hat` held over the step.
pub fn observer_step(st: &mut ObserverState, seg: &InputSegment, spec: &SystemSpec, a_delta: &DMatrix<f64>) -> Result<()> {
    let kappa = st.kappa_hat.clone();
    let f = |t: f64, x: &DVector<f64>| {
        let (y, u) = seg.at(t);
        observer_rhs(x, u, y, &kappa, spec, a_delta)
    };
    let next = rk4_step(f, seg.t0(), &st.x_hat, seg.h());
    guard("observer", &next, seg.t0() + seg.h())?;
    st.x_hat = next;
    Ok(())
}

/// One RK4 step of the observer built on the true system matrices and gain:
/// `x' = (A_e + A_delta) x + B_e u - L (C_e^T x - y)`.
pub fn baseline_step(x: &mut DVector<f64>, seg: &InputSegment, ext: &ExtendedSystem, l: &DVector<f64>) -> Result<()> {
    let f = |t: f64, x: &DVector<f64>| {
        let (y, u) = seg.at(t);
        ext.rhs(x, u) - l * (ext.output(x) - y)
    };
    let next = rk4_step(f, seg.t0(), x, seg.h());
    guard("baseline observer", &next, seg.t0() + seg.h())?;
    *x = next;
    Ok(())
}

/// Outcome of one estimator update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimationUpdate {
    pub active: bool,
    /// `gamma0 lambda_max + gamma1`, the rate of the law for a normalized LRE.
    pub rate: f64,
}

/// Switched law `kappa' = -gamma M (M kappa - Y)` with
/// `gamma = (gamma0 lambda_max + gamma1) / M^2` when `raw_delta >= rho`, else 0.
///
/// The rate and `Y / M` are frozen over the step and the resulting linear ODE
/// is advanced exactly.
pub fn estimation_step(
    st: &mut ObserverState,
    lre: &Lre,
    raw_delta: f64,
    err_reg: &ErrorRegressor,
    dt: f64,
) -> Result<EstimationUpdate> {
    if raw_delta < st.gains.rho {
        return Ok(EstimationUpdate { active: false, rate: 0.0 });
    }
    let target = lre
        .ratio()
        .ok_or_else(|| Error::Inconsistent(format!("M_kappa = 0 while Delta = {raw_delta:.3e} >= rho")))?;
    let rate = st.gains.gamma0 * err_reg.lambda_max() + st.gains.gamma1;
    let decay = (-rate * dt).exp();
    st.kappa_hat = &target + (&st.kappa_hat - &target) * decay;
    Ok(EstimationUpdate { active: true, rate })
}

/// `kappa_hat` target of an active step: `Y / M` at both ends of the step.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSegment {
    pub t0: f64,
    pub h: f64,
    pub start: DVector<f64>,
    pub end: DVector<f64>,
}

impl TargetSegment {
    fn at(&self, t: f64) -> DVector<f64> {
        let s = if self.h > 0.0 { (t - self.t0) / self.h } else { 0.0 };
        &self.start * (1.0 - s) + &self.end * s
    }
}

#[derive(Clone)]
struct Joint(DVector<f64>, DVector<f64>);

impl State for Joint {
    fn add_scaled(&self, h: f64, d: &Self) -> Self {
        Joint(&self.0 + &d.0 * h, &self.1 + &d.1 * h)
    }
}

/// Advances observer and estimator together over one RK4 step. With a target
/// the law runs at rate `gamma0 lambda_max + gamma1` towards the linearly
/// interpolated `Y / M`; without one `kappa_hat` is held.
pub fn coupled_step(
    st: &mut ObserverState,
    seg: &InputSegment,
    target: Option<&TargetSegment>,
    spec: &SystemSpec,
    a_delta: &DMatrix<f64>,
) -> Result<EstimationUpdate> {
    let gains = st.gains;
    let rate = match target {
        Some(_) => {
            let (y, u) = seg.at(seg.t0());
            gains.gamma0 * error_regressor(st, u, y, spec).lambda_max() + gains.gamma1
        }
        None => 0.0,
    };
    let f = |t: f64, s: &Joint| {
        let (y, u) = seg.at(t);
        let dx = observer_rhs(&s.0, u, y, &s.1, spec, a_delta);
        let dk = match target {
            Some(tg) => {
                let probe = ObserverState { x_hat: s.0.clone(), kappa_hat: s.1.clone(), gains };
                let rate = gains.gamma0 * error_regressor(&probe, u, y, spec).lambda_max() + gains.gamma1;
                (tg.at(t) - &s.1) * rate
            }
            None => DVector::zeros(s.1.len()),
        };
        Joint(dx, dk)
    };
    let Joint(x, k) = rk4_step(f, seg.t0(), &Joint(st.x_hat.clone(), st.kappa_hat.clone()), seg.h());
    let t1 = seg.t0() + seg.h();
    guard("observer", &x, t1)?;
    guard("parameter estimate", &k, t1)?;
    st.x_hat = x;
    st.kappa_hat = k;
    Ok(EstimationUpdate { active: target.is_some(), rate })
}

/// `delta_hat = h^T x_hat_delta`.
pub fn disturbance_estimate(x_hat: &DVector<f64>, n: usize, h: &DVector<f64>) -> f64 {
    h.dot(&x_hat.rows(n, h.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{gain_direct, gamma_companion, GainProblem};
    use crate::demo;
    use crate::hetero::Target;
    use crate::lti::build_extended;
    use approx::assert_relative_eq;

    fn gains() -> EstimationGains {
        EstimationGains { gamma0: 1e-11, gamma1: 1.0, rho: 0.1 }
    }

    #[test]
    fn regressor_block_structure() {
        let spec = demo::system_spec();
        let st = ObserverState::new(DVector::zeros(5), DVector::zeros(9), gains());
        let r = error_regressor(&st, 0.0, -2.0, &spec);
        assert_eq!(r.y_tilde, 2.0);
        assert_relative_eq!(r.lambda_max(), 4.0, epsilon = 1e-7);
        let r0 = error_regressor(&st, 0.0, 0.0, &spec);
        assert_eq!(r0.lambda_max(), 0.0);
    }

    #[test]
    fn frozen_below_threshold() {
        let spec = demo::system_spec();
        let mut st = ObserverState::new(DVector::zeros(5), DVector::from_element(9, 1.0), gains());
        let reg = error_regressor(&st, 0.0, 0.0, &spec);
        let lre = Lre::new(DVector::zeros(9), 1.0, Target::Kappa);
        let up = estimation_step(&mut st, &lre, 0.05, &reg, 0.1).unwrap();
        assert!(!up.active);
        assert_eq!(st.kappa_hat, DVector::from_element(9, 1.0));
    }

    #[test]
    fn exact_lre_gives_exponential_decay() {
        let spec = demo::system_spec();
        let kappa = DVector::from_fn(9, |i, _| i as f64 - 3.0);
        let mut st = ObserverState::new(DVector::zeros(5), DVector::zeros(9), gains());
        let lre = Lre::new(&kappa * 0.5, 0.5, Target::Kappa);
        let reg = error_regressor(&st, 0.0, 0.0, &spec);
        let e0 = kappa.norm();
        let mut prev = e0;
        for _ in 0..300 {
            estimation_step(&mut st, &lre, 1.0, &reg, 0.01).unwrap();
            let e = (&st.kappa_hat - &kappa).norm();
            assert!(e <= prev);
            prev = e;
        }
        let expect = (-3.0f64).exp() * e0;
        assert!((prev - expect).abs() < 0.01 * expect);
    }

    #[test]
    fn zero_regressor_with_large_delta_is_inconsistent() {
        let spec = demo::system_spec();
        let mut st = ObserverState::new(DVector::zeros(5), DVector::zeros(9), gains());
        let reg = error_regressor(&st, 0.0, 0.0, &spec);
        let lre = Lre::new(DVector::zeros(9), 0.0, Target::Kappa);
        assert!(matches!(estimation_step(&mut st, &lre, 1.0, &reg, 0.01), Err(Error::Inconsistent(_))));
    }

    #[test]
    fn true_parameters_reduce_to_baseline() {
        let spec = demo::system_spec();
        let exo = demo::exosystem();
        let ext = build_extended(&spec, &exo, &demo::default_theta()).unwrap();
        let prob = GainProblem::new(&spec, &exo, gamma_companion(-1.0, 5)).unwrap();
        let l = gain_direct(&ext, &prob).unwrap().l;
        let mut kappa = DVector::zeros(9);
        kappa.rows_mut(0, 4).copy_from(&ext.theta_ab);
        kappa.rows_mut(4, 5).copy_from(&l);

        let x0 = DVector::from_vec(vec![0.3, -1.0, 2.0, 5.0, -4.0]);
        let mut st = ObserverState::new(x0.clone(), kappa, gains());
        let mut base = x0;
        let a_delta = exo.embed(3);
        let dt = 1e-3;
        for i in 0..2000 {
            let t = i as f64 * dt;
            let seg = InputSegment {
                y: crate::integrator::HermiteSegment { t0: t, h: dt, v0: t.sin(), v1: (t + dt).sin(), d0: t.cos(), d1: (t + dt).cos() },
                u: crate::integrator::HermiteSegment::constant(t, dt, 1.0),
            };
            observer_step(&mut st, &seg, &spec, &a_delta).unwrap();
            baseline_step(&mut base, &seg, &ext, &l).unwrap();
        }
        assert!((&st.x_hat - &base).norm() <= 1e-10 * base.norm().max(1.0));
    }

    #[test]
    fn coupled_step_tracks_a_constant_target() {
        let spec = demo::system_spec();
        let a_delta = demo::exosystem().embed(3);
        let kappa = DVector::from_fn(9, |i, _| i as f64 - 3.0);
        let mut st = ObserverState::new(DVector::zeros(5), DVector::zeros(9), gains());
        let dt = 1e-2;
        for i in 0..300 {
            let seg = InputSegment::constant(i as f64 * dt, dt, 0.0, 0.0);
            let tg = TargetSegment { t0: seg.t0(), h: dt, start: kappa.clone(), end: kappa.clone() };
            let up = coupled_step(&mut st, &seg, Some(&tg), &spec, &a_delta).unwrap();
            assert!(up.active);
        }
        let expect = &kappa * (1.0 - (-3.0f64).exp());
        assert!((&st.kappa_hat - expect).norm() < 1e-9 * kappa.norm());
    }

    #[test]
    fn coupled_step_without_target_holds_the_estimate() {
        let spec = demo::system_spec();
        let a_delta = demo::exosystem().embed(3);
        let k0 = DVector::from_element(9, 0.5);
        let mut a = ObserverState::new(DVector::from_element(5, 1.0), k0.clone(), gains());
        let mut b = a.clone();
        for i in 0..100 {
            let seg = InputSegment::constant(i as f64 * 1e-2, 1e-2, 0.7, -0.2);
            let up = coupled_step(&mut a, &seg, None, &spec, &a_delta).unwrap();
            assert!(!up.active);
            observer_step(&mut b, &seg, &spec, &a_delta).unwrap();
        }
        assert_eq!(a.kappa_hat, k0);
        assert!((&a.x_hat - &b.x_hat).norm() <= 1e-12 * b.x_hat.norm());
    }

    #[test]
    fn divergence_guard_fires() {
        let spec = demo::system_spec();
        let exo = demo::exosystem();
        let ext = build_extended(&spec, &exo, &demo::default_theta()).unwrap();
        // wrong gain: destabilizing injection
        let l = DVector::from_vec(vec![0.0, 0.0, -50.0, 0.0, 0.0]);
        let mut x = DVector::from_element(5, 1.0);
        let mut err = None;
        for i in 0..100_000 {
            let seg = InputSegment::constant(i as f64 * 1e-3, 1e-3, 0.0, 0.0);
            if let Err(e) = baseline_step(&mut x, &seg, &ext, &l) {
                err = Some(e);
                break;
            }
        }
        assert!(matches!(err, Some(Error::Divergence { .. })));
    }

    #[test]
    fn disturbance_reads_exosystem_block() {
        let x = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(disturbance_estimate(&x, 3, &DVector::from_vec(vec![1.0, 0.0])), 4.0);
        assert_eq!(disturbance_estimate(&DVector::zeros(5), 3, &DVector::from_vec(vec![1.0, 0.0])), 0.0);
    }
}
