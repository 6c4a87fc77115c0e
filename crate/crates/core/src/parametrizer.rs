//! State filters, low-pass filters, the two-layer regressor extension and the
//! determinant mixing that turn `(u, y)` into a scalar-regressor LRE for
//! `eta = (psi_a; psi_b)`.

use std::fmt;
use std::sync::Arc;

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hetero::{Lre, Target};
use crate::integrator::{rk4_step, InputSegment, State};
use crate::linalg;
use crate::lti::{shift_matrix, unit_vector, ExosystemSpec};

/// Solves `M A_delta - G M = l h_bar^T` with `h_bar = A_delta^T h` and returns
/// `(M, beta)` where `M^T beta = h_bar`.
pub fn compute_beta(g: &DMatrix<f64>, l: &DVector<f64>, exo: &ExosystemSpec) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let nd = exo.n_delta();
    if g.nrows() != nd || !g.is_square() || l.len() != nd {
        return Err(Error::Dimension { what: "filter pair (G, l)", expected: nd, got: l.len() });
    }
    let h_bar = exo.h_bar();
    let rhs = l * h_bar.transpose();
    let m = linalg::solve_sylvester(&(-g), &exo.a_cal, &rhs)?;
    if linalg::rank(&m, 1e-10) < nd {
        return Err(Error::DegeneratePairing);
    }
    let beta = m.transpose().lu().solve(&h_bar).ok_or(Error::DegeneratePairing)?;
    Ok((m, beta))
}

/// Time origin of the exponential weight `exp(-k2 (tau - tau_0))` in the
/// extension integrals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightOrigin {
    /// `tau_0 = 0`.
    Absolute,
    /// `tau_0 = t_eps`: same dynamics, with the mixing gain effectively scaled by
    /// `exp(2 n k2 t_eps)`.
    #[default]
    ExtensionStart,
}

/// The mixing amplifier `k(t)`.
#[derive(Clone)]
pub enum MixingGain {
    Constant(f64),
    TimeVarying(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl MixingGain {
    pub fn at(&self, t: f64) -> f64 {
        match self {
            MixingGain::Constant(k) => *k,
            MixingGain::TimeVarying(f) => f(t),
        }
    }
}

impl fmt::Debug for MixingGain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MixingGain::Constant(k) => write!(f, "Constant({k})"),
            MixingGain::TimeVarying(_) => f.write_str("TimeVarying(..)"),
        }
    }
}

/// Constants of the filter bank.
#[derive(Debug, Clone)]
pub struct FilterConfig {
    pub k_obs: DVector<f64>,
    pub a_k: DMatrix<f64>,
    pub c0: DVector<f64>,
    pub g: DMatrix<f64>,
    pub l: DVector<f64>,
    pub m_delta: DMatrix<f64>,
    pub beta: DVector<f64>,
    pub k1: f64,
    pub k2: f64,
    pub mixing: MixingGain,
    pub t_eps: f64,
    pub weight_origin: WeightOrigin,
}

impl FilterConfig {
    /// Validates stability and controllability requirements and computes `beta`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        k_obs: DVector<f64>,
        g: DMatrix<f64>,
        l: DVector<f64>,
        exo: &ExosystemSpec,
        k1: f64,
        k2: f64,
        mixing: MixingGain,
        t_eps: f64,
        weight_origin: WeightOrigin,
    ) -> Result<Self> {
        let n = k_obs.len();
        if n == 0 {
            return Err(crate::error::config("observer injection K must be non-empty"));
        }
        if !(k1 > 0.0 && k2 > 0.0) {
            return Err(crate::error::config("filter constants k1 and k2 must be positive"));
        }
        if let MixingGain::Constant(k) = mixing {
            if !(k > 0.0) {
                return Err(crate::error::config("mixing gain k must be positive"));
            }
        }
        let c0 = unit_vector(n, 0);
        let a_k = shift_matrix(n) - &k_obs * c0.transpose();
        if !linalg::is_hurwitz(&a_k) {
            return Err(crate::error::config("A_K = A_0 - K C_0^T is not Hurwitz"));
        }
        if !linalg::is_hurwitz(&g) {
            return Err(crate::error::config("filter matrix G is not Hurwitz"));
        }
        if !linalg::is_controllable(&g, &l) {
            return Err(crate::error::config("pair (G, l) is not controllable"));
        }
        let (m_delta, beta) = compute_beta(&g, &l, exo)?;
        if t_eps < 5.0 / k1 {
            warn!("t_eps = {t_eps} is below 5/k1 = {}: filter transients have not decayed", 5.0 / k1);
        }
        Ok(Self { k_obs, a_k, c0, g, l, m_delta, beta, k1, k2, mixing, t_eps, weight_origin })
    }

    pub fn n(&self) -> usize {
        self.k_obs.len()
    }

    pub fn n_delta(&self) -> usize {
        self.l.len()
    }

    pub fn weight(&self, tau: f64) -> f64 {
        let origin = match self.weight_origin {
            WeightOrigin::Absolute => 0.0,
            WeightOrigin::ExtensionStart => self.t_eps,
        };
        (-self.k2 * (tau - origin)).exp()
    }
}

/// Complete state of the filters and extension integrals.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    pub z: DVector<f64>,
    pub omega: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub f: DVector<f64>,
    pub h: DMatrix<f64>,
    pub nn: DMatrix<f64>,
    pub q_bar_f: f64,
    pub phi_bar_f: DVector<f64>,
    pub f_f: DVector<f64>,
    pub y_f: f64,
    pub q: DVector<f64>,
    pub phi: DMatrix<f64>,
    pub q_inner: DVector<f64>,
    pub phi_inner: DMatrix<f64>,
}

impl State for FilterBank {
    fn add_scaled(&self, s: f64, d: &Self) -> Self {
        FilterBank {
            z: &self.z + &d.z * s,
            omega: &self.omega + &d.omega * s,
            p: &self.p + &d.p * s,
            f: &self.f + &d.f * s,
            h: &self.h + &d.h * s,
            nn: &self.nn + &d.nn * s,
            q_bar_f: self.q_bar_f + d.q_bar_f * s,
            phi_bar_f: &self.phi_bar_f + &d.phi_bar_f * s,
            f_f: &self.f_f + &d.f_f * s,
            y_f: self.y_f + d.y_f * s,
            q: &self.q + &d.q * s,
            phi: &self.phi + &d.phi * s,
            q_inner: &self.q_inner + &d.q_inner * s,
            phi_inner: &self.phi_inner + &d.phi_inner * s,
        }
    }
}

/// Right-hand sides of `z`, `Omega`, `P` shared by several filters.
struct CoreRates {
    zd: DVector<f64>,
    omega_d: DMatrix<f64>,
    p_d: DMatrix<f64>,
}

impl FilterBank {
    pub fn zeros(n: usize, n_delta: usize) -> Self {
        FilterBank {
            z: DVector::zeros(n),
            omega: DMatrix::zeros(n, n),
            p: DMatrix::zeros(n, n),
            f: DVector::zeros(n_delta),
            h: DMatrix::zeros(n_delta, n),
            nn: DMatrix::zeros(n_delta, n),
            q_bar_f: 0.0,
            phi_bar_f: DVector::zeros(2 * n),
            f_f: DVector::zeros(n_delta),
            y_f: 0.0,
            q: DVector::zeros(2 * n),
            phi: DMatrix::zeros(2 * n, 2 * n),
            q_inner: DVector::zeros(2 * n),
            phi_inner: DMatrix::zeros(2 * n, 2 * n),
        }
    }

    pub fn for_config(cfg: &FilterConfig) -> Self {
        Self::zeros(cfg.n(), cfg.n_delta())
    }

    fn core_rates(&self, cfg: &FilterConfig, y: f64, u: f64) -> CoreRates {
        let n = cfg.n();
        let id = DMatrix::<f64>::identity(n, n);
        CoreRates {
            zd: &cfg.a_k * &self.z + &cfg.k_obs * y,
            omega_d: &cfg.a_k * &self.omega + &id * y,
            p_d: &cfg.a_k * &self.p + id * u,
        }
    }

    fn phi_bar_from(&self, cfg: &FilterConfig, rates: &CoreRates) -> DVector<f64> {
        let n = cfg.n();
        let mut out = DVector::zeros(2 * n);
        let top = rates.omega_d.transpose() * &cfg.c0 + self.nn.transpose() * &cfg.beta;
        let bottom = rates.p_d.transpose() * &cfg.c0 + self.h.transpose() * &cfg.beta;
        out.rows_mut(0, n).copy_from(&top);
        out.rows_mut(n, n).copy_from(&bottom);
        out
    }

    /// The instantaneous regression pair `(q_bar, phi_bar)`.
    pub fn regression_pair(&self, cfg: &FilterConfig, y: f64, u: f64) -> (f64, DVector<f64>) {
        let rates = self.core_rates(cfg, y, u);
        (y - cfg.c0.dot(&self.z), self.phi_bar_from(cfg, &rates))
    }

    /// `q_bar - k1 q_bar_f - beta^T (F_f + l y_f)`, the filtered regressand.
    pub fn filtered_regressand(&self, cfg: &FilterConfig, y: f64) -> f64 {
        let q_bar = y - cfg.c0.dot(&self.z);
        q_bar - cfg.k1 * self.q_bar_f - cfg.beta.dot(&(&self.f_f + &cfg.l * self.y_f))
    }

    fn derivative(&self, cfg: &FilterConfig, t: f64, y: f64, u: f64, extend: bool) -> FilterBank {
        let rates = self.core_rates(cfg, y, u);
        let phi_bar = self.phi_bar_from(cfg, &rates);
        let q_bar = y - cfg.c0.dot(&self.z);
        let c0t = cfg.c0.transpose();

        let f_d = &cfg.g * &self.f + &cfg.g * &cfg.l * y - &cfg.l * cfg.c0.dot(&rates.zd);
        let h_d = &cfg.g * &self.h - &cfg.l * (&c0t * &rates.p_d);
        let n_d = &cfg.g * &self.nn - &cfg.l * (&c0t * &rates.omega_d);

        let k1 = cfg.k1;
        let mut d = FilterBank {
            z: rates.zd,
            omega: rates.omega_d,
            p: rates.p_d,
            f: f_d,
            h: h_d,
            nn: n_d,
            q_bar_f: -k1 * self.q_bar_f + q_bar,
            phi_bar_f: &self.phi_bar_f * (-k1) + phi_bar,
            f_f: &self.f_f * (-k1) + &self.f,
            y_f: -k1 * self.y_f + y,
            q: DVector::zeros(self.q.len()),
            phi: DMatrix::zeros(self.phi.nrows(), self.phi.ncols()),
            q_inner: DVector::zeros(self.q.len()),
            phi_inner: DMatrix::zeros(self.phi.nrows(), self.phi.ncols()),
        };
        if extend {
            let lhs = self.filtered_regressand(cfg, y);
            let w = cfg.weight(t);
            d.q_inner = &self.phi_bar_f * (w * lhs);
            d.phi_inner = &self.phi_bar_f * self.phi_bar_f.transpose() * w;
            d.q = self.q_inner.clone();
            d.phi = self.phi_inner.clone();
        }
        d
    }

    /// True when the extension integrals run over the step starting at `t`.
    pub fn extension_active(cfg: &FilterConfig, t: f64) -> bool {
        t >= cfg.t_eps - 1e-9 * cfg.t_eps.abs().max(1.0)
    }

    /// Advances filters and (from `t_eps` on) extension integrals over one step.
    pub fn step(&mut self, cfg: &FilterConfig, seg: &InputSegment) -> Result<()> {
        let extend = Self::extension_active(cfg, seg.t0());
        self.advance(cfg, seg, extend)
    }

    /// Advances only the state and low-pass filters; the extension is held.
    pub fn step_filters(&mut self, cfg: &FilterConfig, seg: &InputSegment) -> Result<()> {
        self.advance(cfg, seg, false)
    }

    fn advance(&mut self, cfg: &FilterConfig, seg: &InputSegment, extend: bool) -> Result<()> {
        let f = |t: f64, s: &FilterBank| {
            let (y, u) = seg.at(t);
            s.derivative(cfg, t, y, u, extend)
        };
        let next = rk4_step(f, seg.t0(), self, seg.h());
        let t1 = seg.t0() + seg.h();
        next.check_finite(t1)?;
        *self = next;
        Ok(())
    }

    /// Advances the extension integrals alone with the filter outputs held at
    /// their current values; a no-op before `t_eps`.
    pub fn step_extension(&mut self, cfg: &FilterConfig, y: f64, t: f64, dt: f64) -> Result<()> {
        if !Self::extension_active(cfg, t) {
            return Ok(());
        }
        let drive = &self.phi_bar_f * self.filtered_regressand(cfg, y);
        let outer = &self.phi_bar_f * self.phi_bar_f.transpose();
        type Ext = (DVector<f64>, DMatrix<f64>, DVector<f64>, DMatrix<f64>);
        #[derive(Clone)]
        struct S(Ext);
        impl State for S {
            fn add_scaled(&self, h: f64, d: &Self) -> Self {
                let (a, b) = (&self.0, &d.0);
                S((&a.0 + &b.0 * h, &a.1 + &b.1 * h, &a.2 + &b.2 * h, &a.3 + &b.3 * h))
            }
        }
        let f = |tau: f64, s: &S| {
            let w = cfg.weight(tau);
            S((s.0 .2.clone(), s.0 .3.clone(), &drive * w, &outer * w))
        };
        let s0 = S((self.q.clone(), self.phi.clone(), self.q_inner.clone(), self.phi_inner.clone()));
        let S((q, phi, qi, pi)) = rk4_step(f, t, &s0, dt);
        self.q = q;
        self.phi = phi;
        self.q_inner = qi;
        self.phi_inner = pi;
        self.check_finite(t + dt)
    }

    fn check_finite(&self, t: f64) -> Result<()> {
        let finite = self.z.iter().all(|v| v.is_finite())
            && self.omega.iter().all(|v| v.is_finite())
            && self.p.iter().all(|v| v.is_finite())
            && self.f.iter().all(|v| v.is_finite())
            && self.h.iter().all(|v| v.is_finite())
            && self.nn.iter().all(|v| v.is_finite())
            && self.q_bar_f.is_finite()
            && self.phi_bar_f.iter().all(|v| v.is_finite())
            && self.f_f.iter().all(|v| v.is_finite())
            && self.y_f.is_finite()
            && self.q.iter().all(|v| v.is_finite())
            && self.phi.iter().all(|v| v.is_finite())
            && self.q_inner.iter().all(|v| v.is_finite())
            && self.phi_inner.iter().all(|v| v.is_finite());
        if finite {
            Ok(())
        } else {
            Err(Error::Divergence { what: "filter", t, detail: "non-finite filter state".into() })
        }
    }
}

/// `Y = k adj{phi} q`, `Delta = k det{phi}`.
pub fn mix(bank: &FilterBank, k: f64) -> Lre {
    let (det, adj) = linalg::det_adjugate(&bank.phi);
    Lre::new(adj * &bank.q * k, det * k, Target::Eta)
}

/// `|q_bar - k1 q_bar_f - beta^T(F_f + l y_f) - phi_bar_f^T eta - exp(-k1 (t - t0)) q_bar(t0)|`.
pub fn regression_residual(bank: &FilterBank, cfg: &FilterConfig, y: f64, eta: &DVector<f64>, t: f64, t0: f64, q_bar0: f64) -> f64 {
    let lhs = bank.filtered_regressand(cfg, y);
    (lhs - bank.phi_bar_f.dot(eta) - (-cfg.k1 * (t - t0)).exp() * q_bar0).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demo;
    use approx::assert_relative_eq;

    fn demo_cfg(t_eps: f64) -> FilterConfig {
        FilterConfig::new(
            DVector::from_vec(vec![3.0, 3.0, 1.0]),
            DMatrix::from_row_slice(2, 2, &[-4.0, 1.0, -2.0, 0.0]),
            DVector::from_vec(vec![1.0, 2.0]),
            &demo::exosystem(),
            25.0,
            1.0,
            MixingGain::Constant(1.0),
            t_eps,
            WeightOrigin::Absolute,
        )
        .unwrap()
    }

    #[test]
    fn beta_near_printed_values() {
        let cfg = demo_cfg(25.0);
        assert!((cfg.beta[0] - 20.0).abs() < 0.2);
        assert!((cfg.beta[1] + 8.0).abs() < 0.08);
        let exo = demo::exosystem();
        let r = &cfg.m_delta * &exo.a_cal - &cfg.g * &cfg.m_delta - &cfg.l * exo.h_bar().transpose();
        assert!(r.norm() < 1e-10 * cfg.m_delta.norm());
    }

    #[test]
    fn constant_disturbance_is_degenerate() {
        let exo = ExosystemSpec::new(DMatrix::zeros(1, 1), DVector::from_element(1, 1.0)).unwrap();
        let g = DMatrix::from_element(1, 1, -1.0);
        let l = DVector::from_element(1, 1.0);
        assert!(matches!(compute_beta(&g, &l, &exo), Err(Error::DegeneratePairing)));
    }

    #[test]
    fn shared_spectrum_is_rejected() {
        let exo = ExosystemSpec::new(DMatrix::from_element(1, 1, -1.0), DVector::from_element(1, 1.0)).unwrap();
        let g = DMatrix::from_element(1, 1, -1.0);
        let l = DVector::from_element(1, 1.0);
        assert!(matches!(compute_beta(&g, &l, &exo), Err(Error::SylvesterSingular)));
    }

    #[test]
    fn zero_inputs_keep_zero_state() {
        let cfg = demo_cfg(0.0);
        let mut bank = FilterBank::for_config(&cfg);
        for i in 0..100 {
            bank.step(&cfg, &InputSegment::constant(i as f64 * 0.01, 0.01, 0.0, 0.0)).unwrap();
        }
        assert_eq!(bank, FilterBank::for_config(&cfg));
    }

    #[test]
    fn constant_output_matches_matrix_exponential() {
        let cfg = demo_cfg(1e9);
        let mut bank = FilterBank::for_config(&cfg);
        let (dt, steps) = (1e-3, 2000);
        for i in 0..steps {
            bank.step(&cfg, &InputSegment::constant(i as f64 * dt, dt, 1.0, 0.0)).unwrap();
        }
        let t = dt * steps as f64;
        // z(t) = (e^{A_K t} - I) A_K^{-1} K
        let a_inv = cfg.a_k.clone().try_inverse().unwrap();
        let n = cfg.n();
        let exact = ((&cfg.a_k * t).exp() - DMatrix::identity(n, n)) * a_inv * &cfg.k_obs;
        assert_relative_eq!(bank.z, exact, epsilon = 1e-9);
        // first-order lag of a unit step
        assert_relative_eq!(bank.y_f, (1.0 - (-cfg.k1 * t).exp()) / cfg.k1, epsilon = 1e-12);
    }

    #[test]
    fn extension_with_constant_drive_matches_closed_form() {
        let cfg = demo_cfg(0.0);
        let mut bank = FilterBank::for_config(&cfg);
        let c = DVector::from_vec(vec![1.0, -2.0, 0.5, 0.0, 3.0, 1.0]);
        bank.phi_bar_f = c.clone();
        let (dt, steps) = (1e-3, 1500);
        for i in 0..steps {
            bank.step_extension(&cfg, 0.0, i as f64 * dt, dt).unwrap();
        }
        let t = dt * steps as f64;
        // double integral of exp(-tau) from 0: t - 1 + exp(-t)
        let scale = t - 1.0 + (-t).exp();
        let exact = &c * c.transpose() * scale;
        assert_relative_eq!(bank.phi, exact, epsilon = 1e-10);
    }

    #[test]
    fn identity_mixing_is_trivial() {
        let mut bank = FilterBank::zeros(3, 2);
        bank.phi = DMatrix::identity(6, 6);
        bank.q = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let lre = mix(&bank, 1.0);
        assert_relative_eq!(lre.m, 1.0, epsilon = 1e-14);
        assert_relative_eq!(lre.y, bank.q, epsilon = 1e-14);
    }

    #[test]
    fn no_disturbance_pair_reduces_to_classic_form() {
        let mut cfg = demo_cfg(25.0);
        cfg.beta = DVector::zeros(2);
        let bank = FilterBank::zeros(3, 2);
        let (q, phi) = bank.regression_pair(&cfg, 0.0, 0.0);
        assert_eq!(q, 0.0);
        assert!(phi.iter().all(|&v| v == 0.0));
    }
}
