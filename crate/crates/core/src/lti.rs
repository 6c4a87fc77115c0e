//! Plant, exosystem and extended-system assembly, the regressor `Phi^T(x_e, u)`
//! and the observer canonical form.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// A parametrized single-output plant `x' = A(theta) x + B(theta) u + D(theta) delta`,
/// `y = C^T x`, together with its lifting `Theta_AB(theta)` in which `A`, `B`, `D`
/// are linear.
pub trait PlantModel: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;
    fn n(&self) -> usize;
    fn n_theta(&self) -> usize;
    fn n_lifted(&self) -> usize;

    fn a(&self, theta: &DVector<f64>) -> DMatrix<f64>;
    fn b(&self, theta: &DVector<f64>) -> DVector<f64>;
    fn d(&self, theta: &DVector<f64>) -> DVector<f64>;
    fn c(&self) -> DVector<f64>;

    /// `Theta_AB(theta)`.
    fn lifted(&self, theta: &DVector<f64>) -> DVector<f64>;

    /// `A` as a linear function of the lifted vector.
    fn a_lin(&self, big_theta: &DVector<f64>) -> DMatrix<f64>;
    fn b_lin(&self, big_theta: &DVector<f64>) -> DVector<f64>;
    fn d_lin(&self, big_theta: &DVector<f64>) -> DVector<f64>;

    /// Positions of the identifiable subvector `psi_ab` inside `eta = (psi_a; psi_b)`.
    fn psi_ab_indices(&self) -> Vec<usize>;
}

/// The disturbance generator `x_delta' = A_delta x_delta`, `delta = h^T x_delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExosystemSpec {
    pub a_cal: DMatrix<f64>,
    pub h: DVector<f64>,
}

impl ExosystemSpec {
    pub fn new(a_cal: DMatrix<f64>, h: DVector<f64>) -> Result<Self> {
        if !a_cal.is_square() || a_cal.nrows() != h.len() || h.is_empty() {
            return Err(Error::Dimension { what: "exosystem h_delta", expected: a_cal.nrows(), got: h.len() });
        }
        if !linalg::is_observable(&h, &a_cal) {
            return Err(Error::NotObservable("exosystem pair (h_delta^T, A_delta) is not observable".into()));
        }
        if linalg::max_real_part(&a_cal) > 1e-9 {
            return Err(crate::error::config("exosystem has an eigenvalue with positive real part"));
        }
        Ok(Self { a_cal, h })
    }

    pub fn n_delta(&self) -> usize {
        self.h.len()
    }

    /// `h_bar = A_delta^T h`.
    pub fn h_bar(&self) -> DVector<f64> {
        self.a_cal.transpose() * &self.h
    }

    /// `blkdiag(0_{n x n}, A_delta)`.
    pub fn embed(&self, n: usize) -> DMatrix<f64> {
        let nd = self.n_delta();
        let mut out = DMatrix::zeros(n + nd, n + nd);
        out.view_mut((n, n), (nd, nd)).copy_from(&self.a_cal);
        out
    }
}

/// Numeric description of a plant and its regressor factorization.
///
/// `d_phi` maps the lifted vector to `[vec(A_e^T); B_e]` (column-stacking `vec`),
/// `l_at` and `l_b` split that stack, `l_phi` is a left inverse of `d_phi`, and
/// `l_ab` selects `psi_ab` from `eta`.
#[derive(Debug, Clone)]
pub struct SystemSpec {
    pub model: Arc<dyn PlantModel>,
    pub n: usize,
    pub n_theta: usize,
    pub n_lifted: usize,
    pub n_delta: usize,
    pub n_e: usize,
    pub c: DVector<f64>,
    pub h_delta: DVector<f64>,
    pub d_phi: DMatrix<f64>,
    pub l_phi: DMatrix<f64>,
    pub l_at: DMatrix<f64>,
    pub l_b: DMatrix<f64>,
    pub l_ab: DMatrix<f64>,
}

impl SystemSpec {
    pub fn new(model: Arc<dyn PlantModel>, exo: &ExosystemSpec) -> Result<Self> {
        let (n, n_theta, n_lifted) = (model.n(), model.n_theta(), model.n_lifted());
        let n_delta = exo.n_delta();
        let n_e = n + n_delta;
        if n_lifted < n_theta {
            return Err(crate::error::config(format!(
                "lifted dimension {n_lifted} is smaller than the physical parameter count {n_theta}"
            )));
        }
        let c = model.c();
        if c.len() != n {
            return Err(Error::Dimension { what: "output vector C", expected: n, got: c.len() });
        }

        let rows = n_e * (n_e + 1);
        let mut d_phi = DMatrix::zeros(rows, n_lifted);
        for j in 0..n_lifted {
            let mut e = DVector::zeros(n_lifted);
            e[j] = 1.0;
            let a_e = assemble_a_e(&model.a_lin(&e), &model.d_lin(&e), &exo.h);
            let b = model.b_lin(&e);
            let vec_at = linalg::vec_cols(&a_e.transpose());
            d_phi.view_mut((0, j), (n_e * n_e, 1)).copy_from(&vec_at);
            d_phi.view_mut((n_e * n_e, j), (n, 1)).copy_from(&b);
        }
        if linalg::rank(&d_phi, linalg::RANK_RTOL) != n_lifted {
            return Err(crate::error::config("regressor map D_Phi is not of full column rank"));
        }
        let l_phi = d_phi
            .clone()
            .pseudo_inverse(1e-12)
            .map_err(|e| Error::Inconsistent(format!("pseudo-inverse of D_Phi: {e}")))?;

        let mut l_at = DMatrix::zeros(n_e * n_e, rows);
        l_at.view_mut((0, 0), (n_e * n_e, n_e * n_e)).fill_with_identity();
        let mut l_b = DMatrix::zeros(n_e, rows);
        l_b.view_mut((0, n_e * n_e), (n_e, n_e)).fill_with_identity();

        let idx = model.psi_ab_indices();
        if idx.len() != n_theta || idx.iter().any(|&i| i >= 2 * n) {
            return Err(crate::error::config("psi_ab selection must pick n_theta entries of eta"));
        }
        let mut l_ab = DMatrix::zeros(n_theta, 2 * n);
        for (r, &i) in idx.iter().enumerate() {
            l_ab[(r, i)] = 1.0;
        }

        Ok(Self { model, n, n_theta, n_lifted, n_delta, n_e, c, h_delta: exo.h.clone(), d_phi, l_phi, l_at, l_b, l_ab })
    }

    pub fn theta_ab(&self, theta: &DVector<f64>) -> DVector<f64> {
        self.model.lifted(theta)
    }

    /// `A_e` recovered from a lifted vector via `vec^{-1}(L_AT D_Phi Theta)^T`.
    pub fn a_e_of_lifted(&self, big_theta: &DVector<f64>) -> DMatrix<f64> {
        let v = &self.l_at * (&self.d_phi * big_theta);
        linalg::unvec(v.as_slice(), self.n_e, self.n_e).transpose()
    }

    pub fn b_e_of_lifted(&self, big_theta: &DVector<f64>) -> DVector<f64> {
        &self.l_b * (&self.d_phi * big_theta)
    }

    pub fn c_e(&self) -> DVector<f64> {
        let mut c_e = DVector::zeros(self.n_e);
        c_e.rows_mut(0, self.n).copy_from(&self.c);
        c_e
    }

    fn check_theta(&self, theta: &DVector<f64>) -> Result<()> {
        if theta.len() != self.n_theta {
            return Err(Error::Dimension { what: "theta", expected: self.n_theta, got: theta.len() });
        }
        Ok(())
    }
}

fn assemble_a_e(a: &DMatrix<f64>, d: &DVector<f64>, h: &DVector<f64>) -> DMatrix<f64> {
    let (n, nd) = (a.nrows(), h.len());
    let mut a_e = DMatrix::zeros(n + nd, n + nd);
    a_e.view_mut((0, 0), (n, n)).copy_from(a);
    a_e.view_mut((0, n), (n, nd)).copy_from(&(d * h.transpose()));
    a_e
}

/// The plant augmented with the exosystem state, `x_e = (x; x_delta)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedSystem {
    pub n: usize,
    pub n_delta: usize,
    pub n_e: usize,
    pub theta: DVector<f64>,
    pub a_e: DMatrix<f64>,
    pub a_delta: DMatrix<f64>,
    pub b_e: DVector<f64>,
    pub c_e: DVector<f64>,
    pub theta_ab: DVector<f64>,
}

impl ExtendedSystem {
    /// `A_e + A_delta`, the full autonomous dynamics matrix.
    pub fn a_total(&self) -> DMatrix<f64> {
        &self.a_e + &self.a_delta
    }

    pub fn rhs(&self, x_e: &DVector<f64>, u: f64) -> DVector<f64> {
        &self.a_e * x_e + &self.a_delta * x_e + &self.b_e * u
    }

    pub fn output(&self, x_e: &DVector<f64>) -> f64 {
        self.c_e.dot(x_e)
    }
}

pub fn build_extended(spec: &SystemSpec, exo: &ExosystemSpec, theta: &DVector<f64>) -> Result<ExtendedSystem> {
    spec.check_theta(theta)?;
    if exo.n_delta() != spec.n_delta {
        return Err(Error::Dimension { what: "exosystem dimension", expected: spec.n_delta, got: exo.n_delta() });
    }
    let m = &spec.model;
    let a = m.a(theta);
    if !linalg::is_observable(&spec.c, &a) {
        return Err(Error::NotObservable(format!("system not observable at theta = {:?}", theta.as_slice())));
    }
    let a_e = assemble_a_e(&a, &m.d(theta), &exo.h);
    let mut b_e = DVector::zeros(spec.n_e);
    b_e.rows_mut(0, spec.n).copy_from(&m.b(theta));
    Ok(ExtendedSystem {
        n: spec.n,
        n_delta: spec.n_delta,
        n_e: spec.n_e,
        theta: theta.clone(),
        a_e,
        a_delta: exo.embed(spec.n),
        b_e,
        c_e: spec.c_e(),
        theta_ab: spec.theta_ab(theta),
    })
}

/// `Phi^T(x_e, u) = [I (x) x_e^T, I (x) u] D_Phi`, an `n_e x n_Theta` matrix.
pub fn regressor_phi(x_e: &DVector<f64>, u: f64, spec: &SystemSpec) -> DMatrix<f64> {
    let ne = spec.n_e;
    let mut out = DMatrix::zeros(ne, spec.n_lifted);
    for i in 0..ne {
        let mut row = spec.d_phi.row(ne * ne + i) * u;
        for k in 0..ne {
            if x_e[k] != 0.0 {
                row += spec.d_phi.row(i * ne + k) * x_e[k];
            }
        }
        out.set_row(i, &row);
    }
    out
}

/// Observer canonical form `T A T^{-1} = A_0 + psi_a C_0^T`, `T B = psi_b`, `T D = psi_d`.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalForm {
    pub psi_a: DVector<f64>,
    pub psi_b: DVector<f64>,
    pub psi_d: DVector<f64>,
    pub t: DMatrix<f64>,
    pub t_inv: DMatrix<f64>,
    pub c0: DVector<f64>,
    pub a0: DMatrix<f64>,
}

impl CanonicalForm {
    /// `eta = (psi_a; psi_b)`.
    pub fn eta(&self) -> DVector<f64> {
        let n = self.psi_a.len();
        let mut eta = DVector::zeros(2 * n);
        eta.rows_mut(0, n).copy_from(&self.psi_a);
        eta.rows_mut(n, n).copy_from(&self.psi_b);
        eta
    }
}

/// Upper shift matrix: ones on the first superdiagonal.
pub fn shift_matrix(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| if j == i + 1 { 1.0 } else { 0.0 })
}

pub fn unit_vector(n: usize, i: usize) -> DVector<f64> {
    let mut e = DVector::zeros(n);
    e[i] = 1.0;
    e
}

pub fn canonical_transform(spec: &SystemSpec, theta: &DVector<f64>) -> Result<CanonicalForm> {
    spec.check_theta(theta)?;
    let n = spec.n;
    let m = &spec.model;
    let a = m.a(theta);
    let obs = linalg::observability_matrix(&spec.c, &a);
    let not_obs = || Error::NotObservable(format!("system not observable at theta = {:?}", theta.as_slice()));
    if linalg::rank(&obs, linalg::RANK_RTOL) < n {
        return Err(not_obs());
    }
    let obs_inv = obs.try_inverse().ok_or_else(not_obs)?;
    let o_n = obs_inv.column(n - 1).into_owned();

    let mut t_inv = DMatrix::zeros(n, n);
    let mut col = o_n;
    for j in (0..n).rev() {
        t_inv.set_column(j, &col);
        col = &a * col;
    }
    let t = t_inv.clone().try_inverse().ok_or_else(not_obs)?;

    let c0 = (spec.c.transpose() * &t_inv).transpose();
    let a_canon = &t * &a * &t_inv;
    Ok(CanonicalForm {
        psi_a: a_canon.column(0).into_owned(),
        psi_b: &t * m.b(theta),
        psi_d: &t * m.d(theta),
        t,
        t_inv,
        c0,
        a0: shift_matrix(n),
    })
}

/// `psi_ab(theta) = L_ab eta(theta)`.
pub fn psi_ab(spec: &SystemSpec, theta: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(&spec.l_ab * canonical_transform(spec, theta)?.eta())
}

/// Central-difference Jacobian of `psi_ab` with respect to `theta`.
pub fn psi_ab_jacobian(spec: &SystemSpec, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
    let k = spec.n_theta;
    let mut jac = DMatrix::zeros(k, k);
    for j in 0..k {
        let h = 1e-6 * theta[j].abs().max(1.0);
        let mut tp = theta.clone();
        let mut tm = theta.clone();
        tp[j] += h;
        tm[j] -= h;
        let d = (psi_ab(spec, &tp)? - psi_ab(spec, &tm)?) / (2.0 * h);
        jac.set_column(j, &d);
    }
    Ok(jac)
}

/// Smallest eigenvalue of the trapezoidal Gram integral `int phi phi^T dt`
/// over the samples falling inside `[t_start, t_end]`.
pub fn excitation_level(times: &[f64], series: &[DVector<f64>], t_start: f64, t_end: f64) -> Result<f64> {
    if times.len() != series.len() {
        return Err(Error::Dimension { what: "excitation series", expected: times.len(), got: series.len() });
    }
    if !(t_end > t_start) {
        return Err(Error::EmptyWindow);
    }
    let idx: Vec<usize> = (0..times.len()).filter(|&i| times[i] >= t_start && times[i] <= t_end).collect();
    if idx.len() < 2 {
        return Err(Error::EmptyWindow);
    }
    let dim = series[idx[0]].len();
    let mut gram = DMatrix::zeros(dim, dim);
    for w in idx.windows(2) {
        let (i, j) = (w[0], w[1]);
        let h = times[j] - times[i];
        let outer_i = &series[i] * series[i].transpose();
        let outer_j = &series[j] * series[j].transpose();
        gram += (outer_i + outer_j) * (0.5 * h);
    }
    Ok(linalg::sym_min_eigenvalue(&gram))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demo;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn excitation_of_rotating_vector() {
        let n = 4001;
        let times: Vec<f64> = (0..n).map(|i| 2.0 * PI * i as f64 / (n - 1) as f64).collect();
        let series: Vec<_> = times.iter().map(|&t| DVector::from_vec(vec![t.cos(), t.sin()])).collect();
        let alpha = excitation_level(&times, &series, 0.0, 2.0 * PI).unwrap();
        assert_relative_eq!(alpha, PI, epsilon = 1e-6);
    }

    #[test]
    fn excitation_of_constant_direction_is_zero() {
        let times: Vec<f64> = (0..11).map(|i| i as f64 / 10.0).collect();
        let series: Vec<_> = times.iter().map(|_| DVector::from_vec(vec![1.0, 0.0, 0.0])).collect();
        assert!(excitation_level(&times, &series, 0.0, 1.0).unwrap().abs() < 1e-15);
        assert!(matches!(excitation_level(&times, &series, 2.0, 3.0), Err(Error::EmptyWindow)));
    }

    #[test]
    fn identity_transform_for_canonical_plant() {
        #[derive(Debug)]
        struct Canon;
        impl PlantModel for Canon {
            fn name(&self) -> &'static str {
                "canon"
            }
            fn n(&self) -> usize {
                2
            }
            fn n_theta(&self) -> usize {
                2
            }
            fn n_lifted(&self) -> usize {
                2
            }
            fn a(&self, t: &DVector<f64>) -> DMatrix<f64> {
                DMatrix::from_row_slice(2, 2, &[t[0], 1.0, t[1], 0.0])
            }
            fn b(&self, _: &DVector<f64>) -> DVector<f64> {
                DVector::from_vec(vec![0.0, 1.0])
            }
            fn d(&self, _: &DVector<f64>) -> DVector<f64> {
                DVector::zeros(2)
            }
            fn c(&self) -> DVector<f64> {
                DVector::from_vec(vec![1.0, 0.0])
            }
            fn lifted(&self, t: &DVector<f64>) -> DVector<f64> {
                t.clone()
            }
            fn a_lin(&self, t: &DVector<f64>) -> DMatrix<f64> {
                DMatrix::from_row_slice(2, 2, &[t[0], 0.0, t[1], 0.0])
            }
            fn b_lin(&self, _: &DVector<f64>) -> DVector<f64> {
                DVector::zeros(2)
            }
            fn d_lin(&self, _: &DVector<f64>) -> DVector<f64> {
                DVector::zeros(2)
            }
            fn psi_ab_indices(&self) -> Vec<usize> {
                vec![0, 1]
            }
        }
        let spec = SystemSpec::new(Arc::new(Canon), &demo::exosystem()).unwrap();
        let theta = DVector::from_vec(vec![-2.0, -3.0]);
        let cf = canonical_transform(&spec, &theta).unwrap();
        let t_inv = cf.t_inv;
        assert_relative_eq!(t_inv, DMatrix::identity(2, 2), epsilon = 1e-14);
    }
}
