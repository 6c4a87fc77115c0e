//! The estimation chain `eta -> psi_ab -> theta -> Theta_AB -> L -> kappa`,
//! including the Sylvester-based observer gain and its division-free LRE.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hetero::{lre_to_lifted, lre_to_theta, HeteroMapping, Lre, Target};
use crate::linalg;
use crate::lti::{ExosystemSpec, ExtendedSystem, SystemSpec};

/// Companion matrix whose characteristic polynomial is `(s - root)^n`:
/// ones on the superdiagonal, negated coefficients in the last row.
pub fn gamma_companion(root: f64, n: usize) -> DMatrix<f64> {
    let c = linalg::repeated_root_poly(root, n);
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n.saturating_sub(1) {
        g[(i, i + 1)] = 1.0;
    }
    for j in 0..n {
        g[(n - 1, j)] = -c[n - j];
    }
    g
}

/// Upper Jordan block with eigenvalue `root`.
pub fn gamma_jordan(root: f64, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            root
        } else if j == i + 1 {
            1.0
        } else {
            0.0
        }
    })
}

/// Data of the gain equations `A_bar M - M Gamma = C_e B_e^T`, `B_e = M^T L`,
/// with `A_bar = A_e^T + A_delta^T`.
#[derive(Debug, Clone)]
pub struct GainProblem {
    pub n_e: usize,
    pub n_lifted: usize,
    pub gamma: DMatrix<f64>,
    pub a_delta: DMatrix<f64>,
    pub c_e: DVector<f64>,
    /// `L_AT D_Phi`: lifted vector to `vec(A_e^T)`.
    pub at_of_lifted: DMatrix<f64>,
    /// `L_B D_Phi`: lifted vector to `B_e`.
    pub b_of_lifted: DMatrix<f64>,
}

/// Exact gain and the Sylvester solution it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSolution {
    pub l: DVector<f64>,
    pub m: DMatrix<f64>,
}

impl GainProblem {
    pub fn new(spec: &SystemSpec, exo: &ExosystemSpec, gamma: DMatrix<f64>) -> Result<Self> {
        let n_e = spec.n_e;
        if gamma.nrows() != n_e || !gamma.is_square() {
            return Err(Error::Dimension { what: "Gamma", expected: n_e, got: gamma.nrows() });
        }
        Ok(Self {
            n_e,
            n_lifted: spec.n_lifted,
            gamma,
            a_delta: exo.embed(spec.n),
            c_e: spec.c_e(),
            at_of_lifted: &spec.l_at * &spec.d_phi,
            b_of_lifted: &spec.l_b * &spec.d_phi,
        })
    }

    /// Checks disjoint spectra of `A_bar` and `Gamma` and observability of `(B_e^T, Gamma)`.
    pub fn validate(&self, ext: &ExtendedSystem) -> Result<()> {
        let a_bar = ext.a_total().transpose();
        let gap = linalg::spectral_gap(&a_bar, &self.gamma);
        if gap < 1e-6 * (1.0 + a_bar.norm()) {
            return Err(Error::PolePlacementInfeasible(format!(
                "spectra of A_e^T + A_delta^T and Gamma intersect (gap {gap:.3e})"
            )));
        }
        if !linalg::is_observable(&ext.b_e, &self.gamma) {
            return Err(Error::NotObservable("pair (B_e^T, Gamma) is not observable".into()));
        }
        Ok(())
    }

    /// `theta_ext = [Theta_AB; vec Gamma; vec A_delta]`, the argument of the gain maps.
    pub fn extended_argument(&self, lifted: &DVector<f64>) -> DVector<f64> {
        let mut v = Vec::with_capacity(self.n_lifted + 2 * self.n_e * self.n_e);
        v.extend_from_slice(lifted.as_slice());
        v.extend_from_slice(self.gamma.as_slice());
        v.extend_from_slice(self.a_delta.as_slice());
        DVector::from_vec(v)
    }

    fn split<'a>(&self, v: &'a DVector<f64>) -> (DVector<f64>, &'a [f64], &'a [f64]) {
        let (nl, n2) = (self.n_lifted, self.n_e * self.n_e);
        let s = v.as_slice();
        (DVector::from_column_slice(&s[..nl]), &s[nl..nl + n2], &s[nl + n2..nl + 2 * n2])
    }

    /// `K = I (x) A_bar - Gamma^T (x) I` and `B_e` built from a (scaled) argument.
    pub fn kron_operator(&self, v: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let ne = self.n_e;
        let (lifted, vg, vd) = self.split(v);
        let a_t = linalg::unvec((&self.at_of_lifted * &lifted).as_slice(), ne, ne);
        let a_bar = a_t + linalg::unvec(vd, ne, ne).transpose();
        let gamma_t = linalg::unvec(vg, ne, ne).transpose();
        let id = DMatrix::<f64>::identity(ne, ne);
        let k = linalg::kron(&id, &a_bar) - linalg::kron(&gamma_t, &id);
        (k, &self.b_of_lifted * lifted)
    }

    /// `N + 1` with `N = n_e^2`: the power of the regressor in `Pi_L`.
    pub fn pi_exponent(&self) -> i32 {
        (self.n_e * self.n_e + 1) as i32
    }
}

/// Solves the gain equations directly for a known system.
pub fn gain_direct(ext: &ExtendedSystem, prob: &GainProblem) -> Result<GainSolution> {
    let a_bar = ext.a_total().transpose();
    let rhs = &prob.c_e * ext.b_e.transpose();
    let m = linalg::solve_sylvester(&a_bar, &(-&prob.gamma), &rhs).map_err(|e| match e {
        Error::SylvesterSingular => Error::PolePlacementInfeasible("spectra of A_bar and Gamma intersect".into()),
        other => other,
    })?;
    if linalg::rank(&m, 1e-12) < prob.n_e {
        return Err(Error::PolePlacementInfeasible("Sylvester solution M is singular".into()));
    }
    let l = m
        .transpose()
        .lu()
        .solve(&ext.b_e)
        .ok_or_else(|| Error::PolePlacementInfeasible("Sylvester solution M is singular".into()))?;
    Ok(GainSolution { l, m })
}

/// `A_m = A_e + A_delta - L C_e^T`.
pub fn closed_loop(ext: &ExtendedSystem, l: &DVector<f64>) -> DMatrix<f64> {
    ext.a_total() - l * ext.c_e.transpose()
}

fn kron_pi(prob: &GainProblem, w: f64) -> DMatrix<f64> {
    DMatrix::identity(prob.n_e, prob.n_e) * w.powi(prob.pi_exponent())
}

/// `T_P(w, v) = vec^{-1}{ w adj(K_v) vec(C_e B_v^T) }^T`.
#[derive(Debug, Clone, Copy)]
pub struct PMap<'a>(pub &'a GainProblem);

/// `T_Q(w, v) = det(K_v) B_v`.
#[derive(Debug, Clone, Copy)]
pub struct QMap<'a>(pub &'a GainProblem);

fn p_from_parts(prob: &GainProblem, w: f64, adj_k: &DMatrix<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    let ne = prob.n_e;
    let rhs = linalg::vec_cols(&(&prob.c_e * b.transpose()));
    let v = adj_k * rhs * w;
    linalg::unvec(v.as_slice(), ne, ne).transpose()
}

impl HeteroMapping for PMap<'_> {
    fn name(&self) -> &str {
        "T_P"
    }
    fn degree(&self) -> u32 {
        (self.0.pi_exponent() as u32) * self.0.n_e as u32
    }
    fn input_dim(&self) -> usize {
        self.0.n_lifted + 2 * self.0.n_e * self.0.n_e
    }
    fn pi(&self, w: f64) -> DMatrix<f64> {
        kron_pi(self.0, w)
    }
    fn apply(&self, w: f64, v: &DVector<f64>) -> DMatrix<f64> {
        let (k, b) = self.0.kron_operator(v);
        p_from_parts(self.0, w, &linalg::adjugate(&k), &b)
    }
    fn reference(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.apply(1.0, x)
    }
}

impl HeteroMapping for QMap<'_> {
    fn name(&self) -> &str {
        "T_Q"
    }
    fn degree(&self) -> u32 {
        (self.0.pi_exponent() as u32) * self.0.n_e as u32
    }
    fn input_dim(&self) -> usize {
        self.0.n_lifted + 2 * self.0.n_e * self.0.n_e
    }
    fn pi(&self, w: f64) -> DMatrix<f64> {
        kron_pi(self.0, w)
    }
    fn apply(&self, _w: f64, v: &DVector<f64>) -> DMatrix<f64> {
        let (k, b) = self.0.kron_operator(v);
        let col = b * linalg::determinant(&k);
        DMatrix::from_column_slice(col.len(), 1, col.as_slice())
    }
    fn reference(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.apply(1.0, x)
    }
}

/// Gain LRE with the coherence residuals of the two adjugates it used.
#[derive(Debug, Clone)]
pub struct GainLre {
    pub lre: Lre,
    pub adj_residual: f64,
}

/// `Theta_AB`-LRE to `L`-LRE: `Y_L = adj{T_P} T_Q`, `M_L = det{T_P}`.
pub fn gain_lre(ab: &Lre, prob: &GainProblem) -> GainLre {
    let w = ab.m;
    let mut v = Vec::with_capacity(prob.n_lifted + 2 * prob.n_e * prob.n_e);
    v.extend_from_slice(ab.y.as_slice());
    v.extend(prob.gamma.iter().map(|g| g * w));
    v.extend(prob.a_delta.iter().map(|a| a * w));
    let v = DVector::from_vec(v);

    let (k, b) = prob.kron_operator(&v);
    let (det_k, adj_k) = linalg::det_adjugate(&k);
    let res_k = linalg::adjugate_residual(&k, &adj_k, det_k);
    // A common positive factor on (T_P, T_Q) leaves Y_L / M_L and sign M_L
    // unchanged; it keeps det T_P inside the floating-point range.
    let tp = p_from_parts(prob, w, &adj_k, &b);
    let tq = b * det_k;
    let scale = tp.amax().max(tq.amax());
    let (tp, tq) = if scale > 0.0 && scale.is_finite() { (tp / scale, tq / scale) } else { (tp, tq) };
    let (det_p, adj_p) = linalg::det_adjugate(&tp);
    let residual = res_k.max(linalg::adjugate_residual(&tp, &adj_p, det_p));
    GainLre { lre: Lre::new(adj_p * tq, det_p, Target::Gain), adj_residual: residual }
}

/// Stacks `Theta_AB`- and `L`-LREs into `Y_k = M_k (Theta_AB; L)` with
/// `M_k = M_AB^{n_Theta} M_L^{n_e}`.
pub fn stack_kappa(ab: &Lre, gl: &Lre) -> Lre {
    let (na, nl) = (ab.y.len() as i32, gl.y.len() as i32);
    let (ma, ml) = (ab.m, gl.m);
    let top = &ab.y * (ma.powi(na - 1) * ml.powi(nl));
    let bottom = &gl.y * (ma.powi(na) * ml.powi(nl - 1));
    let mut y = DVector::zeros((na + nl) as usize);
    y.rows_mut(0, na as usize).copy_from(&top);
    y.rows_mut(na as usize, nl as usize).copy_from(&bottom);
    Lre::new(y, ma.powi(na) * ml.powi(nl), Target::Kappa)
}

/// Normalized stage outputs of one chain evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSnapshot {
    /// Unnormalized `Delta`.
    pub raw_delta: f64,
    pub eta: Lre,
    pub theta: Lre,
    pub lifted: Lre,
    pub gain: Lre,
    pub kappa: Lre,
    /// Largest adjugate coherence residual met in the gain stage.
    pub adj_residual: f64,
}

/// The chain's mappings and gain problem for one system.
pub struct LreChain<'a> {
    pub spec: &'a SystemSpec,
    pub gain: &'a GainProblem,
    pub s_map: &'a dyn HeteroMapping,
    pub g_map: &'a dyn HeteroMapping,
    pub lift_map: &'a dyn HeteroMapping,
}

impl LreChain<'_> {
    /// Threads an `eta`-LRE through every stage, normalizing between stages.
    pub fn evaluate(&self, eta: &Lre) -> ChainSnapshot {
        let raw_delta = eta.m;
        let (eta_n, _) = eta.normalized();
        let ab = eta_n.select(&self.spec.l_ab, Target::PsiAb);
        let (theta, _) = lre_to_theta(&ab, self.s_map, self.g_map).normalized();
        let (lifted, _) = lre_to_lifted(&theta, self.lift_map).normalized();
        let g = gain_lre(&lifted, self.gain);
        let (gain, _) = g.lre.normalized();
        let (kappa, _) = stack_kappa(&lifted, &gain).normalized();
        ChainSnapshot { raw_delta, eta: eta_n, theta, lifted, gain, kappa, adj_residual: g.adj_residual }
    }
}

/// Positivity and sign-consistency of the chain regressors after `t_e`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginReport {
    pub t_e: f64,
    pub samples: usize,
    pub min_delta: f64,
    pub min_m_lifted: f64,
    pub min_m_gain: f64,
    pub min_m_kappa: f64,
    pub sign_changes: usize,
    pub first_violation: Option<(f64, String)>,
}

impl MarginReport {
    pub fn passed(&self) -> bool {
        self.samples > 0 && self.first_violation.is_none()
    }
}

/// Streaming accumulator behind [`check_margins`].
#[derive(Debug, Clone)]
pub struct MarginTracker {
    report: MarginReport,
    signs: Option<[f64; 4]>,
}

impl MarginTracker {
    pub fn new(t_e: f64) -> Self {
        Self {
            report: MarginReport {
                t_e,
                samples: 0,
                min_delta: f64::INFINITY,
                min_m_lifted: f64::INFINITY,
                min_m_gain: f64::INFINITY,
                min_m_kappa: f64::INFINITY,
                sign_changes: 0,
                first_violation: None,
            },
            signs: None,
        }
    }

    pub fn observe(&mut self, t: f64, s: &ChainSnapshot) {
        if t < self.report.t_e {
            return;
        }
        let r = &mut self.report;
        r.samples += 1;
        let vals = [s.raw_delta, s.lifted.m, s.gain.m, s.kappa.m];
        r.min_delta = r.min_delta.min(vals[0]);
        r.min_m_lifted = r.min_m_lifted.min(vals[1].abs());
        r.min_m_gain = r.min_m_gain.min(vals[2].abs());
        r.min_m_kappa = r.min_m_kappa.min(vals[3].abs());

        let names = ["Delta", "M_AB", "M_L", "M_kappa"];
        let mut violation = None;
        if !(vals[0] > 0.0) {
            violation = Some(format!("Delta = {:.3e} is not positive (not FE)", vals[0]));
        }
        for (i, v) in vals.iter().enumerate().skip(1) {
            if violation.is_none() && !(v.abs() > 0.0 && v.is_finite()) {
                violation = Some(format!("{} vanished", names[i]));
            }
        }
        let signs = vals.map(f64::signum);
        if let Some(prev) = self.signs {
            for i in 0..4 {
                if prev[i] != signs[i] {
                    r.sign_changes += 1;
                    if violation.is_none() {
                        violation = Some(format!("{} changed sign", names[i]));
                    }
                }
            }
        }
        self.signs = Some(signs);
        if r.first_violation.is_none() {
            if let Some(msg) = violation {
                r.first_violation = Some((t, msg));
            }
        }
    }

    pub fn report(&self) -> MarginReport {
        self.report.clone()
    }
}

pub fn check_margins<'a, I>(snapshots: I, t_e: f64) -> MarginReport
where
    I: IntoIterator<Item = (f64, &'a ChainSnapshot)>,
{
    let mut tracker = MarginTracker::new(t_e);
    for (t, s) in snapshots {
        tracker.observe(t, s);
    }
    tracker.report()
}
