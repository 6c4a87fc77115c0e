//! Heterogeneous mappings `Pi(w) F(x) = T(Xi(w) x)` and the linear regression
//! equations (LREs) they transform without division.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::linalg;

/// Which unknown an [`Lre`] is about.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Eta,
    PsiAb,
    Theta,
    Lifted,
    Gain,
    Kappa,
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Target::Eta => "eta",
            Target::PsiAb => "psi_ab",
            Target::Theta => "theta",
            Target::Lifted => "Theta_AB",
            Target::Gain => "L",
            Target::Kappa => "kappa",
        };
        f.write_str(s)
    }
}

/// A linear regression equation `y = m * p` for an unknown vector `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lre {
    pub y: DVector<f64>,
    pub m: f64,
    pub target: Target,
}

impl Lre {
    pub fn new(y: DVector<f64>, m: f64, target: Target) -> Self {
        Self { y, m, target }
    }

    /// Jointly rescales `(y, m)` so that `max(|m|, |y|_inf) = 1`.
    ///
    /// Returns the rescaled equation and the divisor used. A zero pair is
    /// returned unchanged with divisor 1.
    pub fn normalized(&self) -> (Lre, f64) {
        let s = self.m.abs().max(self.y.amax());
        if s == 0.0 || !s.is_finite() {
            return (self.clone(), 1.0);
        }
        (Lre { y: &self.y / s, m: self.m / s, target: self.target }, s)
    }

    /// `y / m`, or `None` when `m = 0`.
    pub fn ratio(&self) -> Option<DVector<f64>> {
        (self.m != 0.0).then(|| &self.y / self.m)
    }

    /// Applies a selection matrix to `y`, keeping `m`.
    pub fn select(&self, l: &DMatrix<f64>, target: Target) -> Lre {
        Lre { y: l * &self.y, m: self.m, target }
    }

    pub fn is_finite(&self) -> bool {
        self.m.is_finite() && self.y.iter().all(|v| v.is_finite())
    }
}

/// A mapping `F` together with `(Pi, Xi_bar, T)` such that
/// `Pi(w) F(x) = T(w, Xi_bar(w) w x)`.
///
/// `T` receives the scalar `w` as well, which lets it weight terms that the
/// transformed argument alone cannot express.
pub trait HeteroMapping: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    /// `l` with `det Pi(w) >= w^l`.
    fn degree(&self) -> u32;
    fn input_dim(&self) -> usize;
    fn pi(&self, omega: f64) -> DMatrix<f64>;
    fn xi_bar(&self, _omega: f64) -> DMatrix<f64> {
        DMatrix::identity(self.input_dim(), self.input_dim())
    }
    /// `T(w, v)`.
    fn apply(&self, omega: f64, v: &DVector<f64>) -> DMatrix<f64>;
    /// `F(x)`.
    fn reference(&self, x: &DVector<f64>) -> DMatrix<f64>;

    /// `T` evaluated on a regressand `y = w x`, i.e. `T(w, Xi_bar(w) y)`.
    fn apply_lre(&self, omega: f64, y: &DVector<f64>) -> DMatrix<f64> {
        self.apply(omega, &(self.xi_bar(omega) * y))
    }
}

/// Relative residual `|Pi(w) F(x) - T(w, Xi(w) x)| / |Pi(w) F(x)|`.
///
/// Falls back to the absolute residual when the left side vanishes.
pub fn verify_heterogeneity(map: &dyn HeteroMapping, omega: f64, x: &DVector<f64>) -> f64 {
    let lhs = map.pi(omega) * map.reference(x);
    let rhs = map.apply(omega, &(map.xi_bar(omega) * x * omega));
    let r = (&lhs - rhs).norm();
    let s = lhs.norm();
    if s > 0.0 {
        r / s
    } else {
        r
    }
}

/// `det Pi(w) / w^l`, which must be at least 1 for every `w > 0`.
pub fn degree_margin(map: &dyn HeteroMapping, omega: f64) -> f64 {
    linalg::determinant(&map.pi(omega)) / omega.powi(map.degree() as i32)
}

/// Division-free transformation through a matrix map `G` and a vector map `S`
/// sharing the same `Pi`: `y' = adj{T_G} T_S`, `m' = det{T_G}`.
pub fn transform_pair(input: &Lre, g: &dyn HeteroMapping, s: &dyn HeteroMapping, target: Target) -> Lre {
    let tg = g.apply_lre(input.m, &input.y);
    let ts = s.apply_lre(input.m, &input.y);
    let (det, adj) = linalg::det_adjugate(&tg);
    Lre::new(adj * ts.column(0), det, target)
}

/// Transformation through a vector-valued map: `y' = adj{Pi(m)} T(m, y)`, `m' = det{Pi(m)}`.
pub fn transform_single(input: &Lre, map: &dyn HeteroMapping, target: Target) -> Lre {
    let pi = map.pi(input.m);
    let t = map.apply_lre(input.m, &input.y);
    let (det, adj) = linalg::det_adjugate(&pi);
    Lre::new(adj * t.column(0), det, target)
}

/// `psi_ab`-LRE to `theta`-LRE through `G` and `S = G theta`.
pub fn lre_to_theta(ab: &Lre, s_map: &dyn HeteroMapping, g_map: &dyn HeteroMapping) -> Lre {
    transform_pair(ab, g_map, s_map, Target::Theta)
}

/// `theta`-LRE to `Theta_AB`-LRE through the lifting map.
pub fn lre_to_lifted(th: &Lre, lift: &dyn HeteroMapping) -> Lre {
    transform_single(th, lift, Target::Lifted)
}

/// The two-variable example `F(x) = (x1 x2, x1)`, `Pi = diag(w^2, w)`,
/// `Xi = w I`, `T(v) = (v1 v2, v1)`, of degree 3.
#[derive(Debug, Clone, Copy, Default)]
pub struct ProductExample;

impl HeteroMapping for ProductExample {
    fn name(&self) -> &str {
        "product-example"
    }
    fn degree(&self) -> u32 {
        3
    }
    fn input_dim(&self) -> usize {
        2
    }
    fn pi(&self, w: f64) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_vec(vec![w * w, w]))
    }
    fn apply(&self, _w: f64, v: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_column_slice(2, 1, &[v[0] * v[1], v[0]])
    }
    fn reference(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_column_slice(2, 1, &[x[0] * x[1], x[0]])
    }
}
