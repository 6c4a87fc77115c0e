//! The third-order benchmark plant with a lightly damped oscillatory
//! disturbance, and its closed-form heterogeneous mappings.
//!
//! ```text
//! A(theta) = [[0, t1+t2, 0], [-t2, 0, t2], [0, -t3, 0]]
//! B(theta) = (0, 0, t3),  D(theta) = (t1 t2, 0, 0),  C = (0, 0, 1)
//! Theta_AB = (t1+t2, t1 t2, t2, t3)
//! ```

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::hetero::HeteroMapping;
use crate::lti::{ExosystemSpec, PlantModel, SystemSpec};

#[derive(Debug, Clone, Copy, Default)]
pub struct DemoPlant;

impl PlantModel for DemoPlant {
    fn name(&self) -> &'static str {
        "demo"
    }
    fn n(&self) -> usize {
        3
    }
    fn n_theta(&self) -> usize {
        3
    }
    fn n_lifted(&self) -> usize {
        4
    }

    fn a(&self, t: &DVector<f64>) -> DMatrix<f64> {
        self.a_lin(&self.lifted(t))
    }
    fn b(&self, t: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![0.0, 0.0, t[2]])
    }
    fn d(&self, t: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![t[0] * t[1], 0.0, 0.0])
    }
    fn c(&self) -> DVector<f64> {
        DVector::from_vec(vec![0.0, 0.0, 1.0])
    }

    fn lifted(&self, t: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![t[0] + t[1], t[0] * t[1], t[1], t[2]])
    }

    fn a_lin(&self, p: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 3, &[0.0, p[0], 0.0, -p[2], 0.0, p[2], 0.0, -p[3], 0.0])
    }
    fn b_lin(&self, p: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![0.0, 0.0, p[3]])
    }
    fn d_lin(&self, p: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![p[1], 0.0, 0.0])
    }

    fn psi_ab_indices(&self) -> Vec<usize> {
        vec![1, 3, 5]
    }
}

/// `A_delta = [[0, 1], [-10, -0.01]]`, `h = (1, 0)`.
pub fn exosystem() -> ExosystemSpec {
    ExosystemSpec::new(
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -10.0, -0.01]),
        DVector::from_vec(vec![1.0, 0.0]),
    )
    .expect("demo exosystem is valid")
}

pub fn system_spec() -> SystemSpec {
    SystemSpec::new(Arc::new(DemoPlant), &exosystem()).expect("demo system is valid")
}

pub fn default_theta() -> DVector<f64> {
    DVector::from_vec(vec![1.0, 2.0, 3.0])
}

/// Closed forms of the canonical-form vectors `(psi_a, psi_b, psi_d)`.
pub fn psi_closed_form(t: &DVector<f64>) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
    let (t1, t2, t3) = (t[0], t[1], t[2]);
    (
        DVector::from_vec(vec![0.0, -(t1 + t2 + t3) * t2, 0.0]),
        DVector::from_vec(vec![t3, 0.0, t3 * t2 * (t2 + t1)]),
        DVector::from_vec(vec![0.0, 0.0, t1 * t2 * t2 * t3]),
    )
}

/// `psi_ab = (psi_a2, psi_b1, psi_b3)` in closed form.
pub fn psi_ab_closed_form(t: &DVector<f64>) -> DVector<f64> {
    let (t1, t2, t3) = (t[0], t[1], t[2]);
    DVector::from_vec(vec![-(t1 + t2 + t3) * t2, t3, t3 * t2 * (t2 + t1)])
}

fn pi_theta(w: f64) -> DMatrix<f64> {
    let w2 = w * w;
    DMatrix::from_diagonal(&DVector::from_vec(vec![w2 * w2 * w, w2, w2]))
}

/// `G(psi_ab) = diag(p2^3 (p1 p2 + p3), p2^2, p1)` with `G(psi_ab) theta = S(psi_ab)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct GMap;

impl HeteroMapping for GMap {
    fn name(&self) -> &str {
        "T_G"
    }
    fn degree(&self) -> u32 {
        9
    }
    fn input_dim(&self) -> usize {
        3
    }
    fn pi(&self, w: f64) -> DMatrix<f64> {
        pi_theta(w)
    }
    fn apply(&self, w: f64, y: &DVector<f64>) -> DMatrix<f64> {
        let (y1, y2, y3) = (y[0], y[1], y[2]);
        DMatrix::from_diagonal(&DVector::from_vec(vec![y2.powi(3) * (y1 * y2 + w * y3), y2 * y2, w * y1]))
    }
    fn reference(&self, p: &DVector<f64>) -> DMatrix<f64> {
        self.apply(1.0, p)
    }
}

/// `S(psi_ab) = (p2 (p1 p2 + p3)^2 - p2^4 p3, -p1 p2 - p3, p2 p1)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SMap;

impl HeteroMapping for SMap {
    fn name(&self) -> &str {
        "T_S"
    }
    fn degree(&self) -> u32 {
        9
    }
    fn input_dim(&self) -> usize {
        3
    }
    fn pi(&self, w: f64) -> DMatrix<f64> {
        pi_theta(w)
    }
    fn apply(&self, w: f64, y: &DVector<f64>) -> DMatrix<f64> {
        let (y1, y2, y3) = (y[0], y[1], y[2]);
        let s = y1 * y2 + w * y3;
        DMatrix::from_column_slice(3, 1, &[y2 * s * s - y2.powi(4) * y3, -s, y2 * y1])
    }
    fn reference(&self, p: &DVector<f64>) -> DMatrix<f64> {
        self.apply(1.0, p)
    }
}

/// `Theta_AB(theta) = (t1 + t2, t1 t2, t2, t3)` with `Pi = diag(w, w^2, w, w)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct LiftMap;

impl HeteroMapping for LiftMap {
    fn name(&self) -> &str {
        "T_Theta"
    }
    fn degree(&self) -> u32 {
        5
    }
    fn input_dim(&self) -> usize {
        3
    }
    fn pi(&self, w: f64) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_vec(vec![w, w * w, w, w]))
    }
    fn apply(&self, _w: f64, y: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_column_slice(4, 1, &[y[0] + y[1], y[0] * y[1], y[1], y[2]])
    }
    fn reference(&self, t: &DVector<f64>) -> DMatrix<f64> {
        self.apply(1.0, t)
    }
}
