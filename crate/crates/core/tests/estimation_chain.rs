use extobs_core::chain::{gain_direct, gain_lre, gamma_companion, stack_kappa, GainProblem, LreChain};
use extobs_core::demo::{self, GMap, LiftMap, SMap};
use extobs_core::hetero::{lre_to_lifted, lre_to_theta, HeteroMapping, Lre, Target};
use extobs_core::linalg;
use extobs_core::lti::{build_extended, canonical_transform, psi_ab};
use extobs_core::sim::config::GammaSpec;
use extobs_core::sim::verify::{default_maps, heterogeneity_check, heterogeneity_checks, ProbeDomain};
use extobs_core::{Error, ExperimentConfig};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn theta(v: [f64; 3]) -> DVector<f64> {
    DVector::from_row_slice(&v)
}

fn rel(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

#[test]
fn exact_psi_ab_lre_recovers_theta() {
    let spec = demo::system_spec();
    let th = theta([1.0, 2.0, 3.0]);
    let ab = Lre::new(psi_ab(&spec, &th).unwrap(), 1.0, Target::PsiAb);
    let out = lre_to_theta(&ab, &SMap, &GMap);
    assert!(rel(&out.ratio().unwrap(), &th) < 1e-9);
}

#[test]
fn lift_map_degrees() {
    let m = 1.7;
    let pi = LiftMap.pi(m);
    assert_eq!(pi, DMatrix::from_diagonal(&DVector::from_row_slice(&[m, m * m, m, m])));
    let th = Lre::new(theta([2.0, 4.0, 6.0]), 2.0, Target::Theta);
    let lifted = lre_to_lifted(&th, &LiftMap);
    assert_eq!(lifted.m, 2f64.powi(5));
    assert!(rel(&lifted.ratio().unwrap(), &DVector::from_row_slice(&[3.0, 2.0, 2.0, 3.0])) < 1e-12);
}

#[test]
fn gain_lre_from_unit_regressor_matches_direct() {
    let spec = demo::system_spec();
    let exo = demo::exosystem();
    let prob = GainProblem::new(&spec, &exo, gamma_companion(-1.0, 5)).unwrap();
    let ext = build_extended(&spec, &exo, &theta([1.0, 2.0, 3.0])).unwrap();
    let direct = gain_direct(&ext, &prob).unwrap().l;
    let g = gain_lre(&Lre::new(ext.theta_ab.clone(), 1.0, Target::Lifted), &prob);
    assert!(rel(&g.lre.ratio().unwrap(), &direct) < 1e-6);
}

#[test]
fn stacked_lre_is_exact() {
    let spec = demo::system_spec();
    let exo = demo::exosystem();
    let prob = GainProblem::new(&spec, &exo, gamma_companion(-1.0, 5)).unwrap();
    let ext = build_extended(&spec, &exo, &theta([1.0, 2.0, 3.0])).unwrap();
    let l = gain_direct(&ext, &prob).unwrap().l;
    let ab = Lre::new(&ext.theta_ab * 0.5, 0.5, Target::Lifted);
    let gl = Lre::new(&l * 2.0, 2.0, Target::Gain);
    let k = stack_kappa(&ab, &gl);
    let mut want = DVector::zeros(9);
    want.rows_mut(0, 4).copy_from(&ext.theta_ab);
    want.rows_mut(4, 5).copy_from(&l);
    assert!(rel(&k.ratio().unwrap(), &want) < 1e-6);
    assert_eq!(k.m, 0.5f64.powi(4) * 2f64.powi(5));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn theta_ratio_is_scale_invariant(t in prop::array::uniform3(0.5f64..5.0), log_s in -3.0f64..3.0) {
        let spec = demo::system_spec();
        let th = theta(t);
        let s = 10f64.powf(log_s);
        let p = psi_ab(&spec, &th).unwrap();
        let a = lre_to_theta(&Lre::new(p.clone(), 1.0, Target::PsiAb), &SMap, &GMap).ratio().unwrap();
        let b = lre_to_theta(&Lre::new(p * s, s, Target::PsiAb), &SMap, &GMap).ratio().unwrap();
        prop_assert!(rel(&a, &b) < 1e-9);
    }

    #[test]
    fn gain_sylvester_residual(t in prop::array::uniform3(0.5f64..5.0)) {
        let spec = demo::system_spec();
        let exo = demo::exosystem();
        let prob = GainProblem::new(&spec, &exo, gamma_companion(-1.0, 5)).unwrap();
        let ext = build_extended(&spec, &exo, &theta(t)).unwrap();
        let sol = gain_direct(&ext, &prob).unwrap();
        let a_bar = ext.a_total().transpose();
        let res = &a_bar * &sol.m - &sol.m * &prob.gamma - &prob.c_e * ext.b_e.transpose();
        prop_assert!(res.amax() <= 1e-9 * (1.0 + sol.m.amax()));
        let back = sol.m.transpose().lu().solve(&ext.b_e).unwrap();
        prop_assert!(rel(&back, &sol.l) < 1e-9);
    }

    #[test]
    fn full_chain_is_exact(t in prop::array::uniform3(0.5f64..5.0), log_d in -3.0f64..3.0) {
        let spec = demo::system_spec();
        let exo = demo::exosystem();
        let prob = GainProblem::new(&spec, &exo, gamma_companion(-1.0, 5)).unwrap();
        let th = theta(t);
        let ext = build_extended(&spec, &exo, &th).unwrap();
        let l = gain_direct(&ext, &prob).unwrap().l;
        let eta = canonical_transform(&spec, &th).unwrap().eta();
        let d = 10f64.powf(log_d);
        let chain = LreChain { spec: &spec, gain: &prob, s_map: &SMap, g_map: &GMap, lift_map: &LiftMap };
        let snap = chain.evaluate(&Lre::new(eta * d, d, Target::Eta));
        let mut want = DVector::zeros(9);
        want.rows_mut(0, 4).copy_from(&ext.theta_ab);
        want.rows_mut(4, 5).copy_from(&l);
        prop_assert!(rel(&snap.kappa.ratio().unwrap(), &want) < 1e-6);
        prop_assert!(snap.adj_residual <= 1e-9);
        prop_assert!(snap.kappa.m > 0.0);
    }
}

/// `T_G` with its output negated.
#[derive(Debug)]
struct FlippedG;

impl HeteroMapping for FlippedG {
    fn name(&self) -> &str {
        GMap.name()
    }
    fn degree(&self) -> u32 {
        GMap.degree()
    }
    fn input_dim(&self) -> usize {
        GMap.input_dim()
    }
    fn pi(&self, w: f64) -> DMatrix<f64> {
        GMap.pi(w)
    }
    fn apply(&self, w: f64, v: &DVector<f64>) -> DMatrix<f64> {
        -GMap.apply(w, v)
    }
    fn reference(&self, x: &DVector<f64>) -> DMatrix<f64> {
        GMap.reference(x)
    }
}

#[test]
fn registered_mappings_pass_heterogeneity() {
    let exp = ExperimentConfig::demo().build().unwrap();
    let checks = heterogeneity_checks(&default_maps(&exp), &exp, 1000, 7);
    assert!(checks.iter().all(|c| c.passed), "{checks:?}");
}

#[test]
fn sign_flipped_mapping_is_caught_and_named() {
    let exp = ExperimentConfig::demo().build().unwrap();
    let check = heterogeneity_check(&FlippedG, ProbeDomain::Box { lo: -5.0, hi: 5.0 }, &exp, 1000, 0, 1);
    assert!(!check.passed);
    assert!(check.name.contains("T_G"), "{}", check.name);
}

#[test]
fn diagonal_gamma_fails_at_load() {
    let mut cfg = ExperimentConfig::demo();
    cfg.gamma = GammaSpec::Diagonal { root: (-1.0).into() };
    assert!(matches!(cfg.build(), Err(Error::NotObservable(_))));
}

#[test]
fn gamma_characteristic_polynomial() {
    let g = gamma_companion(-1.0, 5);
    let cp = linalg::char_poly(&g);
    for (a, b) in cp.iter().zip(linalg::repeated_root_poly(-1.0, 5)) {
        assert!((a - b).abs() < 1e-12);
    }
}
