//! Self-checks of a configured experiment: mapping identities, filter
//! pairing, gain placement, chain correctness against direct oracles and the
//! positivity margins of a simulated run.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::chain::{closed_loop, gain_direct, LreChain, PMap, QMap};
use crate::error::{Error, Result};
use crate::hetero::{degree_margin, verify_heterogeneity, HeteroMapping, Lre, ProductExample, Target};
use crate::linalg;
use crate::lti::{build_extended, canonical_transform, psi_ab};
use crate::parametrizer::compute_beta;
use crate::sim::config::{Experiment, ExperimentConfig};
use crate::sim::run::simulate_experiment;

pub const HETERO_TOL: f64 = 1e-9;
pub const CHAIN_TOL: f64 = 1e-6;
pub const CHARPOLY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into() }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    pub seed: u64,
    pub hetero_probes: usize,
    pub chain_cases: usize,
    /// Also run the configured simulation and check the chain margins.
    pub simulate: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { seed: 0, hetero_probes: 1000, chain_cases: 50, simulate: true }
    }
}

/// Where heterogeneity probes are drawn from.
#[derive(Debug, Clone, Copy)]
pub enum ProbeDomain {
    /// Uniform in `[lo, hi]^d`.
    Box { lo: f64, hi: f64 },
    /// `[Theta_AB(theta); vec Gamma; vec A_delta]` for admissible random `theta`.
    GainArgument,
}

fn sub_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Uniform sampling box for plant parameters.
pub fn theta_box(exp: &Experiment) -> Vec<(f64, f64)> {
    if exp.cfg.system.plant == "demo" {
        vec![(0.5, 5.0); exp.spec.n_theta]
    } else {
        exp.theta.iter().map(|t| (0.5 * t).min(1.5 * t)).zip(exp.theta.iter().map(|t| (0.5 * t).max(1.5 * t))).collect()
    }
}

fn sample_theta(bounds: &[(f64, f64)], rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_iterator(bounds.len(), bounds.iter().map(|&(lo, hi)| if hi > lo { rng.random_range(lo..hi) } else { lo }))
}

/// Worst relative residual of the identity `Pi(w) F(x) = T(w, Xi(w) w x)` over
/// random probes with `w` in `(0, 10]`.
pub fn heterogeneity_check(
    map: &dyn HeteroMapping,
    domain: ProbeDomain,
    exp: &Experiment,
    probes: usize,
    seed: u64,
    stream: u64,
) -> Check {
    let mut rng = sub_rng(seed, stream);
    let bounds = theta_box(exp);
    let mut worst = 0.0f64;
    let mut worst_at = (0.0, DVector::zeros(0));
    for _ in 0..probes {
        let omega = 10.0 * (1.0 - rng.random::<f64>());
        let x = match domain {
            ProbeDomain::Box { lo, hi } => {
                DVector::from_iterator(map.input_dim(), (0..map.input_dim()).map(|_| rng.random_range(lo..hi)))
            }
            ProbeDomain::GainArgument => {
                let th = sample_theta(&bounds, &mut rng);
                exp.gain_problem.extended_argument(&exp.spec.theta_ab(&th))
            }
        };
        let r = verify_heterogeneity(map, omega, &x);
        if !(r <= worst) {
            worst = if r.is_nan() { f64::INFINITY } else { r };
            worst_at = (omega, x);
        }
    }
    let margin_ok = [0.1, 0.5, 1.0, 2.0, 10.0].iter().all(|&w| degree_margin(map, w) >= 1.0 - 1e-12);
    let passed = worst <= HETERO_TOL && margin_ok;
    let mut detail = format!("{probes} probes, worst relative residual {worst:.3e}");
    if worst > HETERO_TOL && worst_at.1.len() <= 6 {
        detail.push_str(&format!(" at w = {:.4}, x = {:?}", worst_at.0, worst_at.1.as_slice()));
    }
    if !margin_ok {
        detail.push_str("; det Pi(w) falls below w^degree");
    }
    Check::new(format!("heterogeneity {}", map.name()), passed, detail)
}

/// Runs the heterogeneity check for each `(mapping, domain)` in parallel.
pub fn heterogeneity_checks(
    maps: &[(&dyn HeteroMapping, ProbeDomain)],
    exp: &Experiment,
    probes: usize,
    seed: u64,
) -> Vec<Check> {
    maps.par_iter()
        .enumerate()
        .map(|(i, (m, d))| heterogeneity_check(*m, *d, exp, probes, seed, i as u64 + 1))
        .collect()
}

pub fn product_example_check() -> Check {
    let map = ProductExample;
    let x = DVector::from_vec(vec![3.0, 5.0]);
    let lhs = map.pi(2.0) * map.reference(&x);
    let rhs = map.apply(2.0, &(&x * 2.0));
    let lre = crate::hetero::transform_single(&Lre::new(&x * 2.0, 2.0, Target::Theta), &map, Target::Theta);
    let want = [60.0, 6.0];
    let ok = lhs.as_slice() == want && rhs.as_slice() == want && lre.ratio().map(|r| r.as_slice() == [15.0, 3.0]) == Some(true);
    Check::new("product example", ok, format!("Pi F = {:?}, T = {:?}, expected {want:?}", lhs.as_slice(), rhs.as_slice()))
}

pub fn beta_check(exp: &Experiment) -> Check {
    let f = &exp.filter;
    match compute_beta(&f.g, &f.l, &exp.exo) {
        Ok((m, beta)) => {
            let res = &m * &exp.exo.a_cal - &f.g * &m - &f.l * exp.exo.h_bar().transpose();
            let rel = res.norm() / (1.0 + m.norm());
            let pairing = (m.transpose() * &beta - exp.exo.h_bar()).norm();
            let ok = rel <= 1e-10 && pairing <= 1e-10 * (1.0 + beta.norm());
            Check::new(
                "filter pairing beta",
                ok,
                format!("beta = {:?}, Sylvester residual {rel:.2e}, pairing residual {pairing:.2e}", beta.as_slice()),
            )
        }
        Err(e) => Check::new("filter pairing beta", false, e.to_string()),
    }
}

/// Compares the closed-loop characteristic polynomial with that of `Gamma`.
pub fn pole_placement_check(exp: &Experiment) -> Check {
    let am = closed_loop(&exp.ext, &exp.gain.l);
    let got = linalg::char_poly(&am);
    let want = linalg::char_poly(&exp.gain_problem.gamma);
    let scale = want.iter().fold(1.0f64, |a, c| a.max(c.abs()));
    let err = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale;
    let eig = linalg::eigenvalues(&am);
    let target = linalg::eigenvalues(&exp.gain_problem.gamma);
    let dist = eig
        .iter()
        .map(|e| target.iter().map(|g| (e - g).norm()).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max);
    Check::new(
        "pole placement",
        err <= CHARPOLY_TOL,
        format!("char. polynomial relative error {err:.2e}; largest eigenvalue distance {dist:.2e}"),
    )
}

/// Oracle parameters for one `theta`, or `None` when it is not admissible.
pub struct ChainCase {
    pub theta: DVector<f64>,
    pub eta: DVector<f64>,
    pub kappa: DVector<f64>,
}

pub fn chain_case(exp: &Experiment, theta: &DVector<f64>) -> Option<ChainCase> {
    let spec = &exp.spec;
    let ext = build_extended(spec, &exp.exo, theta).ok()?;
    exp.gain_problem.validate(&ext).ok()?;
    let gain = gain_direct(&ext, &exp.gain_problem).ok()?;
    let canon = canonical_transform(spec, theta).ok()?;
    let p_ab = psi_ab(spec, theta).ok()?;
    if linalg::rank(&exp.bundle.g_map.reference(&p_ab), linalg::RANK_RTOL) < spec.n_theta {
        return None;
    }
    let mut kappa = DVector::zeros(spec.n_lifted + spec.n_e);
    kappa.rows_mut(0, spec.n_lifted).copy_from(&ext.theta_ab);
    kappa.rows_mut(spec.n_lifted, spec.n_e).copy_from(&gain.l);
    Some(ChainCase { theta: theta.clone(), eta: canon.eta(), kappa })
}

/// Relative error of the chain's `kappa` against the direct solution, for an
/// exact `eta`-LRE with regressor `delta`; also the adjugate residual.
pub fn chain_error(exp: &Experiment, case: &ChainCase, delta: f64) -> (f64, f64) {
    let chain = LreChain {
        spec: &exp.spec,
        gain: &exp.gain_problem,
        s_map: exp.bundle.s_map.as_ref(),
        g_map: exp.bundle.g_map.as_ref(),
        lift_map: exp.bundle.lift_map.as_ref(),
    };
    let snap = chain.evaluate(&Lre::new(&case.eta * delta, delta, Target::Eta));
    let err = match snap.kappa.ratio() {
        Some(k) => (k - &case.kappa).norm() / case.kappa.norm(),
        None => f64::INFINITY,
    };
    (err, snap.adj_residual)
}

/// Draws admissible parameter vectors from the sampling box.
pub fn admissible_cases(exp: &Experiment, count: usize, seed: u64) -> Result<Vec<ChainCase>> {
    let bounds = theta_box(exp);
    let mut rng = sub_rng(seed, 100);
    let mut cases = Vec::with_capacity(count);
    let mut tries = 0;
    while cases.len() < count {
        tries += 1;
        if tries > 100 * count {
            return Err(Error::Inconsistent("could not draw enough admissible parameter vectors".into()));
        }
        if let Some(c) = chain_case(exp, &sample_theta(&bounds, &mut rng)) {
            cases.push(c);
        }
    }
    Ok(cases)
}

pub fn chain_oracle_check(exp: &Experiment, count: usize, seed: u64) -> Check {
    let cases = match admissible_cases(exp, count, seed) {
        Ok(c) => c,
        Err(e) => return Check::new("chain oracle", false, e.to_string()),
    };
    let mut rng = sub_rng(seed, 101);
    let deltas: Vec<f64> = (0..cases.len()).map(|_| 10f64.powf(rng.random_range(-3.0..3.0))).collect();
    let results: Vec<(f64, f64)> = cases.par_iter().zip(deltas.par_iter()).map(|(c, &d)| chain_error(exp, c, d)).collect();
    let (worst, i) = results.iter().enumerate().fold((0.0f64, 0), |(w, wi), (i, r)| if !(r.0 <= w) { (r.0, i) } else { (w, wi) });
    let adj = results.iter().map(|r| r.1).fold(0.0, f64::max);
    let ok = worst <= CHAIN_TOL && adj <= 1e-9;
    Check::new(
        "chain oracle",
        ok,
        format!(
            "{} cases, worst relative error {worst:.2e} at theta = {:?}, worst adjugate residual {adj:.2e}",
            cases.len(),
            cases[i].theta.as_slice()
        ),
    )
}

/// The five registered mappings with their probe domains.
pub fn default_maps(exp: &Experiment) -> [(&dyn HeteroMapping, ProbeDomain); 3] {
    let b = ProbeDomain::Box { lo: -5.0, hi: 5.0 };
    [(exp.bundle.g_map.as_ref(), b), (exp.bundle.s_map.as_ref(), b), (exp.bundle.lift_map.as_ref(), b)]
}

/// Runs every check on an already validated experiment.
pub fn verify_experiment(exp: &Experiment, opts: &VerifyOptions) -> Result<VerifyReport> {
    let p = PMap(&exp.gain_problem);
    let q = QMap(&exp.gain_problem);
    let mut maps: Vec<(&dyn HeteroMapping, ProbeDomain)> = default_maps(exp).to_vec();
    maps.push((&p, ProbeDomain::GainArgument));
    maps.push((&q, ProbeDomain::GainArgument));

    let mut checks = heterogeneity_checks(&maps, exp, opts.hetero_probes, opts.seed);
    checks.push(product_example_check());
    checks.push(beta_check(exp));
    checks.push(pole_placement_check(exp));
    checks.push(chain_oracle_check(exp, opts.chain_cases, opts.seed));

    if opts.simulate {
        let run = simulate_experiment(exp)?;
        let s = &run.summary;
        let p1 = &s.margins;
        let detail = match &p1.first_violation {
            Some((t, msg)) => format!("t_e = {:.4}: violation at t = {t:.4}: {msg}", p1.t_e),
            None => format!(
                "t_e = {:.4}, {} samples, min Delta {:.3e}, min |M_AB| {:.3e}, min |M_L| {:.3e}, min |M_kappa| {:.3e}",
                p1.t_e, p1.samples, p1.min_delta, p1.min_m_lifted, p1.min_m_gain, p1.min_m_kappa
            ),
        };
        checks.push(Check::new("regressor positivity after t_e", s.t_e.is_some() && p1.passed(), detail));
        let rho = exp.estimation.rho;
        checks.push(Check::new(
            "rho below excitation",
            s.rho_consistent(rho),
            format!("rho = {rho:.3e}, min Delta after t_e = {:.3e}", s.delta_min_after_te),
        ));
    }
    Ok(VerifyReport { checks })
}

/// Builds the experiment (configuration errors surface here) and verifies it.
pub fn verify(cfg: &ExperimentConfig, opts: &VerifyOptions) -> Result<VerifyReport> {
    verify_experiment(&cfg.build()?, opts)
}
