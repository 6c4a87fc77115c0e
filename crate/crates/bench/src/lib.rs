//! Fixtures shared by the benchmarks.

use extobs_core::chain::LreChain;
use extobs_core::hetero::{Lre, Target};
use extobs_core::sim::config::Experiment;
use extobs_core::ExperimentConfig;
use nalgebra::DMatrix;

/// The built-in demo experiment.
pub fn demo() -> Experiment {
    ExperimentConfig::demo().build().expect("demo configuration")
}

/// Deterministic, well-conditioned dense matrix of size `n`.
pub fn dense(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| ((i * 7 + j * 13) % 17) as f64 / 17.0 - 0.5 + if i == j { n as f64 } else { 0.0 })
}

/// Exact `eta`-LRE of the demo plant with regressor `delta`.
pub fn eta_lre(exp: &Experiment, delta: f64) -> Lre {
    Lre::new(&exp.eta * delta, delta, Target::Eta)
}

pub fn chain(exp: &Experiment) -> LreChain<'_> {
    LreChain {
        spec: &exp.spec,
        gain: &exp.gain_problem,
        s_map: exp.bundle.s_map.as_ref(),
        g_map: exp.bundle.g_map.as_ref(),
        lift_map: exp.bundle.lift_map.as_ref(),
    }
}
