//! Extended adaptive observer for linear time-invariant plants with
//! overparametrized physical parameters and exosystem-generated disturbances.
//!
//! The estimator reconstructs the physical state, the disturbance state, the
//! physical parameters and the output-injection gain from input/output data.
//! It does so by threading a chain of scalar-regressor linear regression
//! equations (see [`hetero::Lre`]):
//!
//! ```text
//! filters -> mixing -> eta-LRE -> theta-LRE -> Theta_AB-LRE -> L-LRE -> kappa-LRE -> observer
//! ```
//!
//! Module map:
//!
//! * [`lti`]: plant, exosystem, extended system, regressor and canonical form.
//! * [`hetero`]: heterogeneous mappings and the division-free LRE transforms.
//! * [`parametrizer`]: filter bank, extension integrals and regressor mixing.
//! * [`chain`]: gain LRE, stacked parameter LRE and positivity checks.
//! * [`observer`]: adaptive and baseline observers and the switched estimation law.
//! * [`sim`]: experiment configuration, simulation, CSV/plot output and verification.

// NaN must fail threshold checks, so `!(a <= b)` is used deliberately.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chain;
pub mod demo;
pub mod error;
pub mod hetero;
pub mod integrator;
pub mod linalg;
pub mod lti;
pub mod observer;
pub mod parametrizer;
pub mod sim;

pub use chain::{ChainSnapshot, GainProblem, LreChain, MarginReport};
pub use error::{Error, Result};
pub use hetero::{HeteroMapping, Lre, Target};
pub use lti::{CanonicalForm, ExosystemSpec, ExtendedSystem, PlantModel, SystemSpec};
pub use observer::{ErrorRegressor, EstimationGains, ObserverState};
pub use parametrizer::{FilterBank, FilterConfig};
pub use sim::config::ExperimentConfig;
pub use sim::run::{simulate, simulate_experiment, RunArtifacts};
