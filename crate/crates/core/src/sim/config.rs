//! Experiment configuration: TOML schema, the built-in demo defaults and the
//! validated numeric objects a run needs.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::chain::{gain_direct, gamma_companion, gamma_jordan, GainProblem, GainSolution};
use crate::demo;
use crate::error::{config, Error, Result};
use crate::hetero::HeteroMapping;
use crate::linalg;
use crate::lti::{build_extended, canonical_transform, psi_ab, psi_ab_jacobian, unit_vector, CanonicalForm, ExosystemSpec, ExtendedSystem, PlantModel, SystemSpec};
use crate::observer::EstimationGains;
use crate::parametrizer::{FilterConfig, MixingGain, WeightOrigin};

/// A real number written in the config either as a TOML number or as a
/// decimal string such as `"-0.01"` or `"1e19"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Num(pub f64);

impl Serialize for Num {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_f64(self.0)
    }
}

impl<'de> Deserialize<'de> for Num {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            F(f64),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::F(v) => Ok(Num(v)),
            Raw::S(s) => s
                .trim()
                .parse::<f64>()
                .map(Num)
                .map_err(|_| serde::de::Error::custom(format!("not a decimal number: {s:?}"))),
        }
    }
}

impl From<f64> for Num {
    fn from(v: f64) -> Self {
        Num(v)
    }
}

impl fmt::Display for Num {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

fn nums(v: &[f64]) -> Vec<Num> {
    v.iter().copied().map(Num).collect()
}

fn rows(m: &[&[f64]]) -> Vec<Vec<Num>> {
    m.iter().map(|r| nums(r)).collect()
}

fn to_vector(v: &[Num]) -> DVector<f64> {
    DVector::from_iterator(v.len(), v.iter().map(|x| x.0))
}

fn to_matrix(what: &str, m: &[Vec<Num>]) -> Result<DMatrix<f64>> {
    let r = m.len();
    let c = m.first().map_or(0, Vec::len);
    if r == 0 || m.iter().any(|row| row.len() != c) {
        return Err(config(format!("{what}: matrix rows must be non-empty and of equal length")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| m[i][j].0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    /// Registered plant name.
    pub plant: String,
    pub theta: Vec<Num>,
    /// Initial extended state `(x; x_delta)`.
    pub x0: Vec<Num>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExosystemSection {
    pub a: Vec<Vec<Num>>,
    pub h: Vec<Num>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WeightOriginCfg {
    Absolute,
    #[default]
    ExtensionStart,
}

impl From<WeightOriginCfg> for WeightOrigin {
    fn from(w: WeightOriginCfg) -> Self {
        match w {
            WeightOriginCfg::Absolute => WeightOrigin::Absolute,
            WeightOriginCfg::ExtensionStart => WeightOrigin::ExtensionStart,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSection {
    pub k: Vec<Num>,
    pub g: Vec<Vec<Num>>,
    pub l: Vec<Num>,
    pub mixing_gain: Num,
    pub k1: Num,
    pub k2: Num,
    pub t_eps: Num,
    #[serde(default)]
    pub weight_origin: WeightOriginCfg,
}

/// How `Gamma` is formed; every variant is checked for observability of
/// `(B_e^T, Gamma)` at load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GammaSpec {
    /// Companion matrix of `(s - root)^n_e`.
    Companion { root: Num },
    /// Upper Jordan block.
    Jordan { root: Num },
    /// `root * I`.
    Diagonal { root: Num },
    Matrix { rows: Vec<Vec<Num>> },
}

impl GammaSpec {
    pub fn build(&self, n_e: usize) -> Result<DMatrix<f64>> {
        let g = match self {
            GammaSpec::Companion { root } => gamma_companion(root.0, n_e),
            GammaSpec::Jordan { root } => gamma_jordan(root.0, n_e),
            GammaSpec::Diagonal { root } => DMatrix::identity(n_e, n_e) * root.0,
            GammaSpec::Matrix { rows } => to_matrix("gamma.rows", rows)?,
        };
        if g.nrows() != n_e || g.ncols() != n_e {
            return Err(Error::Dimension { what: "Gamma", expected: n_e, got: g.nrows() });
        }
        Ok(g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimationSection {
    pub rho: Num,
    pub gamma0: Num,
    pub gamma1: Num,
    /// Initial `(Theta_AB_hat; L_hat)`; zeros when absent.
    #[serde(default)]
    pub kappa0: Option<Vec<Num>>,
    /// Initial observer state, shared by the baseline; zeros when absent.
    #[serde(default)]
    pub x_hat0: Option<Vec<Num>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSection {
    pub offset: Num,
    pub amplitude: Num,
    pub frequency: Num,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSection {
    /// Proportional gain `g` of `u = -g (r - y)`.
    pub gain: Num,
    /// Use `u = +g (r - y)` instead.
    #[serde(default)]
    pub flip_sign: bool,
    pub reference: ReferenceSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "zero")]
    pub t0: Num,
    pub dt: Num,
    pub t_final: Num,
    /// Spacing of recorded rows, in seconds.
    #[serde(default = "default_record_interval")]
    pub record_interval: Num,
    /// Start of the checked window; defaults to the first time `Delta >= rho`.
    #[serde(default)]
    pub t_e: Option<Num>,
    #[serde(default)]
    pub out_dir: Option<String>,
}

fn zero() -> Num {
    Num(0.0)
}

fn default_record_interval() -> Num {
    Num(0.01)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemSection,
    pub exosystem: ExosystemSection,
    pub filters: FilterSection,
    pub gamma: GammaSpec,
    pub estimation: EstimationSection,
    pub control: ControlSection,
    pub run: RunSection,
}

impl ExperimentConfig {
    /// The benchmark experiment on the third-order demo plant.
    pub fn demo() -> Self {
        ExperimentConfig {
            system: SystemSection {
                plant: "demo".into(),
                theta: nums(&[1.0, 2.0, 3.0]),
                x0: nums(&[-1.0, 0.0, 2.0, 500.0, 100.0]),
            },
            exosystem: ExosystemSection { a: rows(&[&[0.0, 1.0], &[-10.0, -0.01]]), h: nums(&[1.0, 0.0]) },
            filters: FilterSection {
                k: nums(&[3.0, 3.0, 1.0]),
                g: rows(&[&[-4.0, 1.0], &[-2.0, 0.0]]),
                l: nums(&[1.0, 2.0]),
                mixing_gain: Num(1e19),
                k1: Num(25.0),
                k2: Num(1.0),
                t_eps: Num(25.0),
                weight_origin: WeightOriginCfg::ExtensionStart,
            },
            gamma: GammaSpec::Companion { root: Num(-1.0) },
            estimation: EstimationSection { rho: Num(0.1), gamma0: Num(1e-11), gamma1: Num(1.0), kappa0: None, x_hat0: None },
            control: ControlSection {
                gain: Num(75.0),
                flip_sign: true,
                reference: ReferenceSection { offset: Num(100.0), amplitude: Num(2.5), frequency: Num(10.0) },
            },
            run: RunSection {
                t0: Num(0.0),
                dt: Num(1e-4),
                t_final: Num(50.0),
                record_interval: Num(0.01),
                t_e: None,
                out_dir: None,
            },
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        Ok(toml::from_str(s)?)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Validates every precondition and assembles the numeric experiment.
    pub fn build(&self) -> Result<Experiment> {
        Experiment::new(self.clone())
    }
}

/// A plant together with its registered heterogeneous mappings.
#[derive(Debug, Clone)]
pub struct PlantBundle {
    pub model: Arc<dyn PlantModel>,
    pub s_map: Arc<dyn HeteroMapping>,
    pub g_map: Arc<dyn HeteroMapping>,
    pub lift_map: Arc<dyn HeteroMapping>,
}

pub fn plant_registry(name: &str) -> Result<PlantBundle> {
    match name {
        "demo" => Ok(PlantBundle {
            model: Arc::new(demo::DemoPlant),
            s_map: Arc::new(demo::SMap),
            g_map: Arc::new(demo::GMap),
            lift_map: Arc::new(demo::LiftMap),
        }),
        other => Err(config(format!("unknown plant {other:?}; available: demo"))),
    }
}

/// `r(t) = offset + amplitude * exp(-max(0, t - t_eps)) * sin(frequency t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reference {
    pub offset: f64,
    pub amplitude: f64,
    pub frequency: f64,
    pub t_eps: f64,
}

impl Reference {
    pub fn value(&self, t: f64) -> f64 {
        let env = (-(t - self.t_eps).max(0.0)).exp();
        self.offset + self.amplitude * env * (self.frequency * t).sin()
    }

    /// Derivative; at `t = t_eps` the one-sided value from the right when
    /// `from_right` is set.
    pub fn rate(&self, t: f64, from_right: bool) -> f64 {
        let decaying = t > self.t_eps || (t == self.t_eps && from_right);
        let env = (-(t - self.t_eps).max(0.0)).exp();
        let (s, c) = (self.frequency * t).sin_cos();
        let d_env = if decaying { -env } else { 0.0 };
        self.amplitude * (d_env * s + env * self.frequency * c)
    }
}

/// `u = sign * gain * (r - y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlLaw {
    pub gain: f64,
    pub sign: f64,
    pub reference: Reference,
}

impl ControlLaw {
    pub fn u(&self, t: f64, y: f64) -> f64 {
        self.sign * self.gain * (self.reference.value(t) - y)
    }
}

/// A validated experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub bundle: PlantBundle,
    pub spec: SystemSpec,
    pub exo: ExosystemSpec,
    pub theta: DVector<f64>,
    pub ext: ExtendedSystem,
    pub canon: CanonicalForm,
    pub eta: DVector<f64>,
    pub filter: FilterConfig,
    pub gain_problem: GainProblem,
    pub gain: GainSolution,
    pub estimation: EstimationGains,
    pub control: ControlLaw,
    pub x0: DVector<f64>,
    pub x_hat0: DVector<f64>,
    pub kappa0: DVector<f64>,
    pub t0: f64,
    pub dt: f64,
    pub t_final: f64,
    pub record_every: usize,
}

fn positive(what: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(config(format!("{what} must be positive and finite, got {v}")))
    }
}

impl Experiment {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        let bundle = plant_registry(&cfg.system.plant)?;
        let exo = ExosystemSpec::new(to_matrix("exosystem.a", &cfg.exosystem.a)?, to_vector(&cfg.exosystem.h))?;
        let spec = SystemSpec::new(bundle.model.clone(), &exo)?;
        let theta = to_vector(&cfg.system.theta);
        let ext = build_extended(&spec, &exo, &theta)?;

        let canon = canonical_transform(&spec, &theta)?;
        if (&canon.c0 - unit_vector(spec.n, 0)).amax() > 1e-9 {
            return Err(config("canonical output vector C_0 depends on theta; filters require C_0 = e_1"));
        }
        let eta = canon.eta();

        let jac = psi_ab_jacobian(&spec, &theta)?;
        let det_j = linalg::determinant(&jac);
        if !(det_j * det_j > 0.0) {
            return Err(config("psi_ab(theta) has a singular Jacobian: parameters are not identifiable"));
        }
        let p_ab = psi_ab(&spec, &theta)?;
        let g_mat = bundle.g_map.reference(&p_ab);
        if linalg::rank(&g_mat, linalg::RANK_RTOL) != spec.n_theta {
            return Err(config("G(psi_ab) is rank deficient at theta"));
        }

        let n_e = spec.n_e;
        let x0 = to_vector(&cfg.system.x0);
        if x0.len() != n_e {
            return Err(Error::Dimension { what: "system.x0", expected: n_e, got: x0.len() });
        }

        let f = &cfg.filters;
        let t_eps = f.t_eps.0;
        let filter = FilterConfig::new(
            to_vector(&f.k),
            to_matrix("filters.g", &f.g)?,
            to_vector(&f.l),
            &exo,
            positive("filters.k1", f.k1.0)?,
            positive("filters.k2", f.k2.0)?,
            MixingGain::Constant(positive("filters.mixing_gain", f.mixing_gain.0)?),
            t_eps,
            f.weight_origin.into(),
        )?;
        if filter.n() != spec.n {
            return Err(Error::Dimension { what: "filters.k", expected: spec.n, got: filter.n() });
        }

        let gain_problem = GainProblem::new(&spec, &exo, cfg.gamma.build(n_e)?)?;
        if !linalg::is_controllable(&ext.a_total().transpose(), &ext.c_e) {
            return Err(config("pair (A_e^T + A_delta^T, C_e) is not controllable"));
        }
        gain_problem.validate(&ext)?;
        let gain = gain_direct(&ext, &gain_problem)?;
        if !linalg::is_hurwitz(&crate::chain::closed_loop(&ext, &gain.l)) {
            return Err(Error::PolePlacementInfeasible("Gamma is not Hurwitz".into()));
        }

        let e = &cfg.estimation;
        let estimation = EstimationGains {
            gamma0: e.gamma0.0,
            gamma1: positive("estimation.gamma1", e.gamma1.0)?,
            rho: positive("estimation.rho", e.rho.0)?,
        };
        if estimation.gamma0 < 0.0 {
            return Err(config("estimation.gamma0 must be non-negative"));
        }
        let n_kappa = spec.n_lifted + n_e;
        let kappa0 = e.kappa0.as_deref().map(to_vector).unwrap_or_else(|| DVector::zeros(n_kappa));
        if kappa0.len() != n_kappa {
            return Err(Error::Dimension { what: "estimation.kappa0", expected: n_kappa, got: kappa0.len() });
        }
        let x_hat0 = e.x_hat0.as_deref().map(to_vector).unwrap_or_else(|| DVector::zeros(n_e));
        if x_hat0.len() != n_e {
            return Err(Error::Dimension { what: "estimation.x_hat0", expected: n_e, got: x_hat0.len() });
        }

        let c = &cfg.control;
        let control = ControlLaw {
            gain: c.gain.0,
            sign: if c.flip_sign { 1.0 } else { -1.0 },
            reference: Reference {
                offset: c.reference.offset.0,
                amplitude: c.reference.amplitude.0,
                frequency: c.reference.frequency.0,
                t_eps,
            },
        };
        let closed = ext.a_total().view((0, 0), (spec.n, spec.n)).into_owned()
            - ext.b_e.rows(0, spec.n) * spec.c.transpose() * (control.sign * control.gain);
        if !linalg::is_hurwitz(&closed) {
            return Err(config(format!(
                "control law u = {}{} (r - y) does not stabilize the plant: trajectories are unbounded",
                if control.sign < 0.0 { "-" } else { "" },
                control.gain
            )));
        }

        let r = &cfg.run;
        let dt = positive("run.dt", r.dt.0)?;
        let t0 = r.t0.0;
        let t_final = r.t_final.0;
        if !(t_final > t0) {
            return Err(config("run.t_final must exceed run.t0"));
        }
        let record_every = ((positive("run.record_interval", r.record_interval.0)? / dt).round() as usize).max(1);

        Ok(Experiment {
            cfg,
            bundle,
            spec,
            exo,
            theta,
            ext,
            canon,
            eta,
            filter,
            gain_problem,
            gain,
            estimation,
            control,
            x0,
            x_hat0,
            kappa0,
            t0,
            dt,
            t_final,
            record_every,
        })
    }

    /// `(Theta_AB; L)` of the true system.
    pub fn kappa_true(&self) -> DVector<f64> {
        let nl = self.spec.n_lifted;
        let mut k = DVector::zeros(nl + self.spec.n_e);
        k.rows_mut(0, nl).copy_from(&self.ext.theta_ab);
        k.rows_mut(nl, self.spec.n_e).copy_from(&self.gain.l);
        k
    }

    pub fn steps(&self) -> usize {
        ((self.t_final - self.t0) / self.dt).round() as usize
    }
}
