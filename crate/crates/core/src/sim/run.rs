//! Closed-loop simulation of plant, filters, estimation chain and both observers.

use std::time::Instant;

use log::{debug, info};
use nalgebra::DVector;

use crate::chain::{ChainSnapshot, LreChain, MarginReport, MarginTracker};
use crate::error::{Error, Result};
use crate::integrator::{rk4_step, HermiteSegment, InputSegment};
use crate::observer::{baseline_step, coupled_step, disturbance_estimate, error_regressor, ObserverState, TargetSegment};
use crate::parametrizer::{regression_residual, mix, FilterBank};
use crate::sim::config::{Experiment, ExperimentConfig};

/// A named block of time-indexed rows; column 0 is time.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    fn new(name: &str, columns: Vec<String>) -> Self {
        Self { name: name.into(), columns, rows: Vec::new() }
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r[0]).collect()
    }
}

fn indexed(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}{i}"))
}

fn header(parts: Vec<Vec<String>>) -> Vec<String> {
    std::iter::once("t".to_string()).chain(parts.into_iter().flatten()).collect()
}

/// Scalar outcomes of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub steps: usize,
    pub dt: f64,
    pub t_final: f64,
    pub wall_seconds: f64,
    /// Start of the checked window: configured, or the first time `Delta >= rho`.
    pub t_e: Option<f64>,
    pub delta_max: f64,
    pub delta_min_after_te: f64,
    /// Largest `|regression residual| / (1 + |phi_bar_f^T eta|)` for `t >= t_eps`.
    pub regression_residual_max_rel: f64,
    /// Largest `|Y - Delta eta| / (|Delta| |eta|)` for `t >= t_e`.
    pub eta_err_max_after_te: f64,
    pub eta_err_final: f64,
    /// Smallest eigenvalue of the extended Gram matrix `phi` at the end of the run.
    pub phi_min_eig_final: f64,
    pub margins: MarginReport,
    /// Largest coherence residual of any adjugate formed in the chain.
    pub adj_residual_max: f64,
    pub kappa_err_peak_after_te: f64,
    pub kappa_err_final: f64,
    pub xdiff_peak_after_te: f64,
    pub xdiff_final: f64,
    pub x_final: DVector<f64>,
    pub x_hat_final: DVector<f64>,
    pub x_star_final: DVector<f64>,
    pub kappa_hat_final: DVector<f64>,
    pub kappa_true: DVector<f64>,
}

impl RunSummary {
    /// `rho <= min_{t >= t_e} Delta(t)`.
    pub fn rho_consistent(&self, rho: f64) -> bool {
        self.t_e.is_some() && self.delta_min_after_te >= rho
    }
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub tables: Vec<Table>,
    pub summary: RunSummary,
}

impl RunArtifacts {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }
}

pub fn simulate(cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    simulate_experiment(&cfg.build()?)
}

pub fn simulate_experiment(exp: &Experiment) -> Result<RunArtifacts> {
    let started = Instant::now();
    let spec = &exp.spec;
    let ext = &exp.ext;
    let law = exp.control;
    let fcfg = &exp.filter;
    let (n, ne, nl) = (spec.n, spec.n_e, spec.n_lifted);
    let nk = nl + ne;
    let dt = exp.dt;
    let n_steps = exp.steps();
    let a_delta = exp.exo.embed(n);
    let eta = &exp.eta;
    let kappa_true = exp.kappa_true();
    let h = &exp.exo.h;

    let chain = LreChain {
        spec,
        gain: &exp.gain_problem,
        s_map: exp.bundle.s_map.as_ref(),
        g_map: exp.bundle.g_map.as_ref(),
        lift_map: exp.bundle.lift_map.as_ref(),
    };

    let mut plant_t = Table::new(
        "plant",
        header(vec![indexed("x", ne).collect(), vec!["y".into(), "u".into(), "r".into(), "delta".into()]]),
    );
    let mut obs_t = Table::new(
        "observer",
        header(vec![
            indexed("x_hat", ne).collect(),
            indexed("kappa_hat", nk).collect(),
            indexed("kappa_tilde", nk).collect(),
            vec!["gamma_rate".into(), "delta_hat".into(), "y_tilde".into(), "active".into()],
        ]),
    );
    let mut base_t = Table::new("baseline", header(vec![indexed("x_star", ne).collect(), vec!["delta_hat_star".into()]]));
    let mut chain_t = Table::new(
        "chain",
        header(vec![
            vec!["Delta".into(), "M_theta".into(), "M_AB".into(), "M_L".into(), "M_kappa".into(), "adj_residual".into()],
            indexed("Y_eta", 2 * n).collect(),
            indexed("Y_theta", spec.n_theta).collect(),
            indexed("Y_AB", nl).collect(),
            indexed("Y_L", ne).collect(),
            indexed("Y_kappa", nk).collect(),
        ]),
    );
    let mut tap_t = Table::new(
        "taps",
        header(vec![
            vec!["q_bar".into()],
            indexed("phi_bar", 2 * n).collect(),
            indexed("phi_bar_f", 2 * n).collect(),
            vec!["phi_bar_f_eta".into(), "filtered_regressand".into(), "regression_residual".into(), "eta_error".into()],
        ]),
    );

    let mut x = exp.x0.clone();
    let mut bank = FilterBank::for_config(fcfg);
    let mut obs = ObserverState::new(exp.x_hat0.clone(), exp.kappa0.clone(), exp.estimation);
    let mut x_star = exp.x_hat0.clone();

    let q_bar0 = ext.output(&x);
    let mut t_e = exp.cfg.run.t_e.map(|v| v.0);
    let mut tracker: Option<MarginTracker> = None;

    let mut delta_max = f64::NEG_INFINITY;
    let mut delta_min_after_te = f64::INFINITY;
    let mut regression_residual_max_rel: f64 = 0.0;
    let mut eta_err_max: f64 = 0.0;
    let mut eta_err_last = f64::NAN;
    let mut adj_max: f64 = 0.0;
    let mut kappa_peak: f64 = 0.0;
    let mut xdiff_peak: f64 = 0.0;
    let mut last_rate = 0.0;
    let mut last_active = false;

    let plant_rhs = |t: f64, x: &DVector<f64>| {
        let u = law.u(t, ext.output(x));
        ext.rhs(x, u)
    };

    let mut eta_lre = mix(&bank, fcfg.mixing.at(exp.t0));
    let mut next_snapshot: Option<ChainSnapshot> = None;

    info!("simulating {n_steps} steps of {dt} s");
    for i in 0..=n_steps {
        let t = exp.t0 + i as f64 * dt;
        let y = ext.output(&x);
        let u = law.u(t, y);

        let raw_delta = eta_lre.m;
        delta_max = delta_max.max(raw_delta);
        let active = raw_delta >= obs.gains.rho;
        if active && t_e.is_none() {
            info!("Delta reached rho at t = {t:.4}");
            t_e = Some(t);
        }
        let after_te = t_e.is_some_and(|te| t >= te);
        let record = i % exp.record_every == 0 || i == n_steps;
        let snapshot = match next_snapshot.take() {
            Some(s) => Some(s),
            None => (active || record || after_te).then(|| chain.evaluate(&eta_lre)),
        };

        if after_te {
            let te = t_e.unwrap_or(t);
            let s = snapshot.as_ref().expect("chain evaluated after t_e");
            tracker.get_or_insert_with(|| MarginTracker::new(te)).observe(t, s);
            delta_min_after_te = delta_min_after_te.min(raw_delta);
            adj_max = adj_max.max(s.adj_residual);
            let e = if s.eta.m != 0.0 { (&s.eta.y - eta * s.eta.m).norm() / (s.eta.m.abs() * eta.norm()) } else { f64::INFINITY };
            eta_err_max = eta_err_max.max(e);
            eta_err_last = e;
        }

        let phi_f_eta = bank.phi_bar_f.dot(eta);
        let reg_res = regression_residual(&bank, fcfg, y, eta, t, exp.t0, q_bar0);
        if FilterBank::extension_active(fcfg, t) {
            regression_residual_max_rel = regression_residual_max_rel.max(reg_res / (1.0 + phi_f_eta.abs()));
        }

        let kappa_err = (&obs.kappa_hat - &kappa_true).norm();
        let xdiff = (&obs.x_hat - &x_star).norm();
        if after_te {
            kappa_peak = kappa_peak.max(kappa_err);
            xdiff_peak = xdiff_peak.max(xdiff);
        }

        if record {
            let delta = disturbance_estimate(&x, n, h);
            let mut row = vec![t];
            row.extend(x.iter());
            row.extend([y, u, law.reference.value(t), delta]);
            plant_t.rows.push(row);

            let reg = error_regressor(&obs, u, y, spec);
            let mut row = vec![t];
            row.extend(obs.x_hat.iter());
            row.extend(obs.kappa_hat.iter());
            row.extend((&obs.kappa_hat - &kappa_true).iter());
            row.extend([last_rate, disturbance_estimate(&obs.x_hat, n, h), reg.y_tilde, if last_active { 1.0 } else { 0.0 }]);
            obs_t.rows.push(row);

            let mut row = vec![t];
            row.extend(x_star.iter());
            row.push(disturbance_estimate(&x_star, n, h));
            base_t.rows.push(row);

            if let Some(s) = &snapshot {
                let mut row = vec![t, raw_delta, s.theta.m, s.lifted.m, s.gain.m, s.kappa.m, s.adj_residual];
                for l in [&s.eta, &s.theta, &s.lifted, &s.gain, &s.kappa] {
                    row.extend(l.y.iter());
                }
                chain_t.rows.push(row);
            }

            let (q_bar, phi_bar) = bank.regression_pair(fcfg, y, u);
            let mut row = vec![t, q_bar];
            row.extend(phi_bar.iter());
            row.extend(bank.phi_bar_f.iter());
            let eta_err = if after_te { eta_err_last } else { f64::NAN };
            row.extend([phi_f_eta, bank.filtered_regressand(fcfg, y), reg_res, eta_err]);
            tap_t.rows.push(row);
        }

        if i == n_steps {
            break;
        }

        let t1 = t + dt;
        let x_next = rk4_step(plant_rhs, t, &x, dt);
        let y1 = ext.output(&x_next);
        let u1 = law.u(t1, y1);
        let dy0 = ext.c_e.dot(&ext.rhs(&x, u));
        let dy1 = ext.c_e.dot(&ext.rhs(&x_next, u1));
        let du0 = law.sign * law.gain * (law.reference.rate(t, true) - dy0);
        let du1 = law.sign * law.gain * (law.reference.rate(t1, false) - dy1);
        let seg = InputSegment {
            y: HermiteSegment { t0: t, h: dt, v0: y, v1: y1, d0: dy0, d1: dy1 },
            u: HermiteSegment { t0: t, h: dt, v0: u, v1: u1, d0: du0, d1: du1 },
        };

        bank.step(fcfg, &seg)?;
        let lre0 = std::mem::replace(&mut eta_lre, mix(&bank, fcfg.mixing.at(t1)));
        let rho = obs.gains.rho;
        let up = if active || eta_lre.m >= rho {
            let s0 = match &snapshot {
                Some(s) => s.kappa.ratio(),
                None => chain.evaluate(&lre0).kappa.ratio(),
            };
            let start = s0.ok_or_else(|| Error::Inconsistent(format!("M_kappa = 0 at t = {t} with Delta = {raw_delta:.3e}")))?;
            let s1 = chain.evaluate(&eta_lre);
            let end = s1.kappa.ratio().unwrap_or_else(|| start.clone());
            next_snapshot = Some(s1);
            if active {
                coupled_step(&mut obs, &seg, Some(&TargetSegment { t0: t, h: dt, start, end }), spec, &a_delta)?
            } else {
                // Delta crosses rho inside the step: hold kappa_hat up to the crossing.
                let frac = ((rho - raw_delta) / (eta_lre.m - raw_delta)).clamp(0.0, 1.0);
                let tc = t + frac * dt;
                if t_e.is_none() {
                    info!("Delta reached rho at t = {tc:.6}");
                    t_e = Some(tc);
                }
                coupled_step(&mut obs, &seg.restrict(t, tc), None, spec, &a_delta)?;
                let mid = &start * (1.0 - frac) + &end * frac;
                let tail = TargetSegment { t0: tc, h: t1 - tc, start: mid, end };
                coupled_step(&mut obs, &seg.restrict(tc, t1), Some(&tail), spec, &a_delta)?
            }
        } else {
            coupled_step(&mut obs, &seg, None, spec, &a_delta)?
        };
        last_active = up.active;
        last_rate = up.rate;
        baseline_step(&mut x_star, &seg, ext, &exp.gain.l)?;
        x = x_next;
        if i % (n_steps / 10).max(1) == 0 {
            debug!("t = {t:.3}: Delta = {raw_delta:.3e}, |kappa_tilde| = {kappa_err:.3e}");
        }
    }

    let margins = tracker.map(|tr| tr.report()).unwrap_or_else(|| MarginTracker::new(t_e.unwrap_or(f64::INFINITY)).report());
    let summary = RunSummary {
        steps: n_steps,
        dt,
        t_final: exp.t0 + n_steps as f64 * dt,
        wall_seconds: started.elapsed().as_secs_f64(),
        t_e,
        delta_max,
        delta_min_after_te,
        regression_residual_max_rel,
        eta_err_max_after_te: eta_err_max,
        eta_err_final: eta_err_last,
        phi_min_eig_final: crate::linalg::sym_min_eigenvalue(&bank.phi),
        margins,
        adj_residual_max: adj_max,
        kappa_err_peak_after_te: kappa_peak,
        kappa_err_final: (&obs.kappa_hat - &kappa_true).norm(),
        xdiff_peak_after_te: xdiff_peak,
        xdiff_final: (&obs.x_hat - &x_star).norm(),
        x_final: x,
        x_hat_final: obs.x_hat.clone(),
        x_star_final: x_star,
        kappa_hat_final: obs.kappa_hat.clone(),
        kappa_true,
    };
    info!("run finished in {:.1} s", summary.wall_seconds);
    Ok(RunArtifacts { tables: vec![plant_t, obs_t, base_t, chain_t, tap_t], summary })
}
