use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use log::info;

use extobs_core::sim::output::{emit_plots, write_csv};
use extobs_core::sim::verify::{verify_experiment, VerifyOptions};
use extobs_core::sim::config::Experiment;
use extobs_core::{simulate, Error, ExperimentConfig};

#[derive(Parser, Debug)]
#[command(name = "extobs", version, about = "Adaptive observer for LTI plants with unknown parameters and disturbance")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Experiment TOML; the built-in demo when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the integration step.
    #[arg(long)]
    dt: Option<f64>,
    /// Override the final time.
    #[arg(long = "t-final")]
    t_final: Option<f64>,
    /// Seed for randomized checks.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the closed-loop simulation and write CSV tables, a summary and plot data.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the self-checks; exits with status 1 if any fails.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Skip the simulation-based checks.
        #[arg(long)]
        no_sim: bool,
        /// Heterogeneity probes per mapping.
        #[arg(long, default_value_t = 1000)]
        probes: usize,
    },
    /// Print the observer gain and the filter pairing vector for the configured parameters.
    Gain {
        #[command(flatten)]
        common: Common,
    },
    /// Run the simulation and write only the plot data files.
    Plots {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Failure classes mapped onto exit codes.
enum Failure {
    Check(anyhow::Error),
    Config(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Check(e)
    }
}

fn load(common: &Common) -> Result<(ExperimentConfig, Experiment), Failure> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::from_path(p)
            .with_context(|| format!("reading {}", p.display()))
            .map_err(Failure::Config)?,
        None => ExperimentConfig::demo(),
    };
    if let Some(dt) = common.dt {
        cfg.run.dt = dt.into();
    }
    if let Some(tf) = common.t_final {
        cfg.run.t_final = tf.into();
    }
    let exp = cfg.build().map_err(|e| Failure::Config(e.into()))?;
    Ok((cfg, exp))
}

fn out_dir(cfg: &ExperimentConfig, out: &Option<PathBuf>) -> PathBuf {
    out.clone().or_else(|| cfg.run.out_dir.as_ref().map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("out"))
}

fn run_simulation(cfg: &ExperimentConfig, dir: &Path, tables: bool) -> Result<(), Failure> {
    let art = simulate(cfg).map_err(|e| match e {
        Error::Config(_) => Failure::Config(e.into()),
        other => Failure::Check(other.into()),
    })?;
    let mut written = Vec::new();
    if tables {
        written.extend(write_csv(&art, dir).context("writing tables")?);
    }
    written.extend(emit_plots(&art, dir).context("writing plot data")?);
    for p in &written {
        info!("wrote {}", p.display());
    }
    let s = &art.summary;
    println!("steps {}  wall {:.2} s", s.steps, s.wall_seconds);
    match s.t_e {
        Some(t) => println!("t_e = {t:.4}"),
        None => println!("t_e = none (excitation never reached rho)"),
    }
    println!("final |kappa error| = {:.3e}, final |x_hat - x_star| = {:.3e}", s.kappa_err_final, s.xdiff_final);
    println!("output in {}", dir.display());
    Ok(())
}

fn fmt_vec(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.10}")).collect::<Vec<_>>().join(", ")
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate { common, out } => {
            let (cfg, _) = load(&common)?;
            run_simulation(&cfg, &out_dir(&cfg, &out), true)
        }
        Command::Plots { common, out } => {
            let (cfg, _) = load(&common)?;
            run_simulation(&cfg, &out_dir(&cfg, &out), false)
        }
        Command::Gain { common } => {
            let (_, exp) = load(&common)?;
            println!("L     = [{}]", fmt_vec(exp.gain.l.as_slice()));
            println!("beta  = [{}]", fmt_vec(exp.filter.beta.as_slice()));
            let eig = extobs_core::linalg::eigenvalues(&extobs_core::chain::closed_loop(&exp.ext, &exp.gain.l));
            let eig: Vec<String> = eig.iter().map(|c| format!("{:.6}{:+.6}i", c.re, c.im)).collect();
            println!("eig(A_m) = [{}]", eig.join(", "));
            Ok(())
        }
        Command::Verify { common, no_sim, probes } => {
            let (_, exp) = load(&common)?;
            let opts = VerifyOptions { seed: common.seed, hetero_probes: probes, simulate: !no_sim, ..Default::default() };
            let report = verify_experiment(&exp, &opts).map_err(|e| Failure::Check(e.into()))?;
            for c in &report.checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            if report.passed() {
                Ok(())
            } else {
                let names: Vec<&str> = report.failures().map(|c| c.name.as_str()).collect();
                Err(Failure::Check(anyhow::anyhow!("failed checks: {}", names.join(", "))))
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Config(e)) => {
            eprintln!("configuration error: {e:#}");
            ExitCode::from(2)
        }
    }
}
