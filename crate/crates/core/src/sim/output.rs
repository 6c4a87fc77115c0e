//! CSV export of run tables and plain-text plot data.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::sim::run::{RunArtifacts, RunSummary, Table};

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_table_csv(table: &Table, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(&table.columns)?;
    for row in &table.rows {
        w.write_record(row.iter().map(|v| fmt_num(*v)))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes one `<name>.csv` per table plus `summary.txt`; returns the paths.
pub fn write_csv(artifacts: &RunArtifacts, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    for t in &artifacts.tables {
        let p = dir.join(format!("{}.csv", t.name));
        write_table_csv(t, &p)?;
        out.push(p);
    }
    let p = dir.join("summary.txt");
    fs::write(&p, summary_text(&artifacts.summary))?;
    out.push(p);
    Ok(out)
}

pub fn summary_text(s: &RunSummary) -> String {
    let opt = |v: Option<f64>| v.map_or("none".to_string(), |x| format!("{x:.6}"));
    let vec = |v: &nalgebra::DVector<f64>| v.iter().map(|x| format!("{x:.9e}")).collect::<Vec<_>>().join(" ");
    let mut out = String::new();
    let mut line = |k: &str, v: String| out.push_str(&format!("{k:<28}{v}\n"));
    line("steps", s.steps.to_string());
    line("dt", fmt_num(s.dt));
    line("t_final", fmt_num(s.t_final));
    line("wall_seconds", format!("{:.3}", s.wall_seconds));
    line("t_e", opt(s.t_e));
    line("delta_max", format!("{:.6e}", s.delta_max));
    line("delta_min_after_te", format!("{:.6e}", s.delta_min_after_te));
    line("regression_residual_max_rel", format!("{:.6e}", s.regression_residual_max_rel));
    line("eta_err_max_after_te", format!("{:.6e}", s.eta_err_max_after_te));
    line("eta_err_final", format!("{:.6e}", s.eta_err_final));
    line("phi_min_eig_final", format!("{:.6e}", s.phi_min_eig_final));
    line("margins_passed", s.margins.passed().to_string());
    line("margins_min_delta", format!("{:.6e}", s.margins.min_delta));
    line("margins_min_m_ab", format!("{:.6e}", s.margins.min_m_lifted));
    line("margins_min_m_l", format!("{:.6e}", s.margins.min_m_gain));
    line("margins_min_m_kappa", format!("{:.6e}", s.margins.min_m_kappa));
    line("margins_sign_changes", s.margins.sign_changes.to_string());
    if let Some((t, msg)) = &s.margins.first_violation {
        line("margins_first_violation", format!("t = {t:.6}: {msg}"));
    }
    line("adj_residual_max", format!("{:.6e}", s.adj_residual_max));
    line("kappa_err_peak_after_te", format!("{:.6e}", s.kappa_err_peak_after_te));
    line("kappa_err_final", format!("{:.6e}", s.kappa_err_final));
    line("xdiff_peak_after_te", format!("{:.6e}", s.xdiff_peak_after_te));
    line("xdiff_final", format!("{:.6e}", s.xdiff_final));
    line("kappa_true", vec(&s.kappa_true));
    line("kappa_hat_final", vec(&s.kappa_hat_final));
    line("x_final", vec(&s.x_final));
    line("x_hat_final", vec(&s.x_hat_final));
    line("x_star_final", vec(&s.x_star_final));
    out
}

/// Divides a series by its largest magnitude; an all-zero series is returned as is.
pub fn normalize_by_max(series: &[f64]) -> Vec<f64> {
    let m = series.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if m == 0.0 {
        series.to_vec()
    } else {
        series.iter().map(|v| v / m).collect()
    }
}

fn render(columns: &[String], data: &[Vec<f64>]) -> String {
    let mut s = format!("# {}\n", columns.join(" "));
    let rows = data.first().map_or(0, Vec::len);
    for i in 0..rows {
        let line: Vec<String> = data.iter().map(|c| fmt_num(c[i])).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

fn nonempty<'a>(a: &'a RunArtifacts, name: &str) -> Result<&'a Table> {
    match a.table(name) {
        Some(t) if !t.rows.is_empty() => Ok(t),
        _ => Err(Error::Plot(format!("table {name:?} is missing or empty"))),
    }
}

fn col(t: &Table, name: &str) -> Result<Vec<f64>> {
    t.column(name).ok_or_else(|| Error::Plot(format!("table {:?} has no column {name:?}", t.name)))
}

/// Builds the plot-data files in memory: the filtered-regression overlay and
/// the normalized estimation errors (each series divided by its own maximum
/// magnitude over the full run).
pub fn plot_data(a: &RunArtifacts) -> Result<Vec<(String, String)>> {
    let taps = nonempty(a, "taps")?;
    let obs = nonempty(a, "observer")?;
    let base = nonempty(a, "baseline")?;
    if obs.rows.len() != base.rows.len() {
        return Err(Error::Plot("observer and baseline tables differ in length".into()));
    }

    let t = taps.times();
    let fe = col(taps, "phi_bar_f_eta")?;
    let lhs = col(taps, "filtered_regressand")?;
    let gap: Vec<f64> = lhs.iter().zip(&fe).map(|(a, b)| a - b).collect();
    let fig1 = render(
        &["t".into(), "phi_bar_f_eta".into(), "eps_f_plus_transient".into()],
        &[t, fe, gap],
    );

    let mut cols = vec!["t".to_string()];
    let mut data = vec![obs.times()];
    let nk = obs.columns.iter().filter(|c| c.starts_with("kappa_tilde")).count();
    for i in 1..=nk {
        cols.push(format!("kappa_tilde{i}"));
        data.push(normalize_by_max(&col(obs, &format!("kappa_tilde{i}"))?));
    }
    let ne = base.columns.iter().filter(|c| c.starts_with("x_star")).count();
    for i in 1..=ne {
        let xh = col(obs, &format!("x_hat{i}"))?;
        let xs = col(base, &format!("x_star{i}"))?;
        let d: Vec<f64> = xh.iter().zip(&xs).map(|(a, b)| a - b).collect();
        cols.push(format!("x_hat{i}_minus_star"));
        data.push(normalize_by_max(&d));
    }
    let dh = col(obs, "delta_hat")?;
    let ds = col(base, "delta_hat_star")?;
    let d: Vec<f64> = dh.iter().zip(&ds).map(|(a, b)| a - b).collect();
    cols.push("delta_hat_minus_star".into());
    data.push(normalize_by_max(&d));
    let fig2 = render(&cols, &data);

    Ok(vec![("fig1.dat".into(), fig1), ("fig2.dat".into(), fig2)])
}

/// Writes the plot-data files. Nothing is written unless every file could be
/// produced.
pub fn emit_plots(a: &RunArtifacts, dir: &Path) -> Result<Vec<PathBuf>> {
    let files = plot_data(a)?;
    fs::create_dir_all(dir)?;
    let mut staged = Vec::new();
    for (name, body) in &files {
        let tmp = dir.join(format!(".{name}.tmp"));
        if let Err(e) = fs::write(&tmp, body) {
            for (p, _) in &staged {
                let _ = fs::remove_file(p);
            }
            return Err(e.into());
        }
        staged.push((tmp, dir.join(name)));
    }
    let mut out = Vec::new();
    for (tmp, dst) in staged {
        fs::rename(&tmp, &dst)?;
        out.push(dst);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_series_normalizes_to_unit() {
        assert_eq!(normalize_by_max(&[-3.0, -3.0]), vec![-1.0, -1.0]);
        assert_eq!(normalize_by_max(&[0.0, 0.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn number_format_roundtrips() {
        for v in [0.1, -1e-300, 123_456_789.123_456_78, std::f64::consts::PI] {
            assert_eq!(fmt_num(v).parse::<f64>().unwrap(), v);
        }
    }
}
