//! CSV rendering. Numbers use Rust's shortest round-trip formatting, so output
//! is byte-identical for identical results; undefined values are empty cells.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::experiments::{DiagnosticsRow, EscapeRow, ExperimentOutput, RunOutcome, SweepRow, TableRow, TableSummary};
use crate::error::Result;

pub const TRAJECTORY_HEADER: &str = "seed,step,loss,lr,buf_variance,buf_cosine,cancel_index,path_dist";
pub const ESCAPE_HEADER: &str = "seed,s,dim,optimizer,escaped,final_loss,final_inf_norm";
pub const TABLE_HEADER: &str = "surface,optimizer,seed,final_loss,h_max,diverged";
pub const TABLE_SUMMARY_HEADER: &str = "surface,optimizer,mean_loss,mean_h_max,runs,diverged";
pub const SWEEP_HEADER: &str = "C,kappa,mode,alpha_star,beta_star,rho_star,one_minus_rho_star";
pub const DIAGNOSTICS_HEADER: &str = "seed,optimizer,mean_buf_variance,mean_buf_cosine,mean_cancel_index,path_dist,final_loss,h_max,m_sharpness,diverged";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Rows for runs of a single optimizer, sorted by `(seed, step)`.
pub fn trajectory_csv(runs: &[&RunOutcome]) -> String {
    let mut lines: Vec<(u64, usize, String)> = Vec::new();
    for r in runs {
        for rec in &r.records {
            lines.push((
                r.seed.0,
                rec.step,
                format!(
                    "{},{},{},{},{},{},{},{}",
                    r.seed.0,
                    rec.step,
                    rec.loss,
                    rec.lr,
                    opt(rec.buf_variance),
                    opt(rec.buf_cosine),
                    opt(rec.cancel_index),
                    rec.path_dist
                ),
            ));
        }
    }
    lines.sort_by_key(|(s, t, _)| (*s, *t));
    render(TRAJECTORY_HEADER, lines.into_iter().map(|l| l.2))
}

/// Full parameter snapshots: `seed,step,theta_0,...`.
pub fn theta_csv(runs: &[&RunOutcome]) -> String {
    let dim = runs.first().map_or(0, |r| r.initial_theta.dim());
    let mut header = String::from("seed,step");
    for k in 0..dim {
        let _ = write!(header, ",theta_{k}");
    }
    let mut lines: Vec<(u64, usize, String)> = Vec::new();
    for r in runs {
        let mut row0 = format!("{},0", r.seed.0);
        for x in r.initial_theta.iter() {
            let _ = write!(row0, ",{x}");
        }
        lines.push((r.seed.0, 0, row0));
        for rec in &r.records {
            if let Some(theta) = &rec.theta {
                let mut row = format!("{},{}", r.seed.0, rec.step);
                for x in theta.iter() {
                    let _ = write!(row, ",{x}");
                }
                lines.push((r.seed.0, rec.step, row));
            }
        }
    }
    lines.sort_by_key(|(s, t, _)| (*s, *t));
    render(&header, lines.into_iter().map(|l| l.2))
}

pub fn escape_csv(rows: &[EscapeRow]) -> String {
    render(
        ESCAPE_HEADER,
        rows.iter().map(|r| {
            format!(
                "{},{},{},{},{},{},{}",
                r.seed, r.s, r.dim, r.optimizer, r.escaped as u8, r.final_loss, r.final_inf_norm
            )
        }),
    )
}

pub fn table_csv(rows: &[TableRow]) -> String {
    render(
        TABLE_HEADER,
        rows.iter().map(|r| {
            format!(
                "{},{},{},{},{},{}",
                r.surface,
                r.optimizer,
                r.seed,
                r.final_loss,
                opt(r.h_max),
                r.diverged as u8
            )
        }),
    )
}

pub fn table_summary_csv(rows: &[TableSummary]) -> String {
    render(
        TABLE_SUMMARY_HEADER,
        rows.iter().map(|r| {
            format!(
                "{},{},{},{},{},{}",
                r.surface, r.optimizer, r.mean_loss, r.mean_h_max, r.runs, r.diverged
            )
        }),
    )
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    render(
        SWEEP_HEADER,
        rows.iter().map(|r| {
            format!(
                "{},{},{},{},{},{},{}",
                r.capacity,
                r.kappa,
                r.mode,
                r.alpha_star,
                r.beta_star,
                r.rho_star,
                1.0 - r.rho_star
            )
        }),
    )
}

pub fn diagnostics_csv(rows: &[DiagnosticsRow]) -> String {
    render(
        DIAGNOSTICS_HEADER,
        rows.iter().map(|r| {
            format!(
                "{},{},{},{},{},{},{},{},{},{}",
                r.seed,
                r.optimizer,
                opt(r.mean_buf_variance),
                opt(r.mean_buf_cosine),
                opt(r.mean_cancel_index),
                r.path_dist,
                r.final_loss,
                opt(r.h_max),
                opt(r.m_sharpness),
                r.diverged as u8
            )
        }),
    )
}

fn render(header: &str, rows: impl Iterator<Item = String>) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for r in rows {
        out.push_str(&r);
        out.push('\n');
    }
    out
}

/// Writes the CSV files for `output` into `dir` (created if missing) and
/// returns their paths.
///
/// Trajectories of a single optimizer go to `trajectory.csv`; with several,
/// each gets `trajectory_<label>.csv` (`_<index>` is appended on label clashes).
pub fn write_output(dir: &Path, output: &ExperimentOutput, record_theta: bool) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut files: Vec<(String, String)> = Vec::new();
    match output {
        ExperimentOutput::Trajectory(runs) => {
            let n_opt = runs.iter().map(|r| r.optimizer_index + 1).max().unwrap_or(0);
            for i in 0..n_opt {
                let mine: Vec<&RunOutcome> = runs.iter().filter(|r| r.optimizer_index == i).collect();
                let Some(first) = mine.first() else { continue };
                let label = &first.optimizer;
                let clash = runs.iter().any(|r| r.optimizer_index != i && &r.optimizer == label);
                let stem = match (n_opt, clash) {
                    (1, _) => "trajectory".to_string(),
                    (_, false) => format!("trajectory_{label}"),
                    (_, true) => format!("trajectory_{label}_{i}"),
                };
                files.push((format!("{stem}.csv"), trajectory_csv(&mine)));
                if record_theta {
                    let theta_name = stem.replacen("trajectory", "theta", 1);
                    files.push((format!("{theta_name}.csv"), theta_csv(&mine)));
                }
            }
        }
        ExperimentOutput::Escape(res) => files.push(("escape.csv".into(), escape_csv(&res.rows))),
        ExperimentOutput::Table(rows, summary) => {
            files.push(("table.csv".into(), table_csv(rows)));
            files.push(("table_summary.csv".into(), table_summary_csv(summary)));
        }
        ExperimentOutput::Sweep(rows) => files.push(("convergence.csv".into(), sweep_csv(rows))),
        ExperimentOutput::Diagnostics(rows) => files.push(("diagnostics.csv".into(), diagnostics_csv(rows))),
    }
    let mut paths = Vec::new();
    for (name, body) in files {
        let path = dir.join(name);
        fs::write(&path, body)?;
        paths.push(path);
    }
    Ok(paths)
}
