//! CSV writers.
//!
//! Floats are written as `{:.16e}`, which round-trips every finite `f64`.
//! A trajectory file ends with one status record: `status` in the first
//! column, then `converged`, `completed` or `diverged`, then the step at
//! which divergence was detected (empty otherwise), padded to the header
//! width.

use std::io::Write;
use std::path::Path;

use anyhow::Context as _;
use ire_core::trajectory::{RunStatus, TrajectoryLog};

pub fn float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn status_name(s: RunStatus) -> &'static str {
    match s {
        RunStatus::Converged => "converged",
        RunStatus::Completed => "completed",
        RunStatus::Diverged { .. } => "diverged",
    }
}

/// Column names for a trajectory log, optionally prefixed (e.g. `kappa`).
pub fn trajectory_header(log: &TrajectoryLog, prefix: &[&str]) -> Vec<String> {
    let mut h: Vec<String> = prefix.iter().map(|s| s.to_string()).collect();
    h.extend(["step", "loss", "grad_norm", "trace_hessian"].map(String::from));
    if log.track_distance {
        h.push("dist_to_manifold".into());
    }
    h.extend(log.coord_indices.iter().map(|i| format!("theta_{i}")));
    h.push("grad_evals".into());
    h
}

/// Data records and the closing status record of one log.
pub fn trajectory_records(log: &TrajectoryLog, prefix: &[String]) -> Vec<Vec<String>> {
    let width = trajectory_header(log, &[]).len() + prefix.len();
    let mut out = Vec::with_capacity(log.rows.len() + 1);
    for r in &log.rows {
        let mut rec = prefix.to_vec();
        rec.push(r.step.to_string());
        rec.extend([r.loss, r.grad_norm, r.trace_hessian].map(float));
        if let Some(d) = r.dist_to_manifold {
            rec.push(float(d));
        }
        rec.extend(r.coords.iter().map(|&x| float(x)));
        rec.push(r.grad_evals.to_string());
        out.push(rec);
    }
    let mut status = vec!["status".to_string(), status_name(log.status).to_string()];
    status.push(match log.status {
        RunStatus::Diverged { step } => step.to_string(),
        _ => String::new(),
    });
    let mut rec = prefix.to_vec();
    rec.extend(status);
    rec.resize(width, String::new());
    out.push(rec);
    out
}

pub fn write_records<W: Write>(
    w: W,
    header: &[String],
    records: &[Vec<String>],
) -> anyhow::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(header)?;
    for r in records {
        wr.write_record(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_file(path: &Path, header: &[String], records: &[Vec<String>]) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let f = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_records(std::io::BufWriter::new(f), header, records)
        .with_context(|| format!("writing {}", path.display()))
}

pub fn write_trajectory(path: &Path, log: &TrajectoryLog) -> anyhow::Result<()> {
    write_file(
        path,
        &trajectory_header(log, &[]),
        &trajectory_records(log, &[]),
    )
}
