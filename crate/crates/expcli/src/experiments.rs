//! The `run`, `sweep` and `toy` subcommands.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use ire_core::trajectory::{run_trajectory, RunOutcome, RunStatus};

use crate::config::ExperimentConfig;
use crate::error::ConfigError;
use crate::output::{self, float};
use crate::setup::prepare;
use crate::verify;

/// Why a subcommand did not produce its result.
#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

impl From<ire_core::Error> for RunError {
    fn from(e: ire_core::Error) -> Self {
        RunError::Runtime(e.into())
    }
}

fn resolve(out_dir: &Path, file: Option<&PathBuf>, default: &str) -> PathBuf {
    match file {
        Some(f) if f.is_absolute() => f.clone(),
        Some(f) => out_dir.join(f),
        None => out_dir.join(default),
    }
}

pub fn run_config(cfg: &ExperimentConfig) -> Result<RunOutcome, RunError> {
    let p = prepare(cfg)?;
    Ok(run_trajectory(
        p.landscape.as_ref(),
        &p.theta0,
        &p.optimizer,
        p.ire.as_ref(),
        &p.spec,
        p.seed,
    )?)
}

/// Runs one configuration and writes its trajectory CSV.
pub fn run(cfg: &ExperimentConfig, out_dir: &Path) -> Result<(PathBuf, RunStatus), RunError> {
    let out = run_config(cfg)?;
    let path = resolve(out_dir, cfg.run.output.as_ref(), "run.csv");
    output::write_trajectory(&path, &out.log)?;
    Ok((path, out.log.status))
}

/// One grid point; `None` keeps the base value.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Cell {
    pub kappa: Option<f64>,
    pub gamma: Option<f64>,
    pub refresh: Option<usize>,
    pub lr: Option<f64>,
    pub rho: Option<f64>,
}

impl Cell {
    pub fn apply(&self, base: &ExperimentConfig) -> ExperimentConfig {
        let mut c = base.clone();
        c.sweep = None;
        if let Some(ire) = c.ire.as_mut() {
            ire.kappa = self.kappa.unwrap_or(ire.kappa);
            ire.gamma = self.gamma.unwrap_or(ire.gamma);
            ire.refresh = self.refresh.unwrap_or(ire.refresh);
        }
        c.optimizer.lr = self.lr.unwrap_or(c.optimizer.lr);
        c.optimizer.rho = self.rho.or(c.optimizer.rho);
        c
    }
}

/// Cartesian product of the sweep axes, last axis fastest.
pub fn grid(cfg: &ExperimentConfig) -> Vec<Cell> {
    let Some(sw) = &cfg.sweep else {
        return Vec::new();
    };
    if [
        sw.kappa.is_some(),
        sw.gamma.is_some(),
        sw.refresh.is_some(),
        sw.lr.is_some(),
        sw.rho.is_some(),
    ]
    .iter()
    .all(|b| !b)
    {
        return Vec::new();
    }
    fn axis<T: Copy>(v: &Option<Vec<T>>) -> Vec<Option<T>> {
        match v {
            Some(xs) => xs.iter().map(|&x| Some(x)).collect(),
            None => vec![None],
        }
    }
    let mut cells = Vec::new();
    for &kappa in &axis(&sw.kappa) {
        for &gamma in &axis(&sw.gamma) {
            for &refresh in &axis(&sw.refresh) {
                for &lr in &axis(&sw.lr) {
                    for &rho in &axis(&sw.rho) {
                        cells.push(Cell {
                            kappa,
                            gamma,
                            refresh,
                            lr,
                            rho,
                        });
                    }
                }
            }
        }
    }
    cells
}

pub const SWEEP_HEADER: [&str; 12] = [
    "cell",
    "kappa",
    "gamma",
    "refresh",
    "lr",
    "rho",
    "status",
    "steps",
    "final_loss",
    "final_trace",
    "grad_evals",
    "error",
];

fn sweep_record(index: usize, cfg: &ExperimentConfig) -> Vec<String> {
    let opt_f = |x: Option<f64>| x.map(float).unwrap_or_default();
    let ire = cfg.ire.as_ref();
    let mut rec = vec![
        index.to_string(),
        opt_f(ire.map(|i| i.kappa)),
        opt_f(ire.map(|i| i.gamma)),
        ire.map(|i| i.refresh.to_string()).unwrap_or_default(),
        float(cfg.optimizer.lr),
        opt_f(cfg.optimizer.rho),
    ];
    match run_config(cfg) {
        Ok(out) => {
            let last = out.log.last().expect("start row is always logged");
            let steps = match out.log.status {
                RunStatus::Diverged { step } => step,
                _ => last.step,
            };
            rec.push(output::status_name(out.log.status).into());
            rec.push(steps.to_string());
            rec.extend([last.loss, last.trace_hessian].map(float));
            rec.push(last.grad_evals.to_string());
            rec.push(String::new());
        }
        Err(e) => {
            rec.push("error".into());
            rec.extend(std::iter::repeat_n(String::new(), 4));
            rec.push(e.to_string());
        }
    }
    rec
}

/// Summary records of every grid cell, in grid order. Work is spread over
/// the current rayon pool; the result does not depend on its size.
pub fn sweep_records(cfg: &ExperimentConfig) -> Vec<Vec<String>> {
    grid(cfg)
        .par_iter()
        .enumerate()
        .map(|(i, cell)| sweep_record(i, &cell.apply(cfg)))
        .collect()
}

pub fn sweep(
    cfg: &ExperimentConfig,
    out_dir: &Path,
) -> Result<(PathBuf, Vec<Vec<String>>), RunError> {
    let records = sweep_records(cfg);
    let path = resolve(out_dir, cfg.run.output.as_ref(), "sweep.csv");
    let header: Vec<String> = SWEEP_HEADER.iter().map(|s| s.to_string()).collect();
    output::write_file(&path, &header, &records)?;
    Ok((path, records))
}

pub const TOY_FILES: [&str; 3] = ["toy_gd_eta1.csv", "toy_gd_eta2.csv", "toy_ire_kappa.csv"];

/// Writes the three Toy2D trajectory files into `out_dir`.
pub fn toy(out_dir: &Path, kappas: &[f64]) -> Result<Vec<PathBuf>, RunError> {
    let mut paths = Vec::new();
    for (eta, file) in [(1.0, TOY_FILES[0]), (2.0, TOY_FILES[1])] {
        let out = verify::toy_gd_run(eta, 500)?;
        let path = out_dir.join(file);
        output::write_trajectory(&path, &out.log)?;
        paths.push(path);
    }
    let runs: Vec<_> = kappas
        .par_iter()
        .map(|&k| verify::toy_ire_run(k, 0.5, 2000, 1))
        .collect::<Result<_, _>>()?;
    let mut header = Vec::new();
    let mut records = Vec::new();
    for (k, out) in kappas.iter().zip(&runs) {
        header = output::trajectory_header(&out.log, &["kappa"]);
        records.extend(output::trajectory_records(&out.log, &[float(*k)]));
    }
    let path = out_dir.join(TOY_FILES[2]);
    output::write_file(&path, &header, &records)?;
    paths.push(path);
    Ok(paths)
}
