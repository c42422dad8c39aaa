use crate::error::{Error, Result};
use crate::ire::{self, IreConfig, IreState};
use crate::landscapes::{self, Landscape};
use crate::linalg;
use crate::optim::{Optimizer, OptimizerConfig};
use crate::rng;
use crate::theory::{self, PhiConfig};

/// One logged step of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub trace_hessian: f64,
    pub dist_to_manifold: Option<f64>,
    /// Selected coordinates of `θ_t`.
    pub coords: Vec<f64>,
    /// Cumulative gradient evaluations up to and including this step.
    pub grad_evals: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Converged,
    /// Finished the step budget without meeting the convergence test.
    Completed,
    Diverged {
        step: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub coord_indices: Vec<usize>,
    pub track_distance: bool,
    pub rows: Vec<TrajectoryRow>,
    pub status: RunStatus,
}

impl TrajectoryLog {
    pub fn new(coord_indices: Vec<usize>, track_distance: bool) -> Self {
        TrajectoryLog {
            coord_indices,
            track_distance,
            rows: Vec::new(),
            status: RunStatus::Completed,
        }
    }

    pub fn push(&mut self, row: TrajectoryRow) {
        debug_assert!(self
            .rows
            .last()
            .is_none_or(|r| r.step < row.step && r.grad_evals <= row.grad_evals));
        self.rows.push(row);
    }

    pub fn last(&self) -> Option<&TrajectoryRow> {
        self.rows.last()
    }

    /// Steps strictly increasing, evaluation counter non-decreasing.
    pub fn is_well_formed(&self) -> bool {
        self.rows
            .windows(2)
            .all(|w| w[0].step < w[1].step && w[0].grad_evals <= w[1].grad_evals)
    }
}

/// Settings of a logged optimization run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub steps: usize,
    pub log_every: usize,
    /// Coordinates of `θ_t` copied into every row.
    pub coord_indices: Vec<usize>,
    /// Log `|θ_t - Φ(θ_t)|` (one gradient-flow solve per logged row).
    pub track_distance: bool,
    /// Final loss at or below this marks the run as converged.
    pub converge_loss: f64,
    pub phi: PhiConfig,
}

impl RunSpec {
    pub fn new(steps: usize) -> Self {
        RunSpec {
            steps,
            log_every: 1,
            coord_indices: Vec::new(),
            track_distance: false,
            converge_loss: 1e-10,
            phi: PhiConfig::default(),
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.log_every == 0 {
            return Err(Error::InvalidConfig("log_every must be >= 1".into()));
        }
        if let Some(&i) = self.coord_indices.iter().find(|&&i| i >= dim) {
            return Err(Error::IndexOutOfRange {
                what: "logged coordinate",
                index: i,
                len: dim,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub log: TrajectoryLog,
    /// Last finite iterate.
    pub theta: Vec<f64>,
    pub ire_refreshes: u64,
}

fn row<L: Landscape + ?Sized>(
    l: &L,
    theta: &[f64],
    step: usize,
    grad_evals: u64,
    spec: &RunSpec,
) -> Result<TrajectoryRow> {
    let dist_to_manifold = if spec.track_distance {
        Some(theory::dist_to_manifold(l, theta, &spec.phi)?)
    } else {
        None
    };
    Ok(TrajectoryRow {
        step,
        loss: landscapes::loss(l, theta)?,
        grad_norm: linalg::norm(&landscapes::grad(l, theta)?),
        trace_hessian: theory::trace_hessian(l, theta)?,
        dist_to_manifold,
        coords: spec.coord_indices.iter().map(|&i| theta[i]).collect(),
        grad_evals,
    })
}

/// Runs `spec.steps` updates of the base optimizer, IRE-wrapped when `ire`
/// is given, logging row `0` (the start), every `log_every`-th step and the
/// last step.
///
/// Divergence is not an error: the log stops at the last finite row and the
/// status records the offending step.
pub fn run_trajectory<L: Landscape + ?Sized>(
    l: &L,
    theta0: &[f64],
    base: &OptimizerConfig,
    ire: Option<&IreConfig>,
    spec: &RunSpec,
    seed: u64,
) -> Result<RunOutcome> {
    if theta0.len() != l.dim() {
        return Err(Error::DimensionMismatch {
            expected: l.dim(),
            got: theta0.len(),
        });
    }
    spec.validate(l.dim())?;
    if let Some(c) = ire {
        c.validate()?;
    }
    let mut opt = Optimizer::new(base.clone(), l.dim())?;
    let mut ire_state = IreState::new(rng::stream_seed(seed, 1));
    let mut rng = rng::seeded(seed);
    let mut log = TrajectoryLog::new(spec.coord_indices.clone(), spec.track_distance);
    let mut theta = theta0.to_vec();
    log.push(row(l, &theta, 0, 0, spec)?);

    for t in 0..spec.steps {
        let next = match ire {
            Some(c) => ire::ire_step(c, &mut opt, l, &theta, t, &mut ire_state, &mut rng),
            None => opt.step(l, &theta, t, &mut rng),
        };
        let next = next.and_then(|x| landscapes::loss(l, &x).map(|_| x));
        match next {
            Ok(x) => theta = x,
            Err(e) if e.is_divergence() => {
                log::info!("run diverged at step {}: {e}", t + 1);
                log.status = RunStatus::Diverged { step: t + 1 };
                return Ok(RunOutcome {
                    log,
                    theta,
                    ire_refreshes: ire_state.refreshes,
                });
            }
            Err(e) => return Err(e),
        }
        let step = t + 1;
        if step % spec.log_every == 0 || step == spec.steps {
            match row(l, &theta, step, opt.grad_evals(), spec) {
                Ok(r) => log.push(r),
                Err(e) if e.is_divergence() => {
                    log.status = RunStatus::Diverged { step };
                    return Ok(RunOutcome {
                        log,
                        theta,
                        ire_refreshes: ire_state.refreshes,
                    });
                }
                Err(e) => return Err(e),
            }
        }
    }
    let final_loss = log.last().map(|r| r.loss).unwrap_or(f64::INFINITY);
    log.status = if final_loss <= spec.converge_loss {
        RunStatus::Converged
    } else {
        RunStatus::Completed
    };
    Ok(RunOutcome {
        log,
        theta,
        ire_refreshes: ire_state.refreshes,
    })
}
