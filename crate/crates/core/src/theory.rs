//! Effective-dynamics harness.
//!
//! Tools for checking, at desk scale, how SAM with flat-direction boosting
//! moves along the minima manifold: the gradient-flow limiting map `Φ`,
//! Riemannian gradients of the Hessian trace, the two-phase protocol
//! (gradient flow, then SAM-IRE), Monte-Carlo drift estimates, the label-noise
//! SDE toy model and scaling checks of the local-geometry lemmas.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ire;
use crate::landscapes::{self, Landscape};
use crate::linalg::{self, Projector};
use crate::optim::{self, OptimizerConfig, OptimizerKind};
use crate::rng::{self, Rng};
use crate::trajectory::{RunStatus, TrajectoryLog, TrajectoryRow};

/// Central-difference step for gradients of the Hessian trace.
pub const TRACE_FD_STEP: f64 = 1e-4;

const MIN_FLOW_STEP: f64 = 1e-12;
const FLOW_STEP_GROWTH: f64 = 2.0;

/// Gradient-flow integration settings.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiConfig {
    pub initial_step: f64,
    /// RK4 steps never exceed this length.
    pub max_step: f64,
    /// Local error tolerance per step, relative to `max(1, |θ|)`.
    pub local_tol: f64,
    /// Stop once `|∇L| <= grad_tol`.
    pub grad_tol: f64,
    pub max_time: f64,
}

impl Default for PhiConfig {
    fn default() -> Self {
        PhiConfig {
            initial_step: 1e-3,
            max_step: 1.0,
            local_tol: 1e-12,
            grad_tol: 1e-10,
            max_time: 1e6,
        }
    }
}

fn rk4_step<L: Landscape + ?Sized>(l: &L, x: &[f64], g: &[f64], h: f64) -> Result<Vec<f64>> {
    let k2 = landscapes::grad(l, &linalg::axpy(x, -h / 2.0, g))?;
    let k3 = landscapes::grad(l, &linalg::axpy(x, -h / 2.0, &k2))?;
    let k4 = landscapes::grad(l, &linalg::axpy(x, -h, &k3))?;
    Ok(x.iter()
        .enumerate()
        .map(|(i, xi)| xi - h / 6.0 * (g[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

/// Integrates `dθ/dt = -∇L(θ)` with RK4 until `stop(θ, ∇L(θ))` holds and
/// returns the final point with the elapsed flow time.
///
/// Each step is taken twice (one full step, two half steps); the difference
/// drives the step size and the Richardson-corrected value is kept. A step
/// that would increase the loss is halved and retried.
pub fn integrate_gradient_flow<L, F>(
    l: &L,
    theta: &[f64],
    cfg: &PhiConfig,
    mut stop: F,
) -> Result<(Vec<f64>, f64)>
where
    L: Landscape + ?Sized,
    F: FnMut(&[f64], &[f64]) -> bool,
{
    let mut x = theta.to_vec();
    let mut f = landscapes::loss(l, &x)?;
    let mut g = landscapes::grad(l, &x)?;
    let mut h = cfg.initial_step.min(cfg.max_step);
    let mut time = 0.0;
    loop {
        if stop(&x, &g) {
            return Ok((x, time));
        }
        if time >= cfg.max_time {
            return Err(Error::NonConvergence(format!(
                "gradient flow did not reach the stopping criterion within time {:e} (|∇L| = {:e})",
                cfg.max_time,
                linalg::norm(&g)
            )));
        }
        let full = rk4_step(l, &x, &g, h)?;
        let mid = rk4_step(l, &x, &g, h / 2.0)?;
        let two = rk4_step(l, &mid, &landscapes::grad(l, &mid)?, h / 2.0)?;
        let err = linalg::dist(&two, &full) / 15.0;
        let tol = cfg.local_tol * linalg::norm(&x).max(1.0);
        let factor = if err > 0.0 {
            0.9 * (tol / err).powf(0.2)
        } else {
            2.0
        };
        if err > tol && h > MIN_FLOW_STEP {
            h *= factor.max(0.2);
            continue;
        }
        let cand: Vec<f64> = two
            .iter()
            .zip(&full)
            .map(|(a, b)| a + (a - b) / 15.0)
            .collect();
        let fc = landscapes::loss(l, &cand)?;
        if fc > f && h > MIN_FLOW_STEP {
            h *= 0.5;
            continue;
        }
        x = cand;
        f = fc;
        g = landscapes::grad(l, &x)?;
        time += h;
        h = (h * factor.min(FLOW_STEP_GROWTH)).min(cfg.max_step);
    }
}

/// Limiting map `Φ(θ)` of gradient flow.
pub fn phi_limit<L: Landscape + ?Sized>(l: &L, theta: &[f64], cfg: &PhiConfig) -> Result<Vec<f64>> {
    let tol = cfg.grad_tol;
    integrate_gradient_flow(l, theta, cfg, |_, g| linalg::norm(g) <= tol).map(|(x, _)| x)
}

pub fn dist_to_manifold<L: Landscape + ?Sized>(
    l: &L,
    theta: &[f64],
    cfg: &PhiConfig,
) -> Result<f64> {
    let z = phi_limit(l, theta, cfg)?;
    Ok(linalg::dist(theta, &z))
}

/// Sharpness `Tr ∇²L(θ)`.
pub fn trace_hessian<L: Landscape + ?Sized>(l: &L, theta: &[f64]) -> Result<f64> {
    Ok(landscapes::diag_hessian(l, theta)?.iter().sum())
}

/// `∇ Tr ∇²L(θ)`: analytic when the landscape provides it, otherwise
/// central differences of [`trace_hessian`] with step [`TRACE_FD_STEP`].
pub fn trace_hessian_grad<L: Landscape + ?Sized>(l: &L, theta: &[f64]) -> Result<Vec<f64>> {
    if let Some(g) = l.eval_trace_hessian_grad(theta) {
        return Ok(g);
    }
    fd_trace_hessian_grad(l, theta)
}

pub fn fd_trace_hessian_grad<L: Landscape + ?Sized>(l: &L, theta: &[f64]) -> Result<Vec<f64>> {
    let mut x = theta.to_vec();
    let mut g = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        x[i] = theta[i] + TRACE_FD_STEP;
        let tp = trace_hessian(l, &x)?;
        x[i] = theta[i] - TRACE_FD_STEP;
        let tm = trace_hessian(l, &x)?;
        x[i] = theta[i];
        g.push((tp - tm) / (2.0 * TRACE_FD_STEP));
    }
    Ok(g)
}

fn sharp_dim_of<L: Landscape + ?Sized>(l: &L, m: Option<usize>) -> Result<usize> {
    m.or_else(|| l.sharp_dim())
        .ok_or(Error::Unsupported("a declared sharp dimension"))
}

/// `∇_M Tr[∇²L(z)/2] = P_{m+1:p}(∇²L(z)) ∇Tr[∇²L(z)] / 2` at an on-manifold `z`.
pub fn riemannian_trace_grad<L: Landscape + ?Sized>(
    l: &L,
    z: &[f64],
    m: usize,
) -> Result<Vec<f64>> {
    let proj = ire::flat_projector(l, z, m)?;
    let g = trace_hessian_grad(l, z)?;
    Ok(linalg::scale(&proj.apply(&g), 0.5))
}

// ---------------------------------------------------------------------------
// Two-phase protocol

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamVariant {
    /// Perturbation along a uniformly random unit direction.
    Average,
    /// Perturbation along the normalized gradient of one uniformly drawn sample.
    Standard,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoPhaseConfig {
    pub variant: SamVariant,
    pub rho: f64,
    pub eta: f64,
    pub kappa: f64,
    /// Phase II steps.
    pub steps: usize,
    /// Hitting radius constant `c`.
    pub hitting_const: f64,
    /// Exponent `α` in the standard-SAM radius `c η^{1-α} ρ`.
    pub alpha: f64,
    pub sharp_dim: Option<usize>,
    pub phi: PhiConfig,
    /// Record (and project onto the manifold) every this many steps.
    pub log_every: usize,
}

impl TwoPhaseConfig {
    pub fn new(variant: SamVariant, eta: f64, rho: f64, kappa: f64, steps: usize) -> Self {
        TwoPhaseConfig {
            variant,
            rho,
            eta,
            kappa,
            steps,
            hitting_const: 0.5,
            alpha: 0.5,
            sharp_dim: None,
            phi: PhiConfig::default(),
            log_every: 1,
        }
    }

    /// Distance to the manifold at which Phase I hands over to Phase II.
    pub fn hitting_radius(&self) -> f64 {
        match self.variant {
            SamVariant::Average => self.hitting_const * self.eta.sqrt() * self.rho,
            SamVariant::Standard => self.hitting_const * self.eta.powf(1.0 - self.alpha) * self.rho,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.rho > 0.0 && self.kappa >= 0.0) {
            return Err(Error::InvalidConfig(
                "two-phase run needs eta > 0, rho > 0, kappa >= 0".into(),
            ));
        }
        if self.log_every == 0 {
            return Err(Error::InvalidConfig("log_every must be >= 1".into()));
        }
        Ok(())
    }

    fn sam_config(&self) -> OptimizerConfig {
        let kind = match self.variant {
            SamVariant::Average => OptimizerKind::SamAverage,
            SamVariant::Standard => OptimizerKind::SamStandard,
        };
        OptimizerConfig::new(kind, self.eta).with_rho(self.rho)
    }
}

/// End of Phase I: the flow point `θ_I` and its limit `z = Φ(θ_0) = Φ(θ_I)`.
#[derive(Debug, Clone)]
pub struct PhaseOne {
    pub theta: Vec<f64>,
    pub z: Vec<f64>,
    pub flow_time: f64,
}

/// Runs gradient flow from `θ_0` until `|θ - Φ(θ_0)| <= radius`.
pub fn phase_one<L: Landscape + ?Sized>(
    l: &L,
    theta0: &[f64],
    radius: f64,
    phi: &PhiConfig,
) -> Result<PhaseOne> {
    let z = phi_limit(l, theta0, phi)?;
    let (theta, flow_time) =
        integrate_gradient_flow(l, theta0, phi, |x, _| linalg::dist(x, &z) <= radius)?;
    Ok(PhaseOne {
        theta,
        z,
        flow_time,
    })
}

/// One SAM-IRE update with the exact spectral projector.
pub fn phase_two_step<L: Landscape + ?Sized>(
    l: &L,
    theta: &[f64],
    cfg: &TwoPhaseConfig,
    m: usize,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let sam = cfg.sam_config();
    let g = match cfg.variant {
        SamVariant::Average => optim::sam_average_direction(&sam, l, theta, rng)?,
        SamVariant::Standard => optim::sam_standard_direction(&sam, l, theta, rng)?,
    };
    let d = if cfg.kappa == 0.0 {
        g
    } else {
        ire::exact_projection_direction(l, theta, m, cfg.kappa, &g)?
    };
    let next = optim::apply_step(theta, &d, cfg.eta);
    landscapes::loss(l, &next)?;
    Ok(next)
}

#[derive(Debug, Clone)]
pub struct TwoPhaseOutcome {
    pub phase_one: PhaseOne,
    /// Rows for Phase II steps (step 0 is the hand-over point).
    pub log: TrajectoryLog,
    /// `z_t = Φ(θ_t)` for every logged row.
    pub manifold_points: Vec<Vec<f64>>,
}

impl TwoPhaseOutcome {
    pub fn max_dist(&self) -> f64 {
        self.log
            .rows
            .iter()
            .filter_map(|r| r.dist_to_manifold)
            .fold(0.0, f64::max)
    }
}

/// Gradient flow to the hitting radius, then `steps` SAM-IRE updates.
pub fn two_phase_run<L: Landscape + ?Sized>(
    l: &L,
    theta0: &[f64],
    cfg: &TwoPhaseConfig,
    seed: u64,
) -> Result<TwoPhaseOutcome> {
    cfg.validate()?;
    let m = sharp_dim_of(l, cfg.sharp_dim)?;
    let p1 = phase_one(l, theta0, cfg.hitting_radius(), &cfg.phi)?;
    let mut log = TrajectoryLog::new(Vec::new(), true);
    let mut manifold_points = Vec::new();
    let mut rng = rng::seeded(seed);
    let mut theta = p1.theta.clone();
    let evals_per_step = 2 + u64::from(cfg.kappa != 0.0);

    let mut record = |t: usize, theta: &[f64], log: &mut TrajectoryLog| -> Result<()> {
        let z = phi_limit(l, theta, &cfg.phi)?;
        log.push(TrajectoryRow {
            step: t,
            loss: landscapes::loss(l, theta)?,
            grad_norm: linalg::norm(&landscapes::grad(l, theta)?),
            trace_hessian: trace_hessian(l, theta)?,
            dist_to_manifold: Some(linalg::dist(theta, &z)),
            coords: Vec::new(),
            grad_evals: t as u64 * evals_per_step,
        });
        manifold_points.push(z);
        Ok(())
    };

    record(0, &theta, &mut log)?;
    for t in 1..=cfg.steps {
        match phase_two_step(l, &theta, cfg, m, &mut rng) {
            Ok(next) => theta = next,
            Err(e) if e.is_divergence() => {
                log.status = RunStatus::Diverged { step: t };
                return Err(e);
            }
            Err(e) => return Err(e),
        }
        if t % cfg.log_every == 0 || t == cfg.steps {
            record(t, &theta, &mut log)?;
        }
    }
    Ok(TwoPhaseOutcome {
        phase_one: p1,
        log,
        manifold_points,
    })
}

// ---------------------------------------------------------------------------
// One-step drift of the effective dynamics

#[derive(Debug, Clone)]
pub struct DriftMeasurement {
    pub kappa: f64,
    pub repetitions: usize,
    /// Monte-Carlo mean of `Φ(θ_1) - z_0`.
    pub mean: Vec<f64>,
    /// Coordinatewise standard error of the mean.
    pub std_err: Vec<f64>,
    /// Theoretical drift `-(1+κ) η_eff ∇_M Tr[∇²L(z_0)/2]`.
    pub predicted: Vec<f64>,
    pub riemannian_grad: Vec<f64>,
}

impl DriftMeasurement {
    pub fn magnitude(&self) -> f64 {
        linalg::norm(&self.mean)
    }

    /// Cosine between the measured drift and `-∇_M Tr`.
    pub fn cosine_to_descent(&self) -> f64 {
        let neg: Vec<f64> = self.riemannian_grad.iter().map(|x| -x).collect();
        cosine(&self.mean, &neg)
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = linalg::norm(a);
    let nb = linalg::norm(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    linalg::dot(a, b) / (na * nb)
}

/// Effective learning rate of the trace descent for plain SAM.
pub fn effective_lr(variant: SamVariant, eta: f64, rho: f64, p: usize) -> f64 {
    match variant {
        SamVariant::Average => eta * rho * rho / p as f64,
        SamVariant::Standard => eta * rho * rho,
    }
}

/// Restarts Phase II from the same hand-over point `start` with `reps`
/// independent seeds and averages `Φ(θ_1) - Φ(start)`.
///
/// Repetition `r` draws from stream `(seed, r)`, so runs with different `κ`
/// but equal `seed` share their perturbations.
pub fn measure_drift<L: Landscape + ?Sized>(
    l: &L,
    start: &PhaseOne,
    cfg: &TwoPhaseConfig,
    reps: usize,
    seed: u64,
) -> Result<DriftMeasurement> {
    cfg.validate()?;
    if reps < 2 {
        return Err(Error::InvalidConfig(
            "drift needs at least two repetitions".into(),
        ));
    }
    let m = sharp_dim_of(l, cfg.sharp_dim)?;
    let z0 = &start.z;
    if landscapes::loss(l, z0)? > 1e-12 {
        return Err(Error::InvalidConfig(
            "drift base point is not on the manifold".into(),
        ));
    }
    let diffs: Vec<Vec<f64>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::stream(seed, r as u64);
            let next = phase_two_step(l, &start.theta, cfg, m, &mut rng)?;
            let z1 = phi_limit(l, &next, &cfg.phi)?;
            Ok(linalg::sub(&z1, z0))
        })
        .collect::<Result<_>>()?;
    let p = z0.len();
    let mean = landscapes::mean_of(&diffs, p);
    let mut var = vec![0.0; p];
    for d in &diffs {
        for i in 0..p {
            var[i] += (d[i] - mean[i]).powi(2);
        }
    }
    let std_err = var
        .iter()
        .map(|v| (v / (reps as f64 - 1.0) / reps as f64).sqrt())
        .collect();
    let rg = riemannian_trace_grad(l, z0, m)?;
    let coef = -(1.0 + cfg.kappa) * effective_lr(cfg.variant, cfg.eta, cfg.rho, p);
    Ok(DriftMeasurement {
        kappa: cfg.kappa,
        repetitions: reps,
        mean,
        std_err,
        predicted: linalg::scale(&rg, coef),
        riemannian_grad: rg,
    })
}

// ---------------------------------------------------------------------------
// Label-noise SDE toy model

/// Scalar curvature field `h(u) > 0` over the flat coordinates.
pub trait ScalarField: Send + Sync {
    fn value(&self, u: &[f64]) -> f64;
    fn grad(&self, u: &[f64]) -> Vec<f64>;
}

/// `h(u) = c`.
#[derive(Debug, Clone, Copy)]
pub struct ConstantField(pub f64);

impl ScalarField for ConstantField {
    fn value(&self, _u: &[f64]) -> f64 {
        self.0
    }
    fn grad(&self, u: &[f64]) -> Vec<f64> {
        vec![0.0; u.len()]
    }
}

/// `h(u) = 1 + |u|²`.
#[derive(Debug, Clone, Copy)]
pub struct OnePlusNormSq;

impl ScalarField for OnePlusNormSq {
    fn value(&self, u: &[f64]) -> f64 {
        1.0 + linalg::dot(u, u)
    }
    fn grad(&self, u: &[f64]) -> Vec<f64> {
        linalg::scale(u, 2.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdeConfig {
    pub sigma: f64,
    pub eta: f64,
    pub kappa: f64,
    pub dt: f64,
    pub horizon: f64,
    /// Keep every this many Euler steps in the returned path.
    pub record_every: usize,
    pub radius: f64,
}

impl SdeConfig {
    /// `Δt = η/20`.
    pub fn new(sigma: f64, eta: f64, kappa: f64, horizon: f64) -> Self {
        SdeConfig {
            sigma,
            eta,
            kappa,
            dt: eta / 20.0,
            horizon,
            record_every: 1,
            radius: landscapes::DEFAULT_RADIUS,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt <= self.eta / 10.0 * (1.0 + 1e-12)) {
            return Err(Error::InvalidConfig(format!(
                "SDE step {} must be positive and at most eta/10 = {}",
                self.dt,
                self.eta / 10.0
            )));
        }
        if !(self.sigma >= 0.0 && self.kappa >= 0.0 && self.horizon >= 0.0)
            || self.record_every == 0
        {
            return Err(Error::InvalidConfig("invalid SDE parameters".into()));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

#[derive(Debug, Clone)]
pub struct SdePath {
    pub dt: f64,
    pub times: Vec<f64>,
    pub u: Vec<Vec<f64>>,
    pub v: Vec<f64>,
    /// Time average of `v²` over every Euler step (not just recorded ones).
    pub mean_v_sq: f64,
}

/// Euler–Maruyama path of
///
/// ```text
/// du = -(1+κ) v² ∇h(u)/2 dt
/// dv = -v h(u) dt + sqrt(η σ² h(u)) dW
/// ```
pub fn sde_simulate<H: ScalarField + ?Sized>(
    h: &H,
    cfg: &SdeConfig,
    u0: &[f64],
    v0: f64,
    rng: &mut Rng,
) -> Result<SdePath> {
    cfg.validate()?;
    let n = cfg.steps();
    let sqrt_dt = cfg.dt.sqrt();
    let mut u = u0.to_vec();
    let mut v = v0;
    let mut path = SdePath {
        dt: cfg.dt,
        times: vec![0.0],
        u: vec![u.clone()],
        v: vec![v],
        mean_v_sq: 0.0,
    };
    let mut v_sq_acc = 0.0;
    for k in 1..=n {
        let hu = h.value(&u);
        if !(hu > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "curvature field must stay positive, got {hu}"
            )));
        }
        let gh = h.grad(&u);
        let z: f64 = StandardNormal.sample(rng);
        let drift_u = (1.0 + cfg.kappa) * v * v / 2.0;
        for (ui, gi) in u.iter_mut().zip(&gh) {
            *ui -= drift_u * gi * cfg.dt;
        }
        v += -v * hu * cfg.dt + (cfg.eta * cfg.sigma * cfg.sigma * hu).sqrt() * sqrt_dt * z;
        v_sq_acc += v * v;
        let r = (linalg::dot(&u, &u) + v * v).sqrt();
        if !r.is_finite() || r > cfg.radius {
            return Err(Error::Divergence(format!(
                "SDE path escaped at t = {}",
                k as f64 * cfg.dt
            )));
        }
        if k % cfg.record_every == 0 || k == n {
            path.times.push(k as f64 * cfg.dt);
            path.u.push(u.clone());
            path.v.push(v);
        }
    }
    path.mean_v_sq = if n > 0 { v_sq_acc / n as f64 } else { v * v };
    Ok(path)
}

/// Ensemble statistics of the flat-coordinate drift at (near) equilibrium.
#[derive(Debug, Clone)]
pub struct SdeDriftStats {
    pub kappa: f64,
    pub paths: usize,
    /// Ensemble mean of the window-averaged `v²`.
    pub v_variance: f64,
    /// Ensemble mean of `(u_end - u_start) / window` (first coordinate).
    pub du_dt: f64,
    pub du_dt_std_err: f64,
    /// Ensemble mean of the window-averaged `u` (first coordinate).
    pub mean_u: f64,
    /// Ensemble mean of the window-averaged `∂h/∂u_1`.
    pub mean_grad_h: f64,
}

/// Burns each path in for `burn_in` time units from `(u0, 0)` and then
/// measures the flat drift over `window` time units.
#[allow(clippy::too_many_arguments)]
pub fn sde_drift_ensemble<H: ScalarField + ?Sized>(
    h: &H,
    cfg: &SdeConfig,
    u0: &[f64],
    burn_in: f64,
    window: f64,
    paths: usize,
    seed: u64,
) -> Result<SdeDriftStats> {
    if paths < 2 || !(window > 0.0) {
        return Err(Error::InvalidConfig(
            "ensemble needs >= 2 paths and a positive window".into(),
        ));
    }
    let per_path: Vec<(f64, f64, f64, f64)> = (0..paths)
        .into_par_iter()
        .map(|k| {
            let mut rng = rng::stream(seed, k as u64);
            let burn = sde_simulate(
                h,
                &SdeConfig {
                    horizon: burn_in,
                    record_every: usize::MAX,
                    ..cfg.clone()
                },
                u0,
                0.0,
                &mut rng,
            )?;
            let u_start = burn.u.last().cloned().unwrap_or_else(|| u0.to_vec());
            let v_start = *burn.v.last().unwrap_or(&0.0);
            let win = sde_simulate(
                h,
                &SdeConfig {
                    horizon: window,
                    record_every: 1,
                    ..cfg.clone()
                },
                &u_start,
                v_start,
                &mut rng,
            )?;
            let u_end = win.u.last().expect("non-empty path")[0];
            let count = win.u.len() as f64;
            let mean_u = win.u.iter().map(|x| x[0]).sum::<f64>() / count;
            let mean_gh = win.u.iter().map(|x| h.grad(x)[0]).sum::<f64>() / count;
            Ok((
                (u_end - u_start[0]) / window,
                win.mean_v_sq,
                mean_u,
                mean_gh,
            ))
        })
        .collect::<Result<_>>()?;
    let n = paths as f64;
    let du_dt = per_path.iter().map(|x| x.0).sum::<f64>() / n;
    let var = per_path.iter().map(|x| (x.0 - du_dt).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(SdeDriftStats {
        kappa: cfg.kappa,
        paths,
        v_variance: per_path.iter().map(|x| x.1).sum::<f64>() / n,
        du_dt,
        du_dt_std_err: (var / n).sqrt(),
        mean_u: per_path.iter().map(|x| x.2).sum::<f64>() / n,
        mean_grad_h: per_path.iter().map(|x| x.3).sum::<f64>() / n,
    })
}

// ---------------------------------------------------------------------------
// Local geometry near the manifold

#[derive(Debug, Clone, PartialEq)]
pub struct LemmaConfig {
    pub deltas: Vec<f64>,
    /// Random unit directions per radius.
    pub directions: usize,
    pub seed: u64,
    pub phi: PhiConfig,
}

impl Default for LemmaConfig {
    fn default() -> Self {
        LemmaConfig {
            deltas: vec![1e-1, 1e-2, 1e-3, 1e-4],
            directions: 8,
            seed: 17,
            phi: PhiConfig {
                grad_tol: 1e-13,
                local_tol: 1e-14,
                ..PhiConfig::default()
            },
        }
    }
}

/// Measurements at one perturbation `θ = z + δw`.
#[derive(Debug, Clone)]
pub struct LemmaSample {
    pub delta: f64,
    pub dist: f64,
    pub grad_norm: f64,
    pub loss: f64,
    /// `|P(θ) - P(Φ(θ))|_F`
    pub projector_gap: f64,
    /// `|P(θ) ∇L(θ)|`
    pub projected_grad: f64,
    /// `|Φ(z + δw) - z - P(z) δw|`
    pub tangency_remainder: f64,
    /// `λ_m(∇²L(θ))` and `λ_1(∇²L(θ))`.
    pub lambda_m: f64,
    pub lambda_1: f64,
}

#[derive(Debug, Clone)]
pub struct LemmaReport {
    pub samples: Vec<LemmaSample>,
    pub projector_gap_exponent: f64,
    pub projected_grad_exponent: f64,
    pub tangency_exponent: f64,
    /// Fitted local PL / curvature constant.
    pub mu: f64,
    /// Fitted smoothness constant.
    pub beta: f64,
    /// Per-radius `(δ, min λ_m, max λ_1)`.
    pub per_delta_constants: Vec<(f64, f64, f64)>,
    pub violations: Vec<String>,
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn fit_exponent(xs: &[f64], ys: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    let n = pts.len() as f64;
    if n < 2.0 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

fn geometric_mean(xs: &[f64]) -> f64 {
    (xs.iter()
        .map(|x| x.max(f64::MIN_POSITIVE).ln())
        .sum::<f64>()
        / xs.len() as f64)
        .exp()
}

fn projector_at<L: Landscape + ?Sized>(
    l: &L,
    theta: &[f64],
    m: usize,
) -> Result<(Projector, f64, f64)> {
    let h = landscapes::hessian(l, theta)?;
    let e = linalg::sym_eigh(&h)?;
    let proj = linalg::spectral_projector(&e, m + 1, l.dim())?;
    Ok((proj, e.eigvals[m - 1], e.eigvals[0]))
}

/// Samples perturbations of an on-manifold point `z` at shrinking radii and
/// fits the scaling of the projector gap, the projected gradient and the
/// tangency remainder of `Φ`; checks the distance / gradient / loss
/// sandwich inequalities at every sample.
pub fn lemma_property_suite<L: Landscape + ?Sized>(
    l: &L,
    z: &[f64],
    m: usize,
    cfg: &LemmaConfig,
) -> Result<LemmaReport> {
    if landscapes::loss(l, z)? > 1e-12 {
        return Err(Error::InvalidConfig(
            "lemma base point is not on the manifold".into(),
        ));
    }
    let (p_z, _, _) = projector_at(l, z, m)?;
    let mut rng = rng::seeded(cfg.seed);
    let dirs: Vec<Vec<f64>> = (0..cfg.directions)
        .map(|_| optim::random_unit_vector(z.len(), &mut rng))
        .collect();

    let mut samples = Vec::new();
    for &delta in &cfg.deltas {
        for w in &dirs {
            let theta = linalg::axpy(z, delta, w);
            let phi = phi_limit(l, &theta, &cfg.phi)?;
            let g = landscapes::grad(l, &theta)?;
            let (p_theta, lambda_m, lambda_1) = projector_at(l, &theta, m)?;
            let (p_phi, _, _) = projector_at(l, &phi, m)?;
            let tangent_step = linalg::scale(&p_z.apply(w), delta);
            let predicted = linalg::add(z, &tangent_step);
            samples.push(LemmaSample {
                delta,
                dist: linalg::dist(&theta, &phi),
                grad_norm: linalg::norm(&g),
                loss: landscapes::loss(l, &theta)?,
                projector_gap: p_theta.distance(&p_phi),
                projected_grad: linalg::norm(&p_theta.apply(&g)),
                tangency_remainder: linalg::dist(&phi, &predicted),
                lambda_m,
                lambda_1,
            });
        }
    }

    let per_delta: Vec<(f64, Vec<&LemmaSample>)> = cfg
        .deltas
        .iter()
        .map(|&d| (d, samples.iter().filter(|s| s.delta == d).collect()))
        .collect();
    let fit = |f: &dyn Fn(&LemmaSample) -> f64| {
        let ys: Vec<f64> = per_delta
            .iter()
            .map(|(_, ss)| geometric_mean(&ss.iter().map(|s| f(s)).collect::<Vec<_>>()))
            .collect();
        fit_exponent(&cfg.deltas, &ys)
    };
    let projector_gap_exponent = fit(&|s| s.projector_gap);
    let projected_grad_exponent = fit(&|s| s.projected_grad);
    let tangency_exponent = fit(&|s| s.tangency_remainder);

    let per_delta_constants: Vec<(f64, f64, f64)> = per_delta
        .iter()
        .map(|(d, ss)| {
            let lo = ss.iter().map(|s| s.lambda_m).fold(f64::INFINITY, f64::min);
            let hi = ss.iter().map(|s| s.lambda_1).fold(0.0, f64::max);
            (*d, lo, hi)
        })
        .collect();
    let mu_raw = per_delta_constants
        .iter()
        .map(|c| c.1)
        .fold(f64::INFINITY, f64::min);
    let beta_raw = per_delta_constants.iter().map(|c| c.2).fold(0.0, f64::max);
    // Normalized so that mu < 1 < beta, with a factor-2 margin for the
    // neighbourhood beyond the sampled radii.
    let mu = 0.5 * mu_raw.min(1.0 / beta_raw);
    let beta = 2.0 * beta_raw.max(1.0 / mu_raw);

    let mut violations = Vec::new();
    for s in &samples {
        let checks = [
            ("mu*|grad| <= dist", mu * s.grad_norm <= s.dist),
            ("dist <= beta*|grad|", s.dist <= beta * s.grad_norm),
            (
                "2*mu*L <= |grad|^2",
                2.0 * mu * s.loss <= s.grad_norm.powi(2),
            ),
            (
                "|grad|^2 <= 2*beta^2/mu*L",
                s.grad_norm.powi(2) <= 2.0 * beta * beta / mu * s.loss,
            ),
            ("mu/2*dist^2 <= L", mu / 2.0 * s.dist.powi(2) <= s.loss),
            (
                "L <= beta^2/(2mu)*dist^2",
                s.loss <= beta * beta / (2.0 * mu) * s.dist.powi(2),
            ),
        ];
        for (name, ok) in checks {
            if !ok {
                violations.push(format!("{name} at delta = {:e}", s.delta));
            }
        }
    }

    Ok(LemmaReport {
        samples,
        projector_gap_exponent,
        projected_grad_exponent,
        tangency_exponent,
        mu,
        beta,
        per_delta_constants,
        violations,
    })
}

/// Central-difference directional derivative of `Φ` along `∇L(θ)`, with a
/// perturbation of norm `step`. Returns `(|∂Φ(θ)∇L(θ)|, |∇L(θ)|)`.
pub fn flow_orthogonality<L: Landscape + ?Sized>(
    l: &L,
    theta: &[f64],
    step: f64,
    phi: &PhiConfig,
) -> Result<(f64, f64)> {
    let g = landscapes::grad(l, theta)?;
    let gn = linalg::norm(&g);
    if gn == 0.0 {
        return Ok((0.0, 0.0));
    }
    let eps = step / gn;
    let plus = phi_limit(l, &linalg::axpy(theta, eps, &g), phi)?;
    let minus = phi_limit(l, &linalg::axpy(theta, -eps, &g), phi)?;
    let deriv = linalg::scale(&linalg::sub(&plus, &minus), 1.0 / (2.0 * eps));
    Ok((linalg::norm(&deriv), gn))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landscapes::{QuadraticValley, Toy2D};

    #[test]
    fn fixed_point_of_flow() {
        let v = QuadraticValley::default_theory();
        let mut z = vec![0.0; 10];
        z[0] = 0.3;
        let phi = phi_limit(&v, &z, &PhiConfig::default()).unwrap();
        assert!(linalg::dist(&phi, &z) <= 1e-10);
    }

    #[test]
    fn toy_axis_is_invariant() {
        let d = dist_to_manifold(&Toy2D, &[0.0, 0.3], &PhiConfig::default()).unwrap();
        assert!((d - 0.3).abs() < 1e-10);
    }

    #[test]
    fn constant_valley_flow_decouples() {
        let v = QuadraticValley::constant(5, vec![1.0, 2.0]).unwrap();
        let theta = [0.1, -0.2, 0.3, 0.4, -0.5];
        let phi = phi_limit(&v, &theta, &PhiConfig::default()).unwrap();
        assert_eq!(&phi[..3], &theta[..3]);
        assert!(phi[3].abs() < 1e-10 && phi[4].abs() < 1e-10);
    }

    #[test]
    fn trace_examples() {
        assert_eq!(trace_hessian(&Toy2D, &[0.7, 0.0]).unwrap(), 1.0 + 0.49);
        let v = QuadraticValley::default_theory();
        let mut z = vec![0.0; 10];
        z[1] = 0.5;
        assert_eq!(trace_hessian(&v, &z).unwrap(), 6.0 + 3.0 * 0.25);
    }

    #[test]
    fn riemannian_grad_single_sharp_direction() {
        let v = QuadraticValley::shifted(4, vec![1.0]).unwrap();
        let z = [0.2, -0.4, 0.1, 0.0];
        let rg = riemannian_trace_grad(&v, &z, 1).unwrap();
        let expected = [0.2, -0.4, 0.1, 0.0];
        for i in 0..4 {
            assert!((rg[i] - expected[i]).abs() < 1e-12);
        }
        let c = QuadraticValley::constant(4, vec![1.0]).unwrap();
        assert!(riemannian_trace_grad(&c, &z, 1)
            .unwrap()
            .iter()
            .all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn hitting_radii() {
        let a = TwoPhaseConfig::new(SamVariant::Average, 0.01, 0.05, 0.0, 0);
        assert!((a.hitting_radius() - 0.5 * 0.1 * 0.05).abs() < 1e-15);
        let s = TwoPhaseConfig::new(SamVariant::Standard, 0.01, 0.05, 0.0, 0);
        assert!((s.hitting_radius() - 0.5 * 0.1 * 0.05).abs() < 1e-15);
    }

    #[test]
    fn sde_rejects_coarse_step() {
        let mut cfg = SdeConfig::new(1.0, 0.01, 0.0, 1.0);
        cfg.dt = 0.01;
        assert!(sde_simulate(&ConstantField(1.0), &cfg, &[0.0], 0.0, &mut rng::seeded(0)).is_err());
    }

    #[test]
    fn sde_flat_field_keeps_u() {
        let cfg = SdeConfig::new(1.0, 0.01, 3.0, 1.0);
        let path = sde_simulate(
            &ConstantField(2.0),
            &cfg,
            &[0.7, -0.1],
            0.0,
            &mut rng::seeded(5),
        )
        .unwrap();
        assert!(path.u.iter().all(|u| u == &vec![0.7, -0.1]));
    }

    #[test]
    fn exponent_fit_recovers_power() {
        let xs = [1e-1, 1e-2, 1e-3];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powi(2)).collect();
        assert!((fit_exponent(&xs, &ys) - 2.0).abs() < 1e-12);
    }
}
