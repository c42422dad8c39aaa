//! Implicit regularization enhancement.
//!
//! Wraps any base optimizer so that the components of its direction along
//! flat directions are amplified:
//!
//! ```text
//! θ_{t+1} = θ_t - η_t (g_t + κ P_t g_t)
//! ```
//!
//! In practice `P_t g_t = n_t ⊙ g_t`, where the mask `n_t` keeps the `⌊pγ⌋`
//! coordinates with the smallest estimated diagonal curvature. The mask is
//! refreshed every `K` steps after warm-up and reused in between. The exact
//! spectral variant uses `P_t = P_{m+1:p}(∇²L(θ_t))` instead.

use crate::error::{Error, Result};
use crate::landscapes::{self, Landscape};
use crate::linalg::{self, Projector};
use crate::optim::{apply_step, Optimizer};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    /// `B · ∇L̂_B ⊙ ∇L̂_B` with labels sampled from the model.
    Fisher,
    /// Exact (or finite-difference) Hessian diagonal.
    ExactDiag,
    /// Projector onto the bottom `p - m` Hessian eigenvectors.
    ExactSpectral,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IreConfig {
    pub kappa: f64,
    pub gamma: f64,
    pub refresh_period: usize,
    /// Step index at which the enhancement switches on.
    pub warmup_steps: Option<usize>,
    /// Alternative trigger: switch on once the loss falls to this level.
    /// Whichever trigger fires first wins.
    pub warmup_loss: Option<f64>,
    pub estimator: Estimator,
    /// Sharp dimension `m` for the spectral estimator; defaults to the
    /// landscape's declared value.
    pub sharp_dim: Option<usize>,
}

impl IreConfig {
    pub fn new(kappa: f64, gamma: f64, estimator: Estimator) -> Self {
        IreConfig {
            kappa,
            gamma,
            refresh_period: 1,
            warmup_steps: Some(0),
            warmup_loss: None,
            estimator,
            sharp_dim: None,
        }
    }

    pub fn with_refresh(mut self, k: usize) -> Self {
        self.refresh_period = k;
        self
    }

    pub fn with_warmup(mut self, t: usize) -> Self {
        self.warmup_steps = Some(t);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa >= 0.0) || !self.kappa.is_finite() {
            return Err(Error::InvalidConfig("kappa must be finite and >= 0".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidConfig("gamma must lie in (0, 1)".into()));
        }
        if self.refresh_period == 0 {
            return Err(Error::InvalidConfig("refresh period must be >= 1".into()));
        }
        if self.gamma < 0.5 {
            log::warn!(
                "gamma = {} below 0.5 keeps fewer flat than sharp coordinates",
                self.gamma
            );
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagHessianEstimate {
    pub h: Vec<f64>,
    pub source: Estimator,
    pub step: usize,
}

/// Fisher diagonal from a mean sampled-label gradient over a batch of `b`.
pub fn fisher_from_mean_grad(mean_grad: &[f64], batch: usize) -> Vec<f64> {
    mean_grad.iter().map(|g| batch as f64 * g * g).collect()
}

/// `h = B · g ⊙ g` with `g` the batch-mean gradient at freshly sampled labels.
pub fn estimate_diag_fisher<L: Landscape + ?Sized>(
    l: &L,
    theta: &[f64],
    step: usize,
    rng: &mut Rng,
) -> Result<DiagHessianEstimate> {
    let g = landscapes::sampled_label_grad(l, theta, rng)?;
    Ok(DiagHessianEstimate {
        h: fisher_from_mean_grad(&g, l.n_samples()),
        source: Estimator::Fisher,
        step,
    })
}

pub fn estimate_diag_exact<L: Landscape + ?Sized>(
    l: &L,
    theta: &[f64],
    step: usize,
) -> Result<DiagHessianEstimate> {
    Ok(DiagHessianEstimate {
        h: landscapes::diag_hessian(l, theta)?,
        source: Estimator::ExactDiag,
        step,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlatMask {
    pub mask: Vec<bool>,
    pub count: usize,
    /// `⌊pγ⌋`-th smallest `|h|`.
    pub threshold: f64,
}

impl FlatMask {
    pub fn apply(&self, g: &[f64]) -> Vec<f64> {
        g.iter()
            .zip(&self.mask)
            .map(|(x, &keep)| if keep { *x } else { 0.0 })
            .collect()
    }
}

/// Keeps exactly `⌊pγ⌋` coordinates: every `|h_i|` below the threshold, then
/// ties at the threshold by lowest index.
pub fn build_mask(h: &[f64], gamma: f64) -> Result<FlatMask> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidConfig("gamma must lie in (0, 1)".into()));
    }
    let p = h.len();
    let k = (p as f64 * gamma).floor() as usize;
    if k == 0 {
        return Err(Error::InvalidConfig(format!(
            "degenerate mask: floor({p} * {gamma}) = 0"
        )));
    }
    let threshold = linalg::kth_smallest_abs(h, k)?;
    let mut mask: Vec<bool> = h.iter().map(|x| x.abs() < threshold).collect();
    let mut count = mask.iter().filter(|&&b| b).count();
    for (i, x) in h.iter().enumerate() {
        if count == k {
            break;
        }
        if x.abs() == threshold {
            mask[i] = true;
            count += 1;
        }
    }
    Ok(FlatMask {
        mask,
        count,
        threshold,
    })
}

/// Cached flat-direction operator `P_t`.
#[derive(Debug, Clone)]
pub enum FlatProjection {
    Mask(FlatMask),
    Spectral(Projector),
}

impl FlatProjection {
    pub fn apply(&self, g: &[f64]) -> Vec<f64> {
        match self {
            FlatProjection::Mask(m) => m.apply(g),
            FlatProjection::Spectral(p) => p.apply(g),
        }
    }
}

/// `P_{m+1:p}(∇²L(θ))`.
pub fn flat_projector<L: Landscape + ?Sized>(l: &L, theta: &[f64], m: usize) -> Result<Projector> {
    let p = l.dim();
    if m >= p {
        return Err(Error::InvalidConfig(format!(
            "sharp dimension m = {m} must be below p = {p}"
        )));
    }
    let h = landscapes::hessian(l, theta)?;
    let e = linalg::sym_eigh(&h)?;
    linalg::spectral_projector(&e, m + 1, p)
}

/// `g + κ P_{m+1:p}(∇²L(θ)) g`.
pub fn exact_projection_direction<L: Landscape + ?Sized>(
    l: &L,
    theta: &[f64],
    m: usize,
    kappa: f64,
    g_raw: &[f64],
) -> Result<Vec<f64>> {
    let proj = flat_projector(l, theta, m)?;
    Ok(boost(g_raw, &proj.apply(g_raw), kappa))
}

/// `g + κ Pg`
pub fn boost(g: &[f64], pg: &[f64], kappa: f64) -> Vec<f64> {
    if kappa == 0.0 {
        return g.to_vec();
    }
    linalg::axpy(g, kappa, pg)
}

/// Mutable per-trajectory IRE state.
///
/// The estimator draws from its own generator so that switching the
/// enhancement on never perturbs the base optimizer's random stream.
#[derive(Debug, Clone)]
pub struct IreState {
    pub cache: Option<FlatProjection>,
    pub activated_at: Option<usize>,
    pub refreshes: u64,
    pub last_estimate: Option<DiagHessianEstimate>,
    rng: Rng,
}

impl IreState {
    pub fn new(seed: u64) -> Self {
        IreState {
            cache: None,
            activated_at: None,
            refreshes: 0,
            last_estimate: None,
            rng: rng::seeded(seed),
        }
    }
}

fn refresh<L: Landscape + ?Sized>(
    cfg: &IreConfig,
    l: &L,
    theta: &[f64],
    t: usize,
    state: &mut IreState,
) -> Result<()> {
    let proj = match cfg.estimator {
        Estimator::Fisher | Estimator::ExactDiag => {
            let est = if cfg.estimator == Estimator::Fisher {
                estimate_diag_fisher(l, theta, t, &mut state.rng)?
            } else {
                estimate_diag_exact(l, theta, t)?
            };
            let mask = build_mask(&est.h, cfg.gamma)?;
            state.last_estimate = Some(est);
            FlatProjection::Mask(mask)
        }
        Estimator::ExactSpectral => {
            let m = cfg
                .sharp_dim
                .or_else(|| l.sharp_dim())
                .ok_or(Error::Unsupported("a declared sharp dimension"))?;
            FlatProjection::Spectral(flat_projector(l, theta, m)?)
        }
    };
    state.cache = Some(proj);
    state.refreshes += 1;
    Ok(())
}

/// One IRE-wrapped update at step `t`.
///
/// Before activation this is exactly the base step. After activation the
/// flat operator is re-estimated whenever `(t - t_on) mod K == 0` (one extra
/// gradient evaluation is charged to the base ledger) and reused otherwise.
pub fn ire_step<L: Landscape + ?Sized>(
    cfg: &IreConfig,
    base: &mut Optimizer,
    l: &L,
    theta: &[f64],
    t: usize,
    state: &mut IreState,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    if state.activated_at.is_none() {
        let by_step = match (cfg.warmup_steps, cfg.warmup_loss) {
            (None, None) => true,
            (Some(tw), _) => t >= tw,
            (None, Some(_)) => false,
        };
        let by_loss = match cfg.warmup_loss {
            Some(thr) if !by_step => landscapes::loss(l, theta)? <= thr,
            _ => false,
        };
        if by_step || by_loss {
            state.activated_at = Some(t);
        }
    }
    let Some(t_on) = state.activated_at else {
        return base.step(l, theta, t, rng);
    };

    let eta = base.lr_at(t);
    let g = base.direction(l, theta, rng)?;
    if (t - t_on).is_multiple_of(cfg.refresh_period) || state.cache.is_none() {
        refresh(cfg, l, theta, t, state)?;
        base.state.grad_evals += 1;
    }
    let pg = state
        .cache
        .as_ref()
        .map(|c| c.apply(&g))
        .unwrap_or_else(|| vec![0.0; g.len()]);
    let boosted = boost(&g, &pg, cfg.kappa);
    let next = apply_step(&base.decayed(theta, eta), &boosted, eta);
    if !linalg::all_finite(&next) {
        return Err(Error::Divergence("non-finite iterate".into()));
    }
    Ok(next)
}
