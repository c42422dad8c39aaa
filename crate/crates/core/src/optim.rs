//! Base optimizers.
//!
//! Each optimizer produces a direction `g_t` (before multiplication by the
//! learning rate) so that a wrapper can rescale parts of it before the update
//! `θ_{t+1} = θ_t - η_t g_t` is applied.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::landscapes::{self, Landscape};
use crate::linalg;
use crate::rng::Rng;

/// Below this norm the standard SAM ascent direction is undefined and the
/// unperturbed sample gradient is returned.
pub const SAM_ZERO_GRAD_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Gd,
    Sgd,
    Momentum,
    Adam,
    AdamW,
    SamStandard,
    SamAverage,
}

impl OptimizerKind {
    pub fn is_sam(self) -> bool {
        matches!(self, OptimizerKind::SamStandard | OptimizerKind::SamAverage)
    }

    /// Gradient evaluations consumed by one direction.
    pub fn grad_evals_per_step(self) -> u64 {
        if self.is_sam() {
            2
        } else {
            1
        }
    }
}

/// Learning rate as a pure function of the step counter.
#[derive(Debug, Clone, PartialEq)]
pub enum LrSchedule {
    Constant(f64),
    /// `base * factor^(number of milestones <= t)`
    StepDecay {
        base: f64,
        factor: f64,
        milestones: Vec<usize>,
    },
    /// Linear warm-up from 0 to `base` over `warmup` steps, then cosine decay
    /// to `min` at `total`.
    CosineWarmup {
        base: f64,
        min: f64,
        warmup: usize,
        total: usize,
    },
}

impl LrSchedule {
    pub fn at(&self, t: usize) -> f64 {
        match self {
            LrSchedule::Constant(lr) => *lr,
            LrSchedule::StepDecay {
                base,
                factor,
                milestones,
            } => {
                let passed = milestones.iter().filter(|&&m| m <= t).count();
                base * factor.powi(passed as i32)
            }
            LrSchedule::CosineWarmup {
                base,
                min,
                warmup,
                total,
            } => {
                if t < *warmup {
                    base * (t + 1) as f64 / *warmup as f64
                } else if t >= *total {
                    *min
                } else {
                    let span = (*total - *warmup).max(1) as f64;
                    let progress = (t - *warmup) as f64 / span;
                    min + 0.5 * (base - min) * (1.0 + (std::f64::consts::PI * progress).cos())
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            LrSchedule::Constant(lr) => *lr > 0.0,
            LrSchedule::StepDecay { base, factor, .. } => *base > 0.0 && *factor > 0.0,
            LrSchedule::CosineWarmup {
                base,
                min,
                warmup,
                total,
            } => *base > 0.0 && *min >= 0.0 && warmup <= total,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "invalid learning-rate schedule {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: LrSchedule,
    /// Heavy-ball coefficient (Momentum only).
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay (AdamW only).
    pub weight_decay: f64,
    pub sam_rho: f64,
    /// Mini-batch size for SGD.
    pub batch_size: usize,
    /// Clip the direction to this norm when set.
    pub grad_clip: Option<f64>,
}

impl OptimizerConfig {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        OptimizerConfig {
            kind,
            lr: LrSchedule::Constant(lr),
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: if kind == OptimizerKind::AdamW {
                0.1
            } else {
                0.0
            },
            sam_rho: 0.05,
            batch_size: 1,
            grad_clip: None,
        }
    }

    pub fn gd(lr: f64) -> Self {
        Self::new(OptimizerKind::Gd, lr)
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.sam_rho = rho;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.lr.validate()?;
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !(self.eps > 0.0) {
            return bad("Adam epsilon must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight decay must be non-negative");
        }
        if self.kind.is_sam() && !(self.sam_rho > 0.0) {
            return bad("SAM radius rho must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad("gradient clip norm must be positive");
            }
        }
        Ok(())
    }
}

/// Per-trajectory optimizer buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: usize,
    pub momentum_buf: Vec<f64>,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    /// Cumulative gradient evaluations (exact ledger).
    pub grad_evals: u64,
}

impl OptimizerState {
    pub fn new(dim: usize) -> Self {
        OptimizerState {
            step: 0,
            momentum_buf: vec![0.0; dim],
            first_moment: vec![0.0; dim],
            second_moment: vec![0.0; dim],
            grad_evals: 0,
        }
    }
}

fn sample_grad_batch<L: Landscape + ?Sized>(
    l: &L,
    theta: &[f64],
    batch: usize,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let n = l.n_samples();
    let mut acc = vec![0.0; theta.len()];
    for _ in 0..batch {
        let i = rng.random_range(0..n);
        let g = landscapes::per_sample_grad(l, i, theta)?;
        for (a, x) in acc.iter_mut().zip(g) {
            *a += x;
        }
    }
    acc.iter_mut().for_each(|x| *x /= batch as f64);
    Ok(acc)
}

/// Direction `g_t` of the configured base optimizer at `θ`; updates moment
/// buffers, the step counter and the gradient-evaluation ledger.
pub fn direction<L: Landscape + ?Sized>(
    cfg: &OptimizerConfig,
    state: &mut OptimizerState,
    l: &L,
    theta: &[f64],
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    if state.momentum_buf.len() != theta.len() {
        return Err(Error::DimensionMismatch {
            expected: state.momentum_buf.len(),
            got: theta.len(),
        });
    }
    let g = match cfg.kind {
        OptimizerKind::Gd => landscapes::grad(l, theta)?,
        OptimizerKind::Sgd => sample_grad_batch(l, theta, cfg.batch_size, rng)?,
        OptimizerKind::Momentum => {
            let g = landscapes::grad(l, theta)?;
            for (b, x) in state.momentum_buf.iter_mut().zip(&g) {
                *b = cfg.momentum * *b + x;
            }
            state.momentum_buf.clone()
        }
        OptimizerKind::Adam | OptimizerKind::AdamW => {
            let g = landscapes::grad(l, theta)?;
            let t = (state.step + 1) as i32;
            let c1 = 1.0 - cfg.beta1.powi(t);
            let c2 = 1.0 - cfg.beta2.powi(t);
            let mut d = Vec::with_capacity(g.len());
            for (i, gi) in g.iter().enumerate() {
                let m = &mut state.first_moment[i];
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * gi;
                let v = &mut state.second_moment[i];
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * gi * gi;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                d.push(m_hat / (v_hat.sqrt() + cfg.eps));
            }
            d
        }
        OptimizerKind::SamStandard => sam_standard_direction(cfg, l, theta, rng)?,
        OptimizerKind::SamAverage => sam_average_direction(cfg, l, theta, rng)?,
    };
    state.step += 1;
    state.grad_evals += cfg.kind.grad_evals_per_step();
    if !linalg::all_finite(&g) {
        return Err(Error::Divergence("non-finite direction".into()));
    }
    Ok(g)
}

/// Standard SAM: `∇L_i(θ + ρ ∇L_i(θ)/|∇L_i(θ)|)` with `i` uniform.
pub fn sam_standard_direction<L: Landscape + ?Sized>(
    cfg: &OptimizerConfig,
    l: &L,
    theta: &[f64],
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let i = rng.random_range(0..l.n_samples());
    sam_standard_direction_at(cfg.sam_rho, l, i, theta)
}

/// Standard SAM direction for a fixed sample index.
pub fn sam_standard_direction_at<L: Landscape + ?Sized>(
    rho: f64,
    l: &L,
    i: usize,
    theta: &[f64],
) -> Result<Vec<f64>> {
    let g = landscapes::per_sample_grad(l, i, theta)?;
    let n = linalg::norm(&g);
    if n <= SAM_ZERO_GRAD_EPS {
        return Ok(g);
    }
    let perturbed = linalg::axpy(theta, rho / n, &g);
    landscapes::per_sample_grad(l, i, &perturbed)
}

/// Average SAM: `∇L(θ + ρ ξ/|ξ|)` with `ξ ~ N(0, I)`.
pub fn sam_average_direction<L: Landscape + ?Sized>(
    cfg: &OptimizerConfig,
    l: &L,
    theta: &[f64],
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let xi = random_unit_vector(theta.len(), rng);
    landscapes::grad(l, &linalg::axpy(theta, cfg.sam_rho, &xi))
}

pub fn random_unit_vector(dim: usize, rng: &mut Rng) -> Vec<f64> {
    loop {
        let xi: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = linalg::norm(&xi);
        if n > 0.0 {
            return linalg::scale(&xi, 1.0 / n);
        }
    }
}

/// `θ - η g`
pub fn apply_step(theta: &[f64], g: &[f64], eta: f64) -> Vec<f64> {
    linalg::axpy(theta, -eta, g)
}

/// Rescales `g` to norm `max_norm` when it is longer.
pub fn clip_to_norm(g: &mut [f64], max_norm: f64) {
    let n = linalg::norm(g);
    if n > max_norm {
        let s = max_norm / n;
        g.iter_mut().for_each(|x| *x *= s);
    }
}

/// A base optimizer bound to its state.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    pub state: OptimizerState,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, dim: usize) -> Result<Self> {
        config.validate()?;
        Ok(Optimizer {
            config,
            state: OptimizerState::new(dim),
        })
    }

    pub fn lr_at(&self, t: usize) -> f64 {
        self.config.lr.at(t)
    }

    pub fn grad_evals(&self) -> u64 {
        self.state.grad_evals
    }

    /// Direction with clipping applied.
    pub fn direction<L: Landscape + ?Sized>(
        &mut self,
        l: &L,
        theta: &[f64],
        rng: &mut Rng,
    ) -> Result<Vec<f64>> {
        let mut g = direction(&self.config, &mut self.state, l, theta, rng)?;
        if let Some(c) = self.config.grad_clip {
            clip_to_norm(&mut g, c);
        }
        Ok(g)
    }

    /// `θ` after decoupled weight decay (AdamW), ready for `θ - η g`.
    pub fn decayed(&self, theta: &[f64], eta: f64) -> Vec<f64> {
        if self.config.kind == OptimizerKind::AdamW && self.config.weight_decay > 0.0 {
            linalg::scale(theta, 1.0 - eta * self.config.weight_decay)
        } else {
            theta.to_vec()
        }
    }

    /// One plain base-optimizer update at step `t`.
    pub fn step<L: Landscape + ?Sized>(
        &mut self,
        l: &L,
        theta: &[f64],
        t: usize,
        rng: &mut Rng,
    ) -> Result<Vec<f64>> {
        let eta = self.lr_at(t);
        let g = self.direction(l, theta, rng)?;
        Ok(apply_step(&self.decayed(theta, eta), &g, eta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landscapes::{Quadratic, Toy2D};
    use crate::linalg::SymMatrix;
    use crate::rng;

    #[test]
    fn gd_direction_is_gradient() {
        let cfg = OptimizerConfig::gd(0.1);
        let mut st = OptimizerState::new(2);
        let g = direction(&cfg, &mut st, &Toy2D, &[1.0, 1.0], &mut rng::seeded(0)).unwrap();
        assert_eq!(g, vec![1.0, 2.0]);
        assert_eq!(st.grad_evals, 1);
    }

    #[test]
    fn adam_first_step_is_sign_like() {
        let q = Quadratic::new(SymMatrix::diagonal(&[1.0, 1.0]));
        let cfg = OptimizerConfig::new(OptimizerKind::Adam, 0.1);
        let mut st = OptimizerState::new(2);
        let g = direction(&cfg, &mut st, &q, &[4.0, 0.0], &mut rng::seeded(0)).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-6);
        assert_eq!(g[1], 0.0);
    }

    #[test]
    fn zero_momentum_reduces_to_gd() {
        let mut cfg = OptimizerConfig::new(OptimizerKind::Momentum, 0.1);
        cfg.momentum = 0.0;
        let mut st = OptimizerState::new(2);
        let mut r = rng::seeded(0);
        for theta in [[1.0, 1.0], [0.3, -2.0], [-1.5, 0.25]] {
            let g = direction(&cfg, &mut st, &Toy2D, &theta, &mut r).unwrap();
            assert_eq!(g, crate::landscapes::grad(&Toy2D, &theta).unwrap());
        }
    }

    #[test]
    fn sam_standard_one_dim_quadratic() {
        let q = Quadratic::new(SymMatrix::diagonal(&[1.0]));
        let cfg = OptimizerConfig::new(OptimizerKind::SamStandard, 0.1).with_rho(0.1);
        let g = sam_standard_direction(&cfg, &q, &[1.0], &mut rng::seeded(0)).unwrap();
        assert!((g[0] - 1.1).abs() < 1e-15);
        let zero = sam_standard_direction(&cfg, &q, &[0.0], &mut rng::seeded(0)).unwrap();
        assert_eq!(zero, vec![0.0]);
    }

    #[test]
    fn sam_standard_toy() {
        let cfg = OptimizerConfig::new(OptimizerKind::SamStandard, 0.1).with_rho(0.1);
        let g = sam_standard_direction(&cfg, &Toy2D, &[0.0, 1.0], &mut rng::seeded(0)).unwrap();
        assert_eq!(g[0], 0.0);
        assert!((g[1] - 1.1).abs() < 1e-15);
    }

    #[test]
    fn sam_counts_two_evaluations() {
        let cfg = OptimizerConfig::new(OptimizerKind::SamAverage, 0.1);
        let mut st = OptimizerState::new(2);
        let mut r = rng::seeded(1);
        for _ in 0..5 {
            direction(&cfg, &mut st, &Toy2D, &[0.5, 0.5], &mut r).unwrap();
        }
        assert_eq!(st.grad_evals, 10);
    }

    #[test]
    fn apply_step_examples() {
        assert_eq!(apply_step(&[1.0, 1.0], &[1.0, 2.0], 0.5), vec![0.5, 0.0]);
        assert_eq!(apply_step(&[1.0, 1.0], &[1.0, 2.0], 0.0), vec![1.0, 1.0]);
        // η = 1 from (2, 1): v_{t+1} = -u² v
        let next = apply_step(
            &[2.0, 1.0],
            &crate::landscapes::grad(&Toy2D, &[2.0, 1.0]).unwrap(),
            1.0,
        );
        assert_eq!(next[1], -4.0);
    }

    #[test]
    fn schedules() {
        let s = LrSchedule::StepDecay {
            base: 1.0,
            factor: 0.1,
            milestones: vec![10, 20],
        };
        assert_eq!(s.at(9), 1.0);
        assert!((s.at(10) - 0.1).abs() < 1e-15);
        assert!((s.at(25) - 0.01).abs() < 1e-15);
        let c = LrSchedule::CosineWarmup {
            base: 1.0,
            min: 0.0,
            warmup: 10,
            total: 110,
        };
        assert!((c.at(4) - 0.5).abs() < 1e-15);
        assert!((c.at(10) - 1.0).abs() < 1e-15);
        assert!((c.at(60) - 0.5).abs() < 1e-12);
        assert_eq!(c.at(200), 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(OptimizerConfig::gd(0.0).validate().is_err());
        let mut c = OptimizerConfig::new(OptimizerKind::SamAverage, 0.1);
        c.sam_rho = 0.0;
        assert!(c.validate().is_err());
        let mut c = OptimizerConfig::new(OptimizerKind::Adam, 0.1);
        c.beta2 = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn adamw_decay_not_in_direction() {
        let q = Quadratic::new(SymMatrix::diagonal(&[1.0, 1.0]));
        let mut opt = Optimizer::new(OptimizerConfig::new(OptimizerKind::AdamW, 0.1), 2).unwrap();
        let theta = [2.0, -1.0];
        let mut plain = Optimizer::new(OptimizerConfig::new(OptimizerKind::Adam, 0.1), 2).unwrap();
        let g = plain.direction(&q, &theta, &mut rng::seeded(0)).unwrap();
        let next = opt.step(&q, &theta, 0, &mut rng::seeded(0)).unwrap();
        for i in 0..2 {
            let expected = theta[i] * (1.0 - 0.1 * 0.1) - 0.1 * g[i];
            assert!((next[i] - expected).abs() < 1e-15);
        }
    }
}
