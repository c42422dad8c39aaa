//! Translates a parsed configuration into core objects.

use std::sync::Arc;

use ire_core::ire::{Estimator, IreConfig};
use ire_core::landscapes::{
    ConstantProfile, FeatureMap, InterpolatingRegression, Landscape, QuadraticValley,
    SharpnessProfile, ShiftedNormSqProfile, SoftmaxModel, Toy2D,
};
use ire_core::optim::{LrSchedule, OptimizerConfig, OptimizerKind};
use ire_core::trajectory::RunSpec;

use crate::config::{
    EstimatorName, ExperimentConfig, LandscapeKind, LandscapeSection, OptimizerName,
    OptimizerSection, ScheduleName, ValleyProfile,
};
use crate::error::ConfigError;

/// Toy2D start used by the figure reproductions.
pub const TOY_START: [f64; 2] = [2.0, 1.0];

/// Default start on the theory valley: off the manifold, `u ≠ 0`.
pub const VALLEY_START: [f64; 10] = [0.5, -0.3, 0.2, 0.1, 0.4, -0.2, 0.3, 0.2, 0.2, 0.2];

/// Seed of the default regression initialization.
pub const REGRESSION_INIT_SEED: u64 = 3;

/// A landscape with an optional radius override.
struct Bounded<L> {
    inner: L,
    radius: f64,
}

impl<L: Landscape> Landscape for Bounded<L> {
    fn name(&self) -> &'static str {
        self.inner.name()
    }
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn n_samples(&self) -> usize {
        self.inner.n_samples()
    }
    fn capabilities(&self) -> ire_core::landscapes::Capabilities {
        self.inner.capabilities()
    }
    fn eval_sample_loss(&self, i: usize, theta: &[f64]) -> f64 {
        self.inner.eval_sample_loss(i, theta)
    }
    fn eval_sample_grad(&self, i: usize, theta: &[f64]) -> Vec<f64> {
        self.inner.eval_sample_grad(i, theta)
    }
    fn eval_loss(&self, theta: &[f64]) -> f64 {
        self.inner.eval_loss(theta)
    }
    fn eval_grad(&self, theta: &[f64]) -> Vec<f64> {
        self.inner.eval_grad(theta)
    }
    fn eval_hessian(&self, theta: &[f64]) -> Option<ire_core::linalg::SymMatrix> {
        self.inner.eval_hessian(theta)
    }
    fn eval_trace_hessian_grad(&self, theta: &[f64]) -> Option<Vec<f64>> {
        self.inner.eval_trace_hessian_grad(theta)
    }
    fn eval_sampled_label_grads(
        &self,
        theta: &[f64],
        rng: &mut ire_core::rng::Rng,
    ) -> Option<Vec<Vec<f64>>> {
        self.inner.eval_sampled_label_grads(theta, rng)
    }
    fn sharp_dim(&self) -> Option<usize> {
        self.inner.sharp_dim()
    }
    fn admissible_radius(&self) -> f64 {
        self.radius
    }
}

fn boxed<L: Landscape + 'static>(inner: L, radius: Option<f64>) -> Box<dyn Landscape> {
    match radius {
        Some(radius) => Box::new(Bounded { inner, radius }),
        None => Box::new(inner),
    }
}

fn core_err(field: &str) -> impl Fn(ire_core::Error) -> ConfigError + '_ {
    move |e| ConfigError::field(field, e.to_string())
}

/// Landscape plus its default starting point.
pub fn landscape(s: &LandscapeSection) -> Result<(Box<dyn Landscape>, Vec<f64>), ConfigError> {
    if let Some(r) = s.radius {
        if !(r > 0.0) {
            return Err(ConfigError::field("landscape.radius", "must be positive"));
        }
    }
    Ok(match s.kind {
        LandscapeKind::Toy2d => (boxed(Toy2D, s.radius), TOY_START.to_vec()),
        LandscapeKind::QuadraticValley => {
            let a = s.a.clone().unwrap_or_else(|| vec![1.0, 2.0, 3.0]);
            let p = s.p.unwrap_or(10);
            if a.len() >= p {
                return Err(ConfigError::field(
                    "landscape.a",
                    format!("needs fewer than p = {p} entries"),
                ));
            }
            let flat_dim = p - a.len();
            let profile: Arc<dyn SharpnessProfile> =
                match s.profile.unwrap_or(ValleyProfile::Shifted) {
                    ValleyProfile::Shifted => Arc::new(ShiftedNormSqProfile { flat_dim, a }),
                    ValleyProfile::Constant => Arc::new(ConstantProfile { flat_dim, a }),
                };
            let v = QuadraticValley::new(profile).map_err(core_err("landscape"))?;
            let start = if p == VALLEY_START.len() {
                VALLEY_START.to_vec()
            } else {
                (0..p).map(|i| 0.2 + 0.05 * (i % 5) as f64).collect()
            };
            (boxed(v, s.radius), start)
        }
        LandscapeKind::InterpolatingRegression => {
            let r = match (&s.inputs, &s.targets, s.width) {
                (None, None, None) => InterpolatingRegression::default_instance(),
                (Some(x), Some(y), w) => {
                    let inputs = x.iter().map(|v| vec![*v]).collect();
                    let features = match w.unwrap_or(5) {
                        0 => FeatureMap::Linear { inputs },
                        width => FeatureMap::TanhNet { inputs, width },
                    };
                    InterpolatingRegression::new(features, y.clone())
                        .map_err(core_err("landscape.inputs"))?
                }
                _ => {
                    return Err(ConfigError::field(
                        "landscape.inputs",
                        "inputs and targets must be given together",
                    ))
                }
            };
            let start = r.default_init(REGRESSION_INIT_SEED);
            (boxed(r, s.radius), start)
        }
        LandscapeKind::Softmax => {
            let any = s.input_dim.is_some()
                || s.hidden.is_some()
                || s.classes.is_some()
                || s.batch.is_some()
                || s.data_seed.is_some();
            let m = if any {
                SoftmaxModel::synthetic(
                    s.input_dim.unwrap_or(4),
                    s.hidden.unwrap_or(8),
                    s.classes.unwrap_or(3),
                    s.batch.unwrap_or(16),
                    s.data_seed.unwrap_or(2024),
                )
                .map_err(core_err("landscape"))?
            } else {
                SoftmaxModel::default_instance()
            };
            let start = m.default_init(0);
            (boxed(m, s.radius), start)
        }
    })
}

pub fn optimizer(s: &OptimizerSection) -> Result<OptimizerConfig, ConfigError> {
    let kind = match s.kind {
        OptimizerName::Gd => OptimizerKind::Gd,
        OptimizerName::Sgd => OptimizerKind::Sgd,
        OptimizerName::Momentum => OptimizerKind::Momentum,
        OptimizerName::Adam => OptimizerKind::Adam,
        OptimizerName::Adamw => OptimizerKind::AdamW,
        OptimizerName::SamStandard => OptimizerKind::SamStandard,
        OptimizerName::SamAverage => OptimizerKind::SamAverage,
    };
    let mut c = OptimizerConfig::new(kind, s.lr);
    c.lr = match s.schedule.unwrap_or(ScheduleName::Constant) {
        ScheduleName::Constant => LrSchedule::Constant(s.lr),
        ScheduleName::Step => LrSchedule::StepDecay {
            base: s.lr,
            factor: s.decay_factor.unwrap_or(0.1),
            milestones: s.milestones.clone().unwrap_or_default(),
        },
        ScheduleName::Cosine => LrSchedule::CosineWarmup {
            base: s.lr,
            min: s.min_lr.unwrap_or(0.0),
            warmup: s.warmup.unwrap_or(0),
            total: 0,
        },
    };
    if let Some(v) = s.momentum {
        c.momentum = v;
    }
    if let Some(v) = s.beta1 {
        c.beta1 = v;
    }
    if let Some(v) = s.beta2 {
        c.beta2 = v;
    }
    if let Some(v) = s.eps {
        c.eps = v;
    }
    if let Some(v) = s.weight_decay {
        c.weight_decay = v;
    }
    if let Some(v) = s.rho {
        c.sam_rho = v;
    }
    if let Some(v) = s.batch_size {
        c.batch_size = v;
    }
    c.grad_clip = s.grad_clip;
    Ok(c)
}

pub struct Prepared {
    pub landscape: Box<dyn Landscape>,
    pub theta0: Vec<f64>,
    pub optimizer: OptimizerConfig,
    pub ire: Option<IreConfig>,
    pub spec: RunSpec,
    pub seed: u64,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared, ConfigError> {
    let (landscape, default_start) = landscape(&cfg.landscape)?;
    let theta0 = cfg.run.init.clone().unwrap_or(default_start);
    if theta0.len() != landscape.dim() {
        return Err(ConfigError::field(
            "run.init",
            format!(
                "has {} entries, the landscape has dimension {}",
                theta0.len(),
                landscape.dim()
            ),
        ));
    }
    let mut optimizer = optimizer(&cfg.optimizer)?;
    if let LrSchedule::CosineWarmup { total, .. } = &mut optimizer.lr {
        *total = cfg.run.steps;
    }
    optimizer
        .validate()
        .map_err(|e| ConfigError::field("optimizer", e.to_string()))?;
    let ire = cfg.ire.as_ref().map(|s| {
        let estimator = match s.estimator {
            EstimatorName::Fisher => Estimator::Fisher,
            EstimatorName::ExactDiag => Estimator::ExactDiag,
            EstimatorName::Spectral => Estimator::ExactSpectral,
        };
        IreConfig {
            kappa: s.kappa,
            gamma: s.gamma,
            refresh_period: s.refresh,
            warmup_steps: match (s.warmup_steps, s.warmup_loss) {
                (None, None) => Some(0),
                (t, _) => t,
            },
            warmup_loss: s.warmup_loss,
            estimator,
            sharp_dim: s.sharp_dim,
        }
    });
    if let Some(c) = &ire {
        c.validate()
            .map_err(|e| ConfigError::field("ire", e.to_string()))?;
        let caps = landscape.capabilities();
        if c.estimator == Estimator::Fisher && !caps.sampled_label_gradient {
            return Err(ConfigError::field(
                "ire.estimator",
                format!(
                    "landscape {} has no sampled-label gradients",
                    landscape.name()
                ),
            ));
        }
        if c.estimator == Estimator::ExactSpectral
            && c.sharp_dim.or(landscape.sharp_dim()).is_none()
        {
            return Err(ConfigError::field(
                "ire.sharp_dim",
                "required for this landscape",
            ));
        }
    }
    if let Some(&i) = cfg.run.coords.iter().find(|&&i| i >= landscape.dim()) {
        return Err(ConfigError::field(
            "run.coords",
            format!("index {i} out of range for dimension {}", landscape.dim()),
        ));
    }
    if cfg.run.track_distance && landscape.sharp_dim().is_none() {
        return Err(ConfigError::field(
            "run.track_distance",
            format!("landscape {} has no minima manifold", landscape.name()),
        ));
    }
    let spec = RunSpec {
        log_every: cfg.run.log_every,
        coord_indices: cfg.run.coords.clone(),
        track_distance: cfg.run.track_distance,
        converge_loss: cfg.run.converge_loss,
        ..RunSpec::new(cfg.run.steps)
    };
    Ok(Prepared {
        landscape,
        theta0,
        optimizer,
        ire,
        spec,
        seed: cfg.run.seed,
    })
}
