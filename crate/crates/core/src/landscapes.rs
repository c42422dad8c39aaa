//! Objective functions.
//!
//! A [`Landscape`] is a finite-sum loss `L(θ) = (1/n) Σ_i L_i(θ)` with analytic
//! per-sample gradients. Implementors provide the raw evaluations; the free
//! functions in this module ([`loss`], [`grad`], [`hessian`], ...) validate the
//! point, enforce the admissible radius and reject non-finite results.

use std::fmt;
use std::sync::Arc;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{self, SymMatrix};
use crate::rng::{self, Rng};

/// Evaluations beyond this norm raise a divergence signal.
pub const DEFAULT_RADIUS: f64 = 1e6;
/// Central-difference step for Hessians built from analytic gradients.
pub const HESSIAN_FD_STEP: f64 = 1e-5;
/// Second-difference step for the diagonal of the Hessian from loss values.
pub const DIAG_FD_STEP: f64 = 1e-4;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Capabilities {
    pub exact_hessian: bool,
    pub exact_diag_hessian: bool,
    pub sampled_label_gradient: bool,
    pub analytic_manifold: bool,
}

pub trait Landscape: Send + Sync {
    fn name(&self) -> &'static str;
    fn dim(&self) -> usize;
    /// Number of samples in the finite sum; 1 for deterministic landscapes.
    fn n_samples(&self) -> usize;
    fn capabilities(&self) -> Capabilities;

    fn eval_sample_loss(&self, i: usize, theta: &[f64]) -> f64;
    fn eval_sample_grad(&self, i: usize, theta: &[f64]) -> Vec<f64>;

    fn eval_loss(&self, theta: &[f64]) -> f64 {
        let n = self.n_samples();
        (0..n).map(|i| self.eval_sample_loss(i, theta)).sum::<f64>() / n as f64
    }

    fn eval_grad(&self, theta: &[f64]) -> Vec<f64> {
        let n = self.n_samples();
        let mut g = vec![0.0; self.dim()];
        for i in 0..n {
            for (acc, x) in g.iter_mut().zip(self.eval_sample_grad(i, theta)) {
                *acc += x;
            }
        }
        g.iter_mut().for_each(|x| *x /= n as f64);
        g
    }

    /// Analytic Hessian of the total loss, if the landscape has one.
    fn eval_hessian(&self, _theta: &[f64]) -> Option<SymMatrix> {
        None
    }

    /// Analytic gradient of `Tr ∇²L(θ)`, if available.
    fn eval_trace_hessian_grad(&self, _theta: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// Per-sample gradients with labels resampled from the model's own
    /// predictive distribution.
    fn eval_sampled_label_grads(&self, _theta: &[f64], _rng: &mut Rng) -> Option<Vec<Vec<f64>>> {
        None
    }

    /// Codimension `m` of the minima manifold (rank of the Hessian on it).
    fn sharp_dim(&self) -> Option<usize> {
        None
    }

    fn admissible_radius(&self) -> f64 {
        DEFAULT_RADIUS
    }
}

fn check_point<L: Landscape + ?Sized>(l: &L, theta: &[f64]) -> Result<()> {
    if theta.len() != l.dim() {
        return Err(Error::DimensionMismatch {
            expected: l.dim(),
            got: theta.len(),
        });
    }
    if !linalg::all_finite(theta) {
        return Err(Error::NonFinite("parameter vector"));
    }
    let r = linalg::norm(theta);
    if r > l.admissible_radius() {
        return Err(Error::Divergence(format!(
            "|θ| = {r:e} exceeds admissible radius {:e}",
            l.admissible_radius()
        )));
    }
    Ok(())
}

fn check_index<L: Landscape + ?Sized>(l: &L, i: usize) -> Result<()> {
    if i >= l.n_samples() {
        return Err(Error::IndexOutOfRange {
            what: "sample",
            index: i,
            len: l.n_samples(),
        });
    }
    Ok(())
}

fn finite_vec(v: Vec<f64>, what: &str) -> Result<Vec<f64>> {
    if linalg::all_finite(&v) {
        Ok(v)
    } else {
        Err(Error::Divergence(format!("non-finite {what}")))
    }
}

pub fn loss<L: Landscape + ?Sized>(l: &L, theta: &[f64]) -> Result<f64> {
    check_point(l, theta)?;
    let v = l.eval_loss(theta);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Divergence("non-finite loss".into()))
    }
}

pub fn per_sample_loss<L: Landscape + ?Sized>(l: &L, i: usize, theta: &[f64]) -> Result<f64> {
    check_index(l, i)?;
    check_point(l, theta)?;
    let v = l.eval_sample_loss(i, theta);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Divergence("non-finite sample loss".into()))
    }
}

pub fn grad<L: Landscape + ?Sized>(l: &L, theta: &[f64]) -> Result<Vec<f64>> {
    check_point(l, theta)?;
    finite_vec(l.eval_grad(theta), "gradient")
}

/// Gradient of sample `i` (0-based).
pub fn per_sample_grad<L: Landscape + ?Sized>(l: &L, i: usize, theta: &[f64]) -> Result<Vec<f64>> {
    check_index(l, i)?;
    check_point(l, theta)?;
    finite_vec(l.eval_sample_grad(i, theta), "sample gradient")
}

/// Analytic Hessian when available, else central differences of the
/// analytic gradient with step [`HESSIAN_FD_STEP`].
pub fn hessian<L: Landscape + ?Sized>(l: &L, theta: &[f64]) -> Result<SymMatrix> {
    check_point(l, theta)?;
    if let Some(h) = l.eval_hessian(theta) {
        return if h.is_finite() {
            Ok(h)
        } else {
            Err(Error::Divergence("non-finite Hessian".into()))
        };
    }
    fd_hessian(l, theta, HESSIAN_FD_STEP)
}

pub fn fd_hessian<L: Landscape + ?Sized>(l: &L, theta: &[f64], step: f64) -> Result<SymMatrix> {
    check_point(l, theta)?;
    let p = l.dim();
    let mut data = vec![0.0; p * p];
    let mut x = theta.to_vec();
    for i in 0..p {
        x[i] = theta[i] + step;
        let gp = l.eval_grad(&x);
        x[i] = theta[i] - step;
        let gm = l.eval_grad(&x);
        x[i] = theta[i];
        for j in 0..p {
            data[i * p + j] = (gp[j] - gm[j]) / (2.0 * step);
        }
    }
    let h = SymMatrix::new(p, data)?;
    if h.is_finite() {
        Ok(h)
    } else {
        Err(Error::Divergence("non-finite Hessian".into()))
    }
}

/// `diag ∇²L(θ)`: from the analytic Hessian when available, otherwise central
/// second differences of the loss with step [`DIAG_FD_STEP`].
pub fn diag_hessian<L: Landscape + ?Sized>(l: &L, theta: &[f64]) -> Result<Vec<f64>> {
    check_point(l, theta)?;
    if let Some(h) = l.eval_hessian(theta) {
        return finite_vec(h.diag(), "Hessian diagonal");
    }
    let f0 = l.eval_loss(theta);
    let mut x = theta.to_vec();
    let h = DIAG_FD_STEP;
    let mut d = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        x[i] = theta[i] + h;
        let fp = l.eval_loss(&x);
        x[i] = theta[i] - h;
        let fm = l.eval_loss(&x);
        x[i] = theta[i];
        d.push((fp - 2.0 * f0 + fm) / (h * h));
    }
    finite_vec(d, "Hessian diagonal")
}

/// Per-sample gradients at freshly sampled labels `ŷ_b ~ softmax(f(x_b; θ))`.
pub fn sampled_label_sample_grads<L: Landscape + ?Sized>(
    l: &L,
    theta: &[f64],
    rng: &mut Rng,
) -> Result<Vec<Vec<f64>>> {
    check_point(l, theta)?;
    let grads = l
        .eval_sampled_label_grads(theta, rng)
        .ok_or(Error::Unsupported("sampled-label gradients"))?;
    grads
        .into_iter()
        .map(|g| finite_vec(g, "sampled-label gradient"))
        .collect()
}

/// `∇L̂_B(θ) = (1/B) Σ_b ∇ℓ(f(x_b; θ); ŷ_b)` with resampled labels.
pub fn sampled_label_grad<L: Landscape + ?Sized>(
    l: &L,
    theta: &[f64],
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let grads = sampled_label_sample_grads(l, theta, rng)?;
    Ok(mean_of(&grads, l.dim()))
}

pub(crate) fn mean_of(vs: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let mut m = vec![0.0; dim];
    for v in vs {
        for (acc, x) in m.iter_mut().zip(v) {
            *acc += x;
        }
    }
    let n = vs.len().max(1) as f64;
    m.iter_mut().for_each(|x| *x /= n);
    m
}

// ---------------------------------------------------------------------------

/// `L(u, v) = (1 + u²) v² / 2`; minima on the line `v = 0`, flattest at the
/// origin.
#[derive(Debug, Clone, Copy, Default)]
pub struct Toy2D;

impl Landscape for Toy2D {
    fn name(&self) -> &'static str {
        "toy2d"
    }
    fn dim(&self) -> usize {
        2
    }
    fn n_samples(&self) -> usize {
        1
    }
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            exact_hessian: true,
            exact_diag_hessian: true,
            sampled_label_gradient: false,
            analytic_manifold: true,
        }
    }
    fn eval_sample_loss(&self, _i: usize, t: &[f64]) -> f64 {
        (1.0 + t[0] * t[0]) * t[1] * t[1] / 2.0
    }
    fn eval_sample_grad(&self, _i: usize, t: &[f64]) -> Vec<f64> {
        let (u, v) = (t[0], t[1]);
        vec![u * v * v, (1.0 + u * u) * v]
    }
    fn eval_hessian(&self, t: &[f64]) -> Option<SymMatrix> {
        let (u, v) = (t[0], t[1]);
        SymMatrix::new(2, vec![v * v, 2.0 * u * v, 2.0 * u * v, 1.0 + u * u]).ok()
    }
    fn eval_trace_hessian_grad(&self, t: &[f64]) -> Option<Vec<f64>> {
        Some(vec![2.0 * t[0], 2.0 * t[1]])
    }
    fn sharp_dim(&self) -> Option<usize> {
        Some(1)
    }
}

// ---------------------------------------------------------------------------

/// `L(θ) = θᵀ A θ / 2` with a positive semi-definite `A`.
#[derive(Debug, Clone)]
pub struct Quadratic {
    a: SymMatrix,
}

impl Quadratic {
    pub fn new(a: SymMatrix) -> Self {
        Quadratic { a }
    }

    pub fn matrix(&self) -> &SymMatrix {
        &self.a
    }
}

impl Landscape for Quadratic {
    fn name(&self) -> &'static str {
        "quadratic"
    }
    fn dim(&self) -> usize {
        self.a.dim()
    }
    fn n_samples(&self) -> usize {
        1
    }
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            exact_hessian: true,
            exact_diag_hessian: true,
            ..Default::default()
        }
    }
    fn eval_sample_loss(&self, _i: usize, t: &[f64]) -> f64 {
        linalg::dot(t, &self.a.matvec(t)) / 2.0
    }
    fn eval_sample_grad(&self, _i: usize, t: &[f64]) -> Vec<f64> {
        self.a.matvec(t)
    }
    fn eval_hessian(&self, _t: &[f64]) -> Option<SymMatrix> {
        Some(self.a.clone())
    }
    fn eval_trace_hessian_grad(&self, t: &[f64]) -> Option<Vec<f64>> {
        Some(vec![0.0; t.len()])
    }
}

// ---------------------------------------------------------------------------

/// Curvature profile `u ↦ (λ_1(u), …, λ_m(u))` of a [`QuadraticValley`] with
/// its analytic derivatives.
pub trait SharpnessProfile: Send + Sync + fmt::Debug {
    fn flat_dim(&self) -> usize;
    fn sharp_dim(&self) -> usize;
    fn values(&self, u: &[f64]) -> Vec<f64>;
    /// Row `i` is `∇λ_i(u)`.
    fn jacobian(&self, u: &[f64]) -> Vec<Vec<f64>>;
    /// `∇²λ_i(u)`, row-major `(p-m) x (p-m)`.
    fn component_hessian(&self, i: usize, u: &[f64]) -> Vec<f64>;
    /// `∇ tr ∇²λ_i(u)`.
    fn component_hessian_trace_grad(&self, i: usize, u: &[f64]) -> Vec<f64>;
    /// Lower bound on every `λ_i` over all `u`.
    fn infimum(&self) -> f64;
}

/// `λ_i(u) = a_i`.
#[derive(Debug, Clone)]
pub struct ConstantProfile {
    pub flat_dim: usize,
    pub a: Vec<f64>,
}

impl SharpnessProfile for ConstantProfile {
    fn flat_dim(&self) -> usize {
        self.flat_dim
    }
    fn sharp_dim(&self) -> usize {
        self.a.len()
    }
    fn values(&self, _u: &[f64]) -> Vec<f64> {
        self.a.clone()
    }
    fn jacobian(&self, _u: &[f64]) -> Vec<Vec<f64>> {
        vec![vec![0.0; self.flat_dim]; self.a.len()]
    }
    fn component_hessian(&self, _i: usize, _u: &[f64]) -> Vec<f64> {
        vec![0.0; self.flat_dim * self.flat_dim]
    }
    fn component_hessian_trace_grad(&self, _i: usize, _u: &[f64]) -> Vec<f64> {
        vec![0.0; self.flat_dim]
    }
    fn infimum(&self) -> f64 {
        self.a.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// `λ_i(u) = a_i + |u|²`.
#[derive(Debug, Clone)]
pub struct ShiftedNormSqProfile {
    pub flat_dim: usize,
    pub a: Vec<f64>,
}

impl SharpnessProfile for ShiftedNormSqProfile {
    fn flat_dim(&self) -> usize {
        self.flat_dim
    }
    fn sharp_dim(&self) -> usize {
        self.a.len()
    }
    fn values(&self, u: &[f64]) -> Vec<f64> {
        let r2 = linalg::dot(u, u);
        self.a.iter().map(|a| a + r2).collect()
    }
    fn jacobian(&self, u: &[f64]) -> Vec<Vec<f64>> {
        let row = linalg::scale(u, 2.0);
        vec![row; self.a.len()]
    }
    fn component_hessian(&self, _i: usize, _u: &[f64]) -> Vec<f64> {
        let k = self.flat_dim;
        let mut h = vec![0.0; k * k];
        for j in 0..k {
            h[j * k + j] = 2.0;
        }
        h
    }
    fn component_hessian_trace_grad(&self, _i: usize, _u: &[f64]) -> Vec<f64> {
        vec![0.0; self.flat_dim]
    }
    fn infimum(&self) -> f64 {
        self.a.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// `L(u, v) = Σ_i λ_i(u) v_i² / 2` with `θ = (u, v)`, `u ∈ R^{p-m}` flat and
/// `v ∈ R^m` sharp. The minima manifold is `{v = 0}`.
#[derive(Debug, Clone)]
pub struct QuadraticValley {
    profile: Arc<dyn SharpnessProfile>,
}

impl QuadraticValley {
    pub fn new(profile: Arc<dyn SharpnessProfile>) -> Result<Self> {
        if profile.flat_dim() == 0 || profile.sharp_dim() == 0 {
            return Err(Error::InvalidConfig(
                "valley needs at least one flat and one sharp coordinate".into(),
            ));
        }
        if !(profile.infimum() > 0.0) {
            return Err(Error::InvalidConfig(
                "valley curvatures must be bounded away from zero".into(),
            ));
        }
        Ok(QuadraticValley { profile })
    }

    /// `λ_i(u) = a_i + |u|²` with `p` total coordinates and `m = a.len()`.
    pub fn shifted(p: usize, a: Vec<f64>) -> Result<Self> {
        if a.len() >= p {
            return Err(Error::InvalidConfig("valley requires m < p".into()));
        }
        Self::new(Arc::new(ShiftedNormSqProfile {
            flat_dim: p - a.len(),
            a,
        }))
    }

    pub fn constant(p: usize, a: Vec<f64>) -> Result<Self> {
        if a.len() >= p {
            return Err(Error::InvalidConfig("valley requires m < p".into()));
        }
        Self::new(Arc::new(ConstantProfile {
            flat_dim: p - a.len(),
            a,
        }))
    }

    /// `p = 10`, `m = 3`, `λ_i(u) = a_i + |u|²`, `a = (1, 2, 3)`.
    pub fn default_theory() -> Self {
        Self::shifted(10, vec![1.0, 2.0, 3.0]).expect("valid default valley")
    }

    pub fn profile(&self) -> &dyn SharpnessProfile {
        self.profile.as_ref()
    }

    pub fn flat_dim(&self) -> usize {
        self.profile.flat_dim()
    }

    fn split<'a>(&self, t: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        t.split_at(self.flat_dim())
    }

    pub fn curvatures(&self, theta: &[f64]) -> Vec<f64> {
        self.profile.values(self.split(theta).0)
    }
}

impl Landscape for QuadraticValley {
    fn name(&self) -> &'static str {
        "valley"
    }
    fn dim(&self) -> usize {
        self.profile.flat_dim() + self.profile.sharp_dim()
    }
    fn n_samples(&self) -> usize {
        1
    }
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            exact_hessian: true,
            exact_diag_hessian: true,
            sampled_label_gradient: false,
            analytic_manifold: true,
        }
    }
    fn eval_sample_loss(&self, _i: usize, t: &[f64]) -> f64 {
        let (u, v) = self.split(t);
        self.profile
            .values(u)
            .iter()
            .zip(v)
            .map(|(l, x)| l * x * x / 2.0)
            .sum()
    }
    fn eval_sample_grad(&self, _i: usize, t: &[f64]) -> Vec<f64> {
        let (u, v) = self.split(t);
        let lam = self.profile.values(u);
        let jac = self.profile.jacobian(u);
        let mut g = vec![0.0; t.len()];
        for (i, (row, vi)) in jac.iter().zip(v).enumerate() {
            for (gj, dj) in g.iter_mut().zip(row) {
                *gj += vi * vi / 2.0 * dj;
            }
            g[u.len() + i] = lam[i] * vi;
        }
        g
    }
    fn eval_hessian(&self, t: &[f64]) -> Option<SymMatrix> {
        let (u, v) = self.split(t);
        let k = u.len();
        let p = t.len();
        let lam = self.profile.values(u);
        let jac = self.profile.jacobian(u);
        let mut h = vec![0.0; p * p];
        for (i, vi) in v.iter().enumerate() {
            let hi = self.profile.component_hessian(i, u);
            for a in 0..k {
                for b in 0..k {
                    h[a * p + b] += vi * vi / 2.0 * hi[a * k + b];
                }
                h[a * p + k + i] = vi * jac[i][a];
                h[(k + i) * p + a] = vi * jac[i][a];
            }
            h[(k + i) * p + k + i] = lam[i];
        }
        SymMatrix::new(p, h).ok()
    }
    fn eval_trace_hessian_grad(&self, t: &[f64]) -> Option<Vec<f64>> {
        // Tr = Σ_i [λ_i(u) + v_i² tr∇²λ_i(u) / 2]
        let (u, v) = self.split(t);
        let k = u.len();
        let jac = self.profile.jacobian(u);
        let mut g = vec![0.0; t.len()];
        for (i, vi) in v.iter().enumerate() {
            let tg = self.profile.component_hessian_trace_grad(i, u);
            let hi = self.profile.component_hessian(i, u);
            let tr: f64 = (0..k).map(|a| hi[a * k + a]).sum();
            for a in 0..k {
                g[a] += jac[i][a] + vi * vi / 2.0 * tg[a];
            }
            g[k + i] = vi * tr;
        }
        Some(g)
    }
    fn sharp_dim(&self) -> Option<usize> {
        Some(self.profile.sharp_dim())
    }
}

// ---------------------------------------------------------------------------

/// Model outputs `f_i(θ)` for an interpolating regression.
#[derive(Debug, Clone)]
pub enum FeatureMap {
    /// `f_i(θ) = x_iᵀ θ`.
    Linear { inputs: Vec<Vec<f64>> },
    /// `f_i(θ) = Σ_k a_k tanh(w_k · x_i)` with `θ = (w_1, …, w_width, a)`.
    TanhNet { inputs: Vec<Vec<f64>>, width: usize },
}

impl FeatureMap {
    fn inputs(&self) -> &[Vec<f64>] {
        match self {
            FeatureMap::Linear { inputs } | FeatureMap::TanhNet { inputs, .. } => inputs,
        }
    }

    fn input_dim(&self) -> usize {
        self.inputs().first().map_or(0, Vec::len)
    }

    fn dim(&self) -> usize {
        match self {
            FeatureMap::Linear { .. } => self.input_dim(),
            FeatureMap::TanhNet { width, .. } => width * (self.input_dim() + 1),
        }
    }
}

/// Squared-loss regression `L_i = (f_i(θ) - y_i)² / 2` with more parameters
/// than samples, so every global minimizer interpolates the data.
#[derive(Debug, Clone)]
pub struct InterpolatingRegression {
    features: FeatureMap,
    targets: Vec<f64>,
}

impl InterpolatingRegression {
    pub fn new(features: FeatureMap, targets: Vec<f64>) -> Result<Self> {
        let inputs = features.inputs();
        if inputs.is_empty() || inputs.len() != targets.len() {
            return Err(Error::InvalidConfig(
                "regression needs one target per input and at least one sample".into(),
            ));
        }
        let d = features.input_dim();
        if d == 0 || inputs.iter().any(|x| x.len() != d) {
            return Err(Error::InvalidConfig(
                "inputs must share a positive dimension".into(),
            ));
        }
        if let FeatureMap::TanhNet { width, .. } = features {
            if width == 0 {
                return Err(Error::InvalidConfig("hidden width must be positive".into()));
            }
        }
        if features.dim() <= targets.len() {
            return Err(Error::InvalidConfig(format!(
                "interpolation regime requires p > n (p = {}, n = {})",
                features.dim(),
                targets.len()
            )));
        }
        Ok(InterpolatingRegression { features, targets })
    }

    /// `n = 3` scalar inputs `(-1, 0.5, 2)`, one tanh hidden layer of width 5
    /// (`p = 10`), targets `(0, 1, -1)`.
    pub fn default_instance() -> Self {
        Self::new(
            FeatureMap::TanhNet {
                inputs: vec![vec![-1.0], vec![0.5], vec![2.0]],
                width: 5,
            },
            vec![0.0, 1.0, -1.0],
        )
        .expect("valid default regression")
    }

    /// Standard Gaussian initialization.
    pub fn default_init(&self, seed: u64) -> Vec<f64> {
        let mut r = rng::seeded(seed);
        (0..self.features.dim())
            .map(|_| StandardNormal.sample(&mut r))
            .collect()
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn predict(&self, i: usize, theta: &[f64]) -> f64 {
        let x = &self.features.inputs()[i];
        match &self.features {
            FeatureMap::Linear { .. } => linalg::dot(x, theta),
            FeatureMap::TanhNet { width, .. } => {
                let d = x.len();
                let (w, a) = theta.split_at(width * d);
                (0..*width)
                    .map(|k| a[k] * linalg::dot(&w[k * d..(k + 1) * d], x).tanh())
                    .sum()
            }
        }
    }

    /// `∇f_i(θ)`.
    pub fn feature_grad(&self, i: usize, theta: &[f64]) -> Vec<f64> {
        let x = &self.features.inputs()[i];
        match &self.features {
            FeatureMap::Linear { .. } => x.clone(),
            FeatureMap::TanhNet { width, .. } => {
                let d = x.len();
                let (w, a) = theta.split_at(width * d);
                let mut g = vec![0.0; theta.len()];
                for k in 0..*width {
                    let t = linalg::dot(&w[k * d..(k + 1) * d], x).tanh();
                    let sech2 = 1.0 - t * t;
                    for j in 0..d {
                        g[k * d + j] = a[k] * sech2 * x[j];
                    }
                    g[width * d + k] = t;
                }
                g
            }
        }
    }

    /// `∇²f_i(θ)`, row-major `p x p`.
    pub fn feature_hessian(&self, i: usize, theta: &[f64]) -> Vec<f64> {
        let p = theta.len();
        let mut h = vec![0.0; p * p];
        if let FeatureMap::TanhNet { width, .. } = &self.features {
            let x = &self.features.inputs()[i];
            let d = x.len();
            let (w, a) = theta.split_at(width * d);
            for k in 0..*width {
                let t = linalg::dot(&w[k * d..(k + 1) * d], x).tanh();
                let sech2 = 1.0 - t * t;
                let ak = width * d + k;
                for j in 0..d {
                    let wj = k * d + j;
                    h[ak * p + wj] = sech2 * x[j];
                    h[wj * p + ak] = sech2 * x[j];
                    for l in 0..d {
                        let wl = k * d + l;
                        h[wj * p + wl] = -2.0 * a[k] * t * sech2 * x[j] * x[l];
                    }
                }
            }
        }
        h
    }

    /// Smallest singular value of the `p x n` feature matrix
    /// `(∇f_1(θ), …, ∇f_n(θ))`.
    pub fn feature_min_singular_value(&self, theta: &[f64]) -> Result<f64> {
        let n = self.targets.len();
        let grads: Vec<Vec<f64>> = (0..n).map(|i| self.feature_grad(i, theta)).collect();
        let gram = SymMatrix::from_fn(n, |i, j| linalg::dot(&grads[i], &grads[j]))?;
        let e = linalg::sym_eigh(&gram)?;
        Ok(e.eigvals[n - 1].max(0.0).sqrt())
    }

    pub fn max_residual(&self, theta: &[f64]) -> f64 {
        (0..self.targets.len())
            .map(|i| (self.predict(i, theta) - self.targets[i]).abs())
            .fold(0.0, f64::max)
    }
}

impl Landscape for InterpolatingRegression {
    fn name(&self) -> &'static str {
        "regression"
    }
    fn dim(&self) -> usize {
        self.features.dim()
    }
    fn n_samples(&self) -> usize {
        self.targets.len()
    }
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            exact_hessian: true,
            exact_diag_hessian: true,
            sampled_label_gradient: false,
            analytic_manifold: false,
        }
    }
    fn eval_sample_loss(&self, i: usize, t: &[f64]) -> f64 {
        let r = self.predict(i, t) - self.targets[i];
        r * r / 2.0
    }
    fn eval_sample_grad(&self, i: usize, t: &[f64]) -> Vec<f64> {
        let r = self.predict(i, t) - self.targets[i];
        linalg::scale(&self.feature_grad(i, t), r)
    }
    fn eval_hessian(&self, t: &[f64]) -> Option<SymMatrix> {
        let p = t.len();
        let n = self.targets.len();
        let mut h = vec![0.0; p * p];
        for i in 0..n {
            let r = self.predict(i, t) - self.targets[i];
            let g = self.feature_grad(i, t);
            let fh = self.feature_hessian(i, t);
            for a in 0..p {
                for b in 0..p {
                    h[a * p + b] += (g[a] * g[b] + r * fh[a * p + b]) / n as f64;
                }
            }
        }
        SymMatrix::new(p, h).ok()
    }
    fn sharp_dim(&self) -> Option<usize> {
        Some(self.targets.len())
    }
}

// ---------------------------------------------------------------------------

/// One-hidden-layer tanh classifier with cross-entropy loss on a fixed
/// synthetic batch.
///
/// Parameter layout: `W1 (hidden x input)`, `b1 (hidden)`, `W2 (classes x
/// hidden)`, `b2 (classes)`, all row-major.
#[derive(Debug, Clone)]
pub struct SoftmaxModel {
    input_dim: usize,
    hidden: usize,
    classes: usize,
    inputs: Vec<Vec<f64>>,
    labels: Vec<usize>,
}

impl SoftmaxModel {
    pub fn new(
        input_dim: usize,
        hidden: usize,
        classes: usize,
        inputs: Vec<Vec<f64>>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        if input_dim == 0 || hidden == 0 || classes < 2 {
            return Err(Error::InvalidConfig(
                "degenerate classifier architecture".into(),
            ));
        }
        if inputs.is_empty() || inputs.len() != labels.len() {
            return Err(Error::InvalidConfig("need one label per input".into()));
        }
        if inputs.iter().any(|x| x.len() != input_dim) {
            return Err(Error::InvalidConfig("input dimension mismatch".into()));
        }
        if labels.iter().any(|&y| y >= classes) {
            return Err(Error::InvalidConfig("label out of range".into()));
        }
        Ok(SoftmaxModel {
            input_dim,
            hidden,
            classes,
            inputs,
            labels,
        })
    }

    /// Gaussian inputs and uniform labels drawn from `seed`.
    pub fn synthetic(
        input_dim: usize,
        hidden: usize,
        classes: usize,
        batch: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut r = rng::seeded(seed);
        let inputs = (0..batch)
            .map(|_| {
                (0..input_dim)
                    .map(|_| StandardNormal.sample(&mut r))
                    .collect::<Vec<f64>>()
            })
            .collect();
        let labels = (0..batch).map(|_| r.random_range(0..classes)).collect();
        Self::new(input_dim, hidden, classes, inputs, labels)
    }

    /// Input dimension 4, hidden width 8, 3 classes, 16 samples (`p = 67`).
    pub fn default_instance() -> Self {
        Self::synthetic(4, 8, 3, 16, 2024).expect("valid default classifier")
    }

    pub fn default_init(&self, seed: u64) -> Vec<f64> {
        let mut r = rng::seeded(seed);
        (0..self.param_count())
            .map(|_| {
                let x: f64 = StandardNormal.sample(&mut r);
                0.5 * x
            })
            .collect::<Vec<f64>>()
    }

    pub fn param_count(&self) -> usize {
        self.hidden * self.input_dim + self.hidden + self.classes * self.hidden + self.classes
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn batch_size(&self) -> usize {
        self.inputs.len()
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let b1 = self.hidden * self.input_dim;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.classes * self.hidden;
        (b1, w2, b2)
    }

    fn forward(&self, theta: &[f64], b: usize) -> (Vec<f64>, Vec<f64>) {
        let (ob1, ow2, ob2) = self.offsets();
        let x = &self.inputs[b];
        let h: Vec<f64> = (0..self.hidden)
            .map(|k| {
                let row = &theta[k * self.input_dim..(k + 1) * self.input_dim];
                (linalg::dot(row, x) + theta[ob1 + k]).tanh()
            })
            .collect();
        let logits = (0..self.classes)
            .map(|c| {
                let row = &theta[ow2 + c * self.hidden..ow2 + (c + 1) * self.hidden];
                linalg::dot(row, &h) + theta[ob2 + c]
            })
            .collect();
        (h, logits)
    }

    pub fn logits(&self, theta: &[f64], b: usize) -> Vec<f64> {
        self.forward(theta, b).1
    }

    pub fn probabilities(&self, theta: &[f64], b: usize) -> Vec<f64> {
        softmax(&self.logits(theta, b))
    }

    /// `∇ℓ(f(x_b; θ); label)` by backpropagation.
    pub fn label_grad(&self, theta: &[f64], b: usize, label: usize) -> Vec<f64> {
        let (ob1, ow2, ob2) = self.offsets();
        let (h, logits) = self.forward(theta, b);
        let mut delta2 = softmax(&logits);
        delta2[label] -= 1.0;
        let mut g = vec![0.0; theta.len()];
        let x = &self.inputs[b];
        for c in 0..self.classes {
            for k in 0..self.hidden {
                g[ow2 + c * self.hidden + k] = delta2[c] * h[k];
            }
            g[ob2 + c] = delta2[c];
        }
        for k in 0..self.hidden {
            let back: f64 = (0..self.classes)
                .map(|c| theta[ow2 + c * self.hidden + k] * delta2[c])
                .sum();
            let d1 = back * (1.0 - h[k] * h[k]);
            for j in 0..self.input_dim {
                g[k * self.input_dim + j] = d1 * x[j];
            }
            g[ob1 + k] = d1;
        }
        g
    }

    pub fn sample_label(&self, theta: &[f64], b: usize, rng: &mut Rng) -> usize {
        let probs = self.probabilities(theta, b);
        let r: f64 = rng.random();
        let mut acc = 0.0;
        for (c, p) in probs.iter().enumerate() {
            acc += p;
            if r < acc {
                return c;
            }
        }
        self.classes - 1
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

impl Landscape for SoftmaxModel {
    fn name(&self) -> &'static str {
        "softmax"
    }
    fn dim(&self) -> usize {
        self.param_count()
    }
    fn n_samples(&self) -> usize {
        self.inputs.len()
    }
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            exact_hessian: false,
            exact_diag_hessian: false,
            sampled_label_gradient: true,
            analytic_manifold: false,
        }
    }
    fn eval_sample_loss(&self, i: usize, t: &[f64]) -> f64 {
        let logits = self.logits(t, i);
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        lse - logits[self.labels[i]]
    }
    fn eval_sample_grad(&self, i: usize, t: &[f64]) -> Vec<f64> {
        self.label_grad(t, i, self.labels[i])
    }
    fn eval_sampled_label_grads(&self, t: &[f64], rng: &mut Rng) -> Option<Vec<Vec<f64>>> {
        Some(
            (0..self.inputs.len())
                .map(|b| {
                    let y = self.sample_label(t, b, rng);
                    self.label_grad(t, b, y)
                })
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn toy_values() {
        let t = Toy2D;
        assert_eq!(loss(&t, &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(loss(&t, &[-3.7, 0.0]).unwrap(), 0.0);
        assert_eq!(grad(&t, &[1.0, 1.0]).unwrap(), vec![1.0, 2.0]);
        let h0 = hessian(&t, &[0.0, 0.0]).unwrap();
        assert_eq!(h0.as_slice(), &[0.0, 0.0, 0.0, 1.0]);
        let h1 = hessian(&t, &[1.0, 0.0]).unwrap();
        assert_eq!(h1.as_slice(), &[0.0, 0.0, 0.0, 2.0]);
    }

    #[test]
    fn toy_gd_step_matches_closed_form() {
        let (u, v, eta) = (0.7, -0.4, 0.3);
        let g = grad(&Toy2D, &[u, v]).unwrap();
        let next = [u - eta * g[0], v - eta * g[1]];
        assert_eq!(next[0], u - eta * u * v * v);
        assert_relative_eq!(
            next[1],
            (1.0 - eta * (1.0 + u * u)) * v,
            max_relative = 1e-15
        );
    }

    #[test]
    fn valley_example_and_block_hessian() {
        let valley = QuadraticValley::shifted(4, vec![1.0]).unwrap();
        assert_eq!(loss(&valley, &[0.0, 0.0, 0.0, 1.0]).unwrap(), 0.5);

        let v = QuadraticValley::default_theory();
        let mut z = vec![0.0; 10];
        z[..7].copy_from_slice(&[0.3, -0.2, 0.5, 0.1, 0.0, -0.4, 0.2]);
        assert_eq!(loss(&v, &z).unwrap(), 0.0);
        assert!(grad(&v, &z).unwrap().iter().all(|g| *g == 0.0));
        let h = hessian(&v, &z).unwrap();
        let r2: f64 = z.iter().map(|x| x * x).sum();
        for i in 0..10 {
            for j in 0..10 {
                let expected = if i == j && i >= 7 {
                    [1.0, 2.0, 3.0][i - 7] + r2
                } else {
                    0.0
                };
                assert_eq!(h.get(i, j), expected);
            }
        }
    }

    #[test]
    fn dimension_and_index_errors() {
        assert!(matches!(
            loss(&Toy2D, &[1.0]),
            Err(Error::DimensionMismatch {
                expected: 2,
                got: 1
            })
        ));
        assert!(matches!(
            loss(&Toy2D, &[f64::NAN, 0.0]),
            Err(Error::NonFinite(_))
        ));
        assert!(per_sample_grad(&Toy2D, 1, &[0.0, 0.0]).is_err());
        assert!(loss(&Toy2D, &[2e6, 0.0]).unwrap_err().is_divergence());
        let mut r = rng::seeded(0);
        assert_eq!(
            sampled_label_grad(&Toy2D, &[0.0, 0.0], &mut r).unwrap_err(),
            Error::Unsupported("sampled-label gradients")
        );
    }

    #[test]
    fn regression_rejects_underparameterized() {
        let fm = FeatureMap::Linear {
            inputs: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        };
        assert!(InterpolatingRegression::new(fm, vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn softmax_probabilities_sum_to_one() {
        let m = SoftmaxModel::default_instance();
        assert_eq!(m.param_count(), 67);
        let theta = m.default_init(3);
        for b in 0..m.batch_size() {
            let s: f64 = m.probabilities(&theta, b).iter().sum();
            assert!((s - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn degenerate_softmax_samples_argmax() {
        let m = SoftmaxModel::new(1, 1, 3, vec![vec![1.0]], vec![0]).unwrap();
        // W1, b1, W2 (3x1), b2 = (50, 0, 0)
        let theta = vec![0.0, 0.0, 0.0, 0.0, 0.0, 50.0, 0.0, 0.0];
        let truth = grad(&m, &theta).unwrap();
        for seed in 0..50 {
            let mut r = rng::seeded(seed);
            let g = sampled_label_grad(&m, &theta, &mut r).unwrap();
            assert_eq!(g, truth);
        }
    }

    #[test]
    fn sampled_label_grad_is_deterministic_per_seed() {
        let m = SoftmaxModel::default_instance();
        let theta = m.default_init(1);
        let a = sampled_label_grad(&m, &theta, &mut rng::seeded(9)).unwrap();
        let b = sampled_label_grad(&m, &theta, &mut rng::seeded(9)).unwrap();
        assert_eq!(a, b);
    }
}
