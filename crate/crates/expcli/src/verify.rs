//! Verification suites behind `ire-lab verify`.
//!
//! Every suite returns a list of [`Check`]s: a measured value, the bound it
//! is held to and whether it passed. Thresholds live here and nowhere else.

use std::fmt;

use rand::Rng as _;

use ire_core::ire::{build_mask, Estimator, IreConfig};
use ire_core::landscapes::{
    self, InterpolatingRegression, Landscape, QuadraticValley, SoftmaxModel, Toy2D,
};
use ire_core::linalg::{self, sym_eigh, SymMatrix};
use ire_core::optim::OptimizerConfig;
use ire_core::rng;
use ire_core::theory::*;
use ire_core::trajectory::{run_trajectory, RunSpec, RunStatus};

use crate::setup::{REGRESSION_INIT_SEED, TOY_START, VALLEY_START};

pub const SUITES: &[&str] = &[
    "masks",
    "fisher",
    "toy",
    "drift-average",
    "drift-standard",
    "stability",
    "sde",
    "lemmas",
    "overhead",
    "eigen",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bound {
    AtMost(f64),
    AtLeast(f64),
    Within(f64, f64),
    Equals(f64),
}

impl Bound {
    fn holds(self, x: f64) -> bool {
        match self {
            Bound::AtMost(b) => x <= b,
            Bound::AtLeast(b) => x >= b,
            Bound::Within(lo, hi) => lo <= x && x <= hi,
            Bound::Equals(b) => x == b,
        }
    }
}

fn num(x: f64) -> String {
    if x.is_finite() && x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{x:.0}")
    } else {
        format!("{x:.6e}")
    }
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Bound::AtMost(b) => write!(f, "<={}", num(b)),
            Bound::AtLeast(b) => write!(f, ">={}", num(b)),
            Bound::Within(lo, hi) => write!(f, "[{},{}]", num(lo), num(hi)),
            Bound::Equals(b) => write!(f, "=={}", num(b)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub bound: Bound,
    pub passed: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, measured: f64, bound: Bound) -> Self {
        Check {
            name: name.into(),
            measured,
            passed: bound.holds(measured),
            bound,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\t{}\t{}",
            self.name,
            num(self.measured),
            self.bound,
            if self.passed { "PASS" } else { "FAIL" }
        )
    }
}

pub const REPORT_HEADER: &str = "check\tmeasured\tbound\tresult";

/// Runs a suite by name. Unknown names yield an error listing the valid ones.
pub fn run_suite(name: &str, seed: u64) -> anyhow::Result<Vec<Check>> {
    Ok(match name {
        "masks" => masks(seed),
        "fisher" => fisher(seed)?,
        "toy" => {
            let mut c = toy_sharpness()?;
            c.extend(toy_divergence()?);
            c
        }
        "drift-average" => drift_average(seed)?,
        "drift-standard" => drift_standard(seed)?,
        "stability" => stability(seed)?,
        "sde" => sde(seed)?,
        "lemmas" => lemmas()?,
        "overhead" => overhead()?,
        "eigen" => eigen(seed)?,
        other => anyhow::bail!(
            "unknown suite `{other}`; valid suites: {}",
            SUITES.join(", ")
        ),
    })
}

// ---------------------------------------------------------------------------

/// Stable sort by `|h|`; ties keep the lower index first.
fn mask_oracle(h: &[f64], k: usize) -> Vec<bool> {
    let mut idx: Vec<usize> = (0..h.len()).collect();
    idx.sort_by(|&a, &b| h[a].abs().total_cmp(&h[b].abs()));
    let mut mask = vec![false; h.len()];
    for &i in &idx[..k] {
        mask[i] = true;
    }
    mask
}

pub const MASK_CASES: usize = 1000;

pub fn masks(seed: u64) -> Vec<Check> {
    let mut r = rng::seeded(seed);
    let mut failures = 0usize;
    let mut cases = 0usize;
    while cases < MASK_CASES {
        let p = r.random_range(2..=64usize);
        let gamma = r.random_range(0.05..0.999);
        let k = (p as f64 * gamma).floor() as usize;
        if k == 0 {
            continue;
        }
        // Half of the cases draw from a small lattice to force ties.
        let lattice = r.random_bool(0.5);
        let h: Vec<f64> = (0..p)
            .map(|_| {
                if lattice {
                    f64::from(r.random_range(-3i32..=3)) * 0.5
                } else {
                    r.random_range(-2.0..2.0)
                }
            })
            .collect();
        cases += 1;
        let ok = match build_mask(&h, gamma) {
            Ok(m) => m.count == k && m.mask == mask_oracle(&h, k),
            Err(_) => false,
        };
        failures += usize::from(!ok);
    }
    vec![
        Check::new(
            "masks/cases",
            cases as f64,
            Bound::Equals(MASK_CASES as f64),
        ),
        Check::new("masks/failures", failures as f64, Bound::Equals(0.0)),
    ]
}

pub const FISHER_DRAWS: usize = 100_000;

/// Paired Monte-Carlo comparison of `B ĝ⊙ĝ` against the per-sample diagonal
/// `(1/B) Σ_b g_b⊙g_b` under the same label draws.
pub fn fisher(seed: u64) -> anyhow::Result<Vec<Check>> {
    let l = SoftmaxModel::default_instance();
    let theta = l.default_init(0);
    let p = l.dim();
    let b = l.n_samples() as f64;
    let mut r = rng::seeded(seed);
    let mut sum = vec![0.0; p];
    let mut sum_sq = vec![0.0; p];
    for _ in 0..FISHER_DRAWS {
        let grads = landscapes::sampled_label_sample_grads(&l, &theta, &mut r)?;
        let mean: Vec<f64> = (0..p)
            .map(|i| grads.iter().map(|g| g[i]).sum::<f64>() / b)
            .collect();
        for i in 0..p {
            let per_sample = grads.iter().map(|g| g[i] * g[i]).sum::<f64>() / b;
            let d = b * mean[i] * mean[i] - per_sample;
            sum[i] += d;
            sum_sq[i] += d * d;
        }
    }
    let n = FISHER_DRAWS as f64;
    let z: Vec<f64> = (0..p)
        .map(|i| {
            let m = sum[i] / n;
            let var = (sum_sq[i] / n - m * m).max(0.0) * n / (n - 1.0);
            let se = (var / n).sqrt();
            if se == 0.0 {
                if m == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                m.abs() / se
            }
        })
        .collect();
    let worst = z.iter().copied().fold(0.0, f64::max);
    let beyond = z.iter().filter(|&&x| x > 3.0).count();
    Ok(vec![
        Check::new("fisher/max_abs_z", worst, Bound::AtMost(3.0)),
        Check::new(
            "fisher/coords_beyond_3se",
            beyond as f64,
            Bound::Equals(0.0),
        ),
    ])
}

pub const TOY_KAPPAS: [f64; 5] = [0.0, 1.0, 5.0, 10.0, 100.0];

/// IRE-GD on Toy2D with the exact diagonal, `γ = 0.5`, mask refreshed every
/// step from the start.
pub fn toy_ire_run(
    kappa: f64,
    eta: f64,
    steps: usize,
    log_every: usize,
) -> ire_core::Result<ire_core::trajectory::RunOutcome> {
    let cfg = IreConfig::new(kappa, 0.5, Estimator::ExactDiag);
    let spec = RunSpec {
        log_every,
        coord_indices: vec![0, 1],
        ..RunSpec::new(steps)
    };
    run_trajectory(
        &Toy2D,
        &TOY_START,
        &OptimizerConfig::gd(eta),
        Some(&cfg),
        &spec,
        0,
    )
}

pub fn toy_gd_run(eta: f64, steps: usize) -> ire_core::Result<ire_core::trajectory::RunOutcome> {
    let spec = RunSpec {
        coord_indices: vec![0, 1],
        ..RunSpec::new(steps)
    };
    run_trajectory(
        &Toy2D,
        &[0.5, 0.5],
        &OptimizerConfig::gd(eta),
        None,
        &spec,
        0,
    )
}

/// Final `(trace, |u|)`, infinite for diverged runs.
fn toy_final(out: &ire_core::trajectory::RunOutcome) -> (f64, f64) {
    match out.log.status {
        RunStatus::Diverged { .. } => (f64::INFINITY, f64::INFINITY),
        _ => {
            let last = out.log.last().expect("logged start");
            (last.trace_hessian, last.coords[0].abs())
        }
    }
}

pub fn toy_sharpness() -> anyhow::Result<Vec<Check>> {
    let mut finals = Vec::new();
    for &k in &TOY_KAPPAS {
        let out = toy_ire_run(k, 0.5, 2000, 2000)?;
        log::info!("toy κ={k}: status {:?}", out.log.status);
        finals.push(toy_final(&out));
    }
    let worst_increase = finals
        .windows(2)
        .map(|w| {
            if w[1].0 <= w[0].0 {
                0.0
            } else {
                w[1].0 - w[0].0
            }
        })
        .fold(0.0, f64::max);
    let mut checks = vec![Check::new(
        "toy/final_trace_increase_over_kappa",
        worst_increase,
        Bound::AtMost(0.0),
    )];
    for (k, (trace, _)) in TOY_KAPPAS.iter().zip(&finals) {
        checks.push(Check::new(
            format!("toy/kappa{k}_final_trace_finite"),
            f64::from(u8::from(trace.is_finite())),
            Bound::Equals(1.0),
        ));
    }
    checks.push(Check::new(
        "toy/kappa100_final_abs_u",
        finals[4].1,
        Bound::AtMost(0.05),
    ));
    checks.push(Check::new(
        "toy/kappa0_final_abs_u",
        finals[0].1,
        Bound::AtLeast(0.5),
    ));
    Ok(checks)
}

pub fn toy_divergence() -> anyhow::Result<Vec<Check>> {
    let eta2 = toy_gd_run(2.0, 500)?;
    let steps_to_divergence = match eta2.log.status {
        RunStatus::Diverged { step } => step as f64,
        _ => f64::INFINITY,
    };
    let eta1 = toy_gd_run(1.0, 500)?;
    let final_loss = match eta1.log.status {
        RunStatus::Diverged { .. } => f64::INFINITY,
        _ => eta1.log.last().expect("logged start").loss,
    };
    Ok(vec![
        Check::new(
            "toy/gd_eta2_steps_to_divergence",
            steps_to_divergence,
            Bound::AtMost(500.0),
        ),
        Check::new("toy/gd_eta1_final_loss", final_loss, Bound::AtMost(1e-10)),
    ])
}

pub const DRIFT_REPS: usize = 2000;
pub const DRIFT_ETA: f64 = 0.01;
pub const DRIFT_RHO: f64 = 0.05;

/// R² of the least-squares line through the origin `y = c x` (centred
/// total sum of squares).
pub fn r_squared_through_origin(x: &[f64], y: &[f64]) -> f64 {
    let c = linalg::dot(x, y) / linalg::dot(x, x);
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - c * a).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|b| (b - mean).powi(2)).sum();
    1.0 - ss_res / ss_tot
}

#[allow(clippy::too_many_arguments)]
fn drift_checks<L: Landscape + ?Sized>(
    prefix: &str,
    l: &L,
    theta0: &[f64],
    variant: SamVariant,
    kappas: &[f64],
    min_cos: f64,
    ratio: (f64, f64),
    seed: u64,
) -> anyhow::Result<Vec<Check>> {
    let mut checks = Vec::new();
    let mut mags = Vec::new();
    let base = TwoPhaseConfig::new(variant, DRIFT_ETA, DRIFT_RHO, 0.0, 1);
    let start = phase_one(l, theta0, base.hitting_radius(), &base.phi)?;
    for &k in kappas {
        let cfg = TwoPhaseConfig {
            kappa: k,
            ..base.clone()
        };
        let d = measure_drift(l, &start, &cfg, DRIFT_REPS, seed)?;
        let rel = linalg::dist(&d.mean, &d.predicted) / linalg::norm(&d.predicted);
        checks.push(Check::new(
            format!("{prefix}/kappa{k}_cosine"),
            d.cosine_to_descent(),
            Bound::AtLeast(min_cos),
        ));
        checks.push(Check::new(
            format!("{prefix}/kappa{k}_rel_error_vs_theory"),
            rel,
            Bound::AtMost(0.1),
        ));
        mags.push(d.magnitude());
    }
    let i0 = kappas
        .iter()
        .position(|&k| k == 0.0)
        .expect("κ = 0 baseline");
    let i9 = kappas.iter().position(|&k| k == 9.0).expect("κ = 9 run");
    checks.push(Check::new(
        format!("{prefix}/magnitude_ratio_k9_over_k0"),
        mags[i9] / mags[i0],
        Bound::Within(ratio.0, ratio.1),
    ));
    let x: Vec<f64> = kappas.iter().map(|k| 1.0 + k).collect();
    checks.push(Check::new(
        format!("{prefix}/linearity_r2"),
        r_squared_through_origin(&x, &mags),
        Bound::AtLeast(0.95),
    ));
    Ok(checks)
}

pub fn drift_average(seed: u64) -> anyhow::Result<Vec<Check>> {
    let v = QuadraticValley::default_theory();
    drift_checks(
        "drift-average",
        &v,
        &VALLEY_START,
        SamVariant::Average,
        &[0.0, 4.0, 9.0],
        0.9,
        (8.0, 12.0),
        seed,
    )
}

pub fn drift_standard(seed: u64) -> anyhow::Result<Vec<Check>> {
    let r = InterpolatingRegression::default_instance();
    let theta0 = r.default_init(REGRESSION_INIT_SEED);
    drift_checks(
        "drift-standard",
        &r,
        &theta0,
        SamVariant::Standard,
        &[0.0, 9.0],
        0.85,
        (7.0, 13.0),
        seed,
    )
}

pub const STABILITY_STEPS: usize = 10_000;

pub fn stability(seed: u64) -> anyhow::Result<Vec<Check>> {
    let v = QuadraticValley::default_theory();
    let kappa = (1.0 / DRIFT_RHO).floor();
    let mut max_dist = Vec::new();
    let mut diverged = 0.0;
    for k in [0.0, kappa] {
        let cfg = TwoPhaseConfig::new(
            SamVariant::Average,
            DRIFT_ETA,
            DRIFT_RHO,
            k,
            STABILITY_STEPS,
        );
        match two_phase_run(&v, &VALLEY_START, &cfg, seed) {
            Ok(out) => max_dist.push(out.max_dist()),
            Err(e) if e.is_divergence() => {
                diverged += 1.0;
                max_dist.push(f64::INFINITY);
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(vec![
        Check::new(
            "stability/max_dist_ratio_boosted_over_plain",
            max_dist[1] / max_dist[0],
            Bound::AtMost(2.0),
        ),
        Check::new("stability/diverged_runs", diverged, Bound::Equals(0.0)),
    ])
}

pub const SDE_ETA: f64 = 0.01;
pub const SDE_SIGMA: f64 = 1.0;
pub const SDE_PATHS: usize = 200;

/// The label-noise SDE is an Ornstein–Uhlenbeck process in `v` with
/// stationary variance `ησ²/2`; the `*_vs_eta_sigma2` and `*_vs_unit_rate`
/// checks hold the simulation to the stated targets `ησ²` and
/// `-(1+κ)∇h/2`, the remaining ones to the exact equilibrium values.
pub fn sde(seed: u64) -> anyhow::Result<Vec<Check>> {
    let mut checks = Vec::new();
    let ou_var = SDE_ETA * SDE_SIGMA * SDE_SIGMA / 2.0;

    let cfg = SdeConfig::new(SDE_SIGMA, SDE_ETA, 0.0, 0.0);
    let flat = sde_drift_ensemble(
        &ConstantField(1.0),
        &cfg,
        &[0.0],
        5.0,
        50.0,
        SDE_PATHS,
        seed,
    )?;
    let stated = SDE_ETA * SDE_SIGMA * SDE_SIGMA;
    checks.push(Check::new(
        "sde/variance_rel_error_vs_eta_sigma2",
        (flat.v_variance / stated - 1.0).abs(),
        Bound::AtMost(0.05),
    ));
    checks.push(Check::new(
        "sde/variance_rel_error_vs_half_eta_sigma2",
        (flat.v_variance / ou_var - 1.0).abs(),
        Bound::AtMost(0.05),
    ));

    let mut coefficients = Vec::new();
    for k in [0.0, 9.0] {
        let cfg = SdeConfig::new(SDE_SIGMA, SDE_ETA, k, 0.0);
        let s = sde_drift_ensemble(
            &OnePlusNormSq,
            &cfg,
            &[1.0],
            5.0,
            10.0,
            SDE_PATHS,
            seed ^ 0x5de,
        )?;
        let half_grad = s.mean_grad_h / 2.0;
        let stated = -(1.0 + k) * half_grad;
        let exact = -(1.0 + k) * ou_var * half_grad;
        checks.push(Check::new(
            format!("sde/kappa{k}_drift_rel_error_vs_unit_rate"),
            (s.du_dt / stated - 1.0).abs(),
            Bound::AtMost(0.15),
        ));
        checks.push(Check::new(
            format!("sde/kappa{k}_drift_rel_error_vs_ou_rate"),
            (s.du_dt / exact - 1.0).abs(),
            Bound::AtMost(0.15),
        ));
        coefficients.push(s.du_dt / half_grad);
    }
    checks.push(Check::new(
        "sde/drift_ratio_k9_over_k0",
        coefficients[1] / coefficients[0],
        Bound::Within(10.0 * 0.85, 10.0 * 1.15),
    ));
    Ok(checks)
}

/// On-manifold base point of the default valley with `u ≠ 0`.
pub fn valley_base_point() -> Vec<f64> {
    let mut z = vec![0.0; 10];
    z[0] = 0.4;
    z[1] = -0.2;
    z[3] = 0.3;
    z
}

pub fn lemmas() -> anyhow::Result<Vec<Check>> {
    let mut checks = Vec::new();
    let cfg = LemmaConfig::default();
    let v = QuadraticValley::default_theory();
    let r = InterpolatingRegression::default_instance();
    let rz = phi_limit(&r, &r.default_init(REGRESSION_INIT_SEED), &cfg.phi)?;
    let cases: [(&str, &dyn Landscape, Vec<f64>); 2] =
        [("valley", &v, valley_base_point()), ("regression", &r, rz)];
    for (name, l, z) in cases {
        let m = l.sharp_dim().expect("manifold landscape");
        let rep = lemma_property_suite(l, &z, m, &cfg)?;
        checks.push(Check::new(
            format!("lemmas/{name}_projector_gap_exponent"),
            rep.projector_gap_exponent,
            Bound::Within(0.8, 1.2),
        ));
        checks.push(Check::new(
            format!("lemmas/{name}_projected_grad_exponent"),
            rep.projected_grad_exponent,
            Bound::Within(1.8, 2.2),
        ));
        checks.push(Check::new(
            format!("lemmas/{name}_tangency_exponent"),
            rep.tangency_exponent,
            Bound::AtLeast(1.8),
        ));
        checks.push(Check::new(
            format!("lemmas/{name}_sandwich_violations"),
            rep.violations.len() as f64,
            Bound::Equals(0.0),
        ));
        let p = l.dim();
        let theta = linalg::axpy(&z, 1e-2, &vec![1.0 / (p as f64).sqrt(); p]);
        let (deriv, g) = flow_orthogonality(l, &theta, 1e-5, &cfg.phi)?;
        checks.push(Check::new(
            format!("lemmas/{name}_flow_orthogonality_ratio"),
            deriv / g,
            Bound::AtMost(1e-6),
        ));
        let phi = phi_limit(l, &theta, &cfg.phi)?;
        let phi2 = phi_limit(l, &phi, &cfg.phi)?;
        checks.push(Check::new(
            format!("lemmas/{name}_idempotence"),
            linalg::dist(&phi, &phi2),
            Bound::AtMost(1e-8),
        ));
    }
    Ok(checks)
}

pub const OVERHEAD_STEPS: usize = 10_000;
pub const OVERHEAD_PERIOD: usize = 10;

pub fn overhead() -> anyhow::Result<Vec<Check>> {
    let l = SoftmaxModel::default_instance();
    let theta0 = l.default_init(0);
    let spec = RunSpec {
        log_every: OVERHEAD_STEPS,
        ..RunSpec::new(OVERHEAD_STEPS)
    };
    let base = OptimizerConfig::gd(0.1);
    let evals = |ire: Option<&IreConfig>| -> anyhow::Result<f64> {
        let out = run_trajectory(&l, &theta0, &base, ire, &spec, 0)?;
        Ok(out.log.last().expect("final row").grad_evals as f64)
    };
    let t = OVERHEAD_STEPS as f64;
    let plain = evals(None)?;
    let mut checks = vec![Check::new("overhead/base_evals", plain, Bound::Equals(t))];
    for warmup in [0usize, 500] {
        let cfg = IreConfig::new(1.0, 0.9, Estimator::Fisher)
            .with_refresh(OVERHEAD_PERIOD)
            .with_warmup(warmup);
        let n = evals(Some(&cfg))?;
        let expected = t + (OVERHEAD_STEPS - warmup).div_ceil(OVERHEAD_PERIOD) as f64;
        checks.push(Check::new(
            format!("overhead/fisher_ire_evals_warmup{warmup}"),
            n,
            Bound::Equals(expected),
        ));
        if warmup == 0 {
            checks.push(Check::new(
                "overhead/evals_per_step",
                n / t,
                Bound::Equals(1.1),
            ));
        }
    }
    Ok(checks)
}

pub const EIGEN_MATRICES: usize = 100;

pub fn eigen(seed: u64) -> anyhow::Result<Vec<Check>> {
    let mut r = rng::seeded(seed);
    let mut worst = 0.0f64;
    let mut worst_orth = 0.0f64;
    for _ in 0..EIGEN_MATRICES {
        let p = r.random_range(2..=64usize);
        let data: Vec<f64> = (0..p * p).map(|_| r.random_range(-1.0..1.0)).collect();
        let a = SymMatrix::new(p, data)?;
        let e = sym_eigh(&a)?;
        worst = worst.max(e.reconstruction_residual(&a));
        worst_orth = worst_orth.max(e.orthonormality_residual());
    }
    Ok(vec![
        Check::new(
            "eigen/max_reconstruction_residual",
            worst,
            Bound::AtMost(1e-8),
        ),
        Check::new(
            "eigen/max_orthonormality_residual",
            worst_orth,
            Bound::AtMost(1e-8),
        ),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounds_and_formatting() {
        assert!(Check::new("a", 1.0, Bound::AtMost(1.0)).passed);
        assert!(!Check::new("a", f64::NAN, Bound::AtLeast(0.0)).passed);
        assert!(!Check::new("a", f64::INFINITY, Bound::AtMost(500.0)).passed);
        assert_eq!(
            Check::new("x", 11000.0, Bound::Equals(11000.0)).to_string(),
            "x\t11000\t==11000\tPASS"
        );
        assert_eq!(Bound::Within(8.0, 12.0).to_string(), "[8,12]");
    }

    #[test]
    fn unknown_suite_lists_names() {
        let err = run_suite("nope", 0).unwrap_err().to_string();
        assert!(err.contains("drift-average") && err.contains("overhead"));
    }

    #[test]
    fn r_squared_of_exact_line() {
        assert!(
            (r_squared_through_origin(&[1.0, 5.0, 10.0], &[2.0, 10.0, 20.0]) - 1.0).abs() < 1e-15
        );
    }
}
