use ire_core::landscapes::{self, InterpolatingRegression, Landscape, QuadraticValley, Toy2D};
use ire_core::linalg;
use ire_core::rng;
use ire_core::theory::{self, *};

/// Explicit Euler on the Toy2D flow with a fixed step, run until the sharp
/// coordinate has decayed below 1e-14. First order, so the oracle below
/// combines steps `h` and `h/2` to cancel the leading error term.
fn toy_euler_limit(mut u: f64, mut v: f64, h: f64) -> f64 {
    while v.abs() > 1e-14 {
        let du = -u * v * v;
        let dv = -(1.0 + u * u) * v;
        u += h * du;
        v += h * dv;
    }
    u
}

#[test]
fn toy_limit_matches_euler_oracle() {
    for (u0, v0) in [(2.0, 1.0), (1.0, 0.5), (-0.5, 1.5)] {
        let phi = phi_limit(&Toy2D, &[u0, v0], &PhiConfig::default()).unwrap();
        let oracle = 2.0 * toy_euler_limit(u0, v0, 5e-6) - toy_euler_limit(u0, v0, 1e-5);
        assert!(
            (phi[0] - oracle).abs() <= 1e-6,
            "({u0}, {v0}): {} vs {oracle}",
            phi[0]
        );
        assert!(phi[1].abs() <= 1e-9);
    }
}

#[test]
fn limit_is_idempotent() {
    let cfg = PhiConfig::default();
    let v = QuadraticValley::default_theory();
    let r = InterpolatingRegression::default_instance();
    let starts: Vec<(&dyn Landscape, Vec<f64>)> = vec![
        (&Toy2D, vec![2.0, 1.0]),
        (&v, vec![0.5, -0.3, 0.2, 0.1, 0.4, -0.2, 0.3, 0.2, 0.2, 0.2]),
        (&r, r.default_init(0)),
    ];
    for (l, theta) in starts {
        let z = phi_limit(l, &theta, &cfg).unwrap();
        assert!(
            linalg::norm(&landscapes::grad(l, &z).unwrap()) <= 1e-9,
            "{}",
            l.name()
        );
        let zz = phi_limit(l, &z, &cfg).unwrap();
        assert!(linalg::dist(&z, &zz) <= 1e-8, "{}", l.name());
        assert!(dist_to_manifold(l, &z, &cfg).unwrap() <= 1e-10);
    }
}

#[test]
fn riemannian_gradient_matches_projected_differences() {
    let v = QuadraticValley::default_theory();
    let mut z = vec![0.0; 10];
    z[..7].copy_from_slice(&[0.3, -0.1, 0.5, 0.0, 0.2, -0.4, 0.1]);
    let rg = riemannian_trace_grad(&v, &z, 3).unwrap();
    let proj = ire_core::ire::flat_projector(&v, &z, 3).unwrap();
    let fd = linalg::scale(
        &proj.apply(&theory::fd_trace_hessian_grad(&v, &z).unwrap()),
        0.5,
    );
    assert!(linalg::dist(&rg, &fd) <= 1e-4);
    // λ_i = a_i + |u|² for three sharp coordinates: ∇Tr/2 = 3u on the flat block.
    for i in 0..7 {
        assert!((rg[i] - 3.0 * z[i]).abs() <= 1e-12);
    }
    assert!(rg[7..].iter().all(|x| x.abs() <= 1e-12));
}

fn valley_base_point() -> Vec<f64> {
    let mut z = vec![0.0; 10];
    z[0] = 0.4;
    z[1] = -0.2;
    z[3] = 0.3;
    z
}

#[test]
fn lemma_exponents_on_the_valley() {
    let v = QuadraticValley::default_theory();
    let rep = lemma_property_suite(&v, &valley_base_point(), 3, &LemmaConfig::default()).unwrap();
    assert!(
        (rep.projector_gap_exponent - 1.0).abs() <= 0.2,
        "{}",
        rep.projector_gap_exponent
    );
    assert!(
        (rep.projected_grad_exponent - 2.0).abs() <= 0.2,
        "{}",
        rep.projected_grad_exponent
    );
    assert!(rep.tangency_exponent >= 1.8, "{}", rep.tangency_exponent);
    assert!(rep.violations.is_empty(), "{:?}", rep.violations);
    assert!(rep.mu.is_finite() && rep.beta.is_finite() && rep.mu > 0.0);
    for w in rep.per_delta_constants.windows(2) {
        assert!((w[0].1 / w[1].1 - 1.0).abs() < 0.5 && (w[0].2 / w[1].2 - 1.0).abs() < 0.5);
    }
}

#[test]
fn lemma_quantities_vanish_on_the_manifold() {
    let v = QuadraticValley::default_theory();
    let cfg = LemmaConfig {
        deltas: vec![0.0],
        directions: 3,
        ..LemmaConfig::default()
    };
    let rep = lemma_property_suite(&v, &valley_base_point(), 3, &cfg).unwrap();
    for s in &rep.samples {
        assert_eq!((s.dist, s.grad_norm, s.loss), (0.0, 0.0, 0.0));
        assert!(s.projector_gap <= 1e-12 && s.projected_grad == 0.0 && s.tangency_remainder == 0.0);
    }
}

#[test]
fn flow_limit_is_flat_along_the_gradient() {
    let cfg = LemmaConfig::default().phi;
    let v = QuadraticValley::default_theory();
    let theta = [0.4, -0.2, 0.0, 0.3, 0.0, 0.0, 0.0, 0.01, 0.02, -0.01];
    let (deriv, g) = flow_orthogonality(&v, &theta, 1e-5, &cfg).unwrap();
    assert!(deriv <= 1e-6 * g, "{deriv:e} vs {g:e}");
    let (deriv, g) = flow_orthogonality(&Toy2D, &[1.0, 0.05], 1e-5, &cfg).unwrap();
    assert!(deriv <= 1e-6 * g, "{deriv:e} vs {g:e}");
}

#[test]
fn kappa_zero_phase_two_is_plain_sam() {
    let v = QuadraticValley::default_theory();
    let theta = [0.4, -0.2, 0.0, 0.3, 0.0, 0.0, 0.0, 0.001, 0.002, -0.001];
    let cfg = TwoPhaseConfig::new(SamVariant::Average, 0.01, 0.05, 0.0, 1);
    let next = phase_two_step(&v, &theta, &cfg, 3, &mut rng::seeded(4)).unwrap();
    let sam =
        ire_core::optim::OptimizerConfig::new(ire_core::optim::OptimizerKind::SamAverage, 0.01)
            .with_rho(0.05);
    let g = ire_core::optim::sam_average_direction(&sam, &v, &theta, &mut rng::seeded(4)).unwrap();
    assert_eq!(next, ire_core::optim::apply_step(&theta, &g, 0.01));
}

#[test]
fn two_phase_run_logs_manifold_points() {
    let v = QuadraticValley::default_theory();
    let theta0 = [0.5, -0.3, 0.2, 0.1, 0.4, -0.2, 0.3, 0.2, 0.2, 0.2];
    let cfg = TwoPhaseConfig::new(SamVariant::Average, 0.01, 0.05, 4.0, 50);
    let out = two_phase_run(&v, &theta0, &cfg, 1).unwrap();
    assert_eq!(out.log.rows.len(), 51);
    assert_eq!(out.manifold_points.len(), 51);
    assert!(out.log.rows[0].dist_to_manifold.unwrap() <= cfg.hitting_radius() * (1.0 + 1e-9));
    assert!(out.log.is_well_formed());
    let first = theory::trace_hessian(&v, &out.manifold_points[0]).unwrap();
    let last = theory::trace_hessian(&v, out.manifold_points.last().unwrap()).unwrap();
    assert!(last < first);
}

// The label-noise SDE `dv = -v h dt + sqrt(η σ² h) dW` is an Ornstein–Uhlenbeck
// process with stationary variance η σ² / 2, so the flat drift at equilibrium
// is `-(1+κ) (η σ²/2) ∇h/2`.

#[test]
fn sde_stationary_variance() {
    let cfg = SdeConfig::new(1.0, 0.01, 0.0, 0.0);
    let stats = sde_drift_ensemble(&ConstantField(1.0), &cfg, &[0.0], 5.0, 50.0, 200, 3).unwrap();
    let expected = 0.01 / 2.0;
    assert!(
        (stats.v_variance / expected - 1.0).abs() <= 0.05,
        "{}",
        stats.v_variance
    );
}

#[test]
fn sde_flat_drift_and_kappa_ratio() {
    let h = OnePlusNormSq;
    let mut rates = Vec::new();
    for kappa in [0.0, 9.0] {
        let cfg = SdeConfig::new(1.0, 0.01, kappa, 0.0);
        let stats = sde_drift_ensemble(&h, &cfg, &[1.0], 5.0, 10.0, 200, 8).unwrap();
        let predicted = -(1.0 + kappa) * 0.01 / 2.0 * stats.mean_grad_h / 2.0;
        assert!(
            (stats.du_dt / predicted - 1.0).abs() <= 0.15,
            "κ={kappa}: {} vs {predicted}",
            stats.du_dt
        );
        // u has moved further at κ = 9, so compare rates per unit ∇h/2.
        rates.push(stats.du_dt / (stats.mean_grad_h / 2.0));
    }
    assert!((rates[1] / rates[0] / 10.0 - 1.0).abs() <= 0.15);
}

#[test]
fn sde_divergence_signal() {
    let cfg = SdeConfig {
        radius: 1e-3,
        ..SdeConfig::new(1.0, 0.01, 0.0, 1.0)
    };
    let err =
        sde_simulate(&ConstantField(1.0), &cfg, &[0.0], 0.0, &mut rng::seeded(0)).unwrap_err();
    assert!(err.is_divergence());
}
