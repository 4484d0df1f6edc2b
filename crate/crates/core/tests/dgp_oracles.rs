use ivattrit::data::ComplianceType;
use ivattrit::dgp::{
    li_gap, li_gap_from_sample, simulate, simulate_nonparametric, true_late, ErrorStructure, MomentFunction,
    NonparametricSpec, ParametricDgpConfig,
};
use ivattrit::estimators::late_oracle;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).unwrap()
}

/// Mean of a standard normal truncated to `(a, b]`.
fn truncated_mean(a: f64, b: f64) -> f64 {
    let n = std_normal();
    (n.pdf(a) - n.pdf(b)) / (n.cdf(b) - n.cdf(a))
}

/// Composite Simpson rule on `[a, b]`.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, m: usize) -> f64 {
    let h = (b - a) / m as f64;
    let mut s = f(a) + f(b);
    for i in 1..m {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

const CATALOGUE: [MomentFunction; 4] = [
    MomentFunction::Identity,
    MomentFunction::Square,
    MomentFunction::Indicator { threshold: 0.5 },
    MomentFunction::Indicator { threshold: 1.5 },
];

fn scenario_a() -> ParametricDgpConfig {
    ParametricDgpConfig {
        alpha0: 0.0,
        alpha1: 1.0,
        beta0: 0.0,
        beta1: 1.0,
        gamma0: 0.2,
        gamma1: 0.3,
        pz: 0.5,
        error_structure: ErrorStructure::Identical,
        n: 10_000,
        seed: 1,
        covariates: vec![],
    }
}

fn scenario_b() -> ParametricDgpConfig {
    ParametricDgpConfig {
        error_structure: ErrorStructure::Correlated { delta1: 1.0, rho: 0.8, sigma_eps: 0.1 },
        ..scenario_a()
    }
}

fn scenario_c() -> ParametricDgpConfig {
    ParametricDgpConfig {
        error_structure: ErrorStructure::ComplierShift { pi: 0.4, sigma_u: 1.0, rho_vw: 0.0 },
        ..scenario_a()
    }
}

#[test]
fn identical_errors_force_disjoint_complier_supports() {
    for seed in 0..20 {
        let rep = li_gap(&scenario_a(), &[MomentFunction::Identity], 10_000, seed).unwrap();
        for z in [0, 1] {
            let cell = rep.cell(z, ComplianceType::Complier, MomentFunction::Identity).unwrap();
            assert_eq!(cell.supports_disjoint(), Some(true), "seed {seed}, z={z}");
        }
    }
}

#[test]
fn identical_errors_gap_matches_truncated_normal() {
    let rep = li_gap(&scenario_a(), &[MomentFunction::Identity], 100_000, 5).unwrap();
    // z=1 compliers: v in (0, 1], respond iff v <= 0.5
    let cell = rep.cell(1, ComplianceType::Complier, MomentFunction::Identity).unwrap();
    let expected = truncated_mean(0.0, 0.5) - truncated_mean(0.5, 1.0);
    let (gap, se) = (cell.gap.unwrap(), cell.se.unwrap());
    assert!((gap - expected).abs() < 4.0 * se, "{gap} vs {expected} (se {se})");
    assert!(gap.abs() > 5.0 * se);
    // z=0 compliers: respond iff v <= 0.2
    let cell = rep.cell(0, ComplianceType::Complier, MomentFunction::Identity).unwrap();
    let expected = truncated_mean(0.0, 0.2) - truncated_mean(0.2, 1.0);
    assert!((cell.gap.unwrap() - expected).abs() < 4.0 * cell.se.unwrap());
}

/// Complier gap at z=1 for the correlated-error scenario by quadrature:
/// `E[U | c, R] = rho * E[V | c, R]` and `R = 1(delta1 V + eps <= g0 + g1)`.
fn correlated_gap_by_quadrature(cfg: &ParametricDgpConfig) -> f64 {
    let ErrorStructure::Correlated { delta1, rho, sigma_eps } = cfg.error_structure else { unreachable!() };
    let n = std_normal();
    let g = cfg.gamma0 + cfg.gamma1;
    let respond = |v: f64| n.cdf((g - delta1 * v) / sigma_eps);
    let (a, b) = (cfg.beta0, cfg.beta0 + cfg.beta1);
    let m = 20_000;
    let w1 = simpson(|v| n.pdf(v) * respond(v), a, b, m);
    let w0 = simpson(|v| n.pdf(v) * (1.0 - respond(v)), a, b, m);
    let m1 = simpson(|v| v * n.pdf(v) * respond(v), a, b, m) / w1;
    let m0 = simpson(|v| v * n.pdf(v) * (1.0 - respond(v)), a, b, m) / w0;
    rho * (m1 - m0)
}

// First brute-force run (10^6 draws, seed 2024) of the z=1 complier gap.
const SCENARIO_B_COMPLIER_GAP: f64 = -0.3755018271960082;

#[test]
fn correlated_errors_leave_a_gap() {
    let cfg = scenario_b();
    let rep = li_gap(&cfg, &[MomentFunction::Identity], 1_000_000, 2024).unwrap();
    let cell = rep.cell(1, ComplianceType::Complier, MomentFunction::Identity).unwrap();
    let (gap, se) = (cell.gap.unwrap(), cell.se.unwrap());
    let expected = correlated_gap_by_quadrature(&cfg);
    assert!((expected - -0.374_974_9).abs() < 1e-6, "quadrature {expected}");
    assert!((gap - expected).abs() < 4.0 * se, "{gap} vs {expected} (se {se})");
    assert!(gap.abs() > 5.0 * se);
    assert!((gap - SCENARIO_B_COMPLIER_GAP).abs() < 1e-12, "regression constant moved: {gap}");
}

#[test]
fn complier_shift_satisfies_latent_ignorability() {
    let rep = li_gap(&scenario_c(), &CATALOGUE, 100_000, 77).unwrap();
    assert_eq!(rep.cells.len(), 6 * CATALOGUE.len());
    for c in &rep.cells {
        assert!(!c.flagged);
        let zs = c.z_score().unwrap();
        assert!(zs <= 3.0, "z={} {} {}: {zs}", c.z, c.t, c.moment);
    }
}

#[test]
fn complier_shift_gaps_shrink_like_root_n() {
    let small = li_gap(&scenario_c(), &CATALOGUE, 25_000, 8).unwrap();
    let large = li_gap(&scenario_c(), &CATALOGUE, 100_000, 9).unwrap();
    for (s, l) in small.cells.iter().zip(&large.cells) {
        // 4x the draws halves the standard error
        let ratio = s.se.unwrap() / l.se.unwrap();
        assert!((1.7..2.3).contains(&ratio), "{} {} {}: ratio {ratio}", s.z, s.t, s.moment);
        assert!(l.z_score().unwrap() <= 4.0);
    }
    let mean_abs = |r: &ivattrit::dgp::LiGapReport| {
        r.cells.iter().map(|c| c.gap.unwrap().abs()).sum::<f64>() / r.cells.len() as f64
    };
    assert!(mean_abs(&large) < mean_abs(&small));
}

#[test]
fn always_taker_share_matches_normal_cdf() {
    let cfg = ParametricDgpConfig { beta0: -0.3, n: 100_000, seed: 4, ..scenario_c() };
    let sim = simulate(&cfg).unwrap();
    let k = sim.dataset.observations.iter().filter(|o| o.t == Some(ComplianceType::AlwaysTaker)).count();
    let share = k as f64 / cfg.n as f64;
    let truth = std_normal().cdf(cfg.beta0);
    let se = (truth * (1.0 - truth) / cfg.n as f64).sqrt();
    assert!((share - truth).abs() < 4.0 * se, "{share} vs {truth}");
    assert!(sim.dataset.observations.iter().all(|o| o.t != Some(ComplianceType::Defier)));
}

#[test]
fn complier_effect_by_brute_force() {
    let cfg = ParametricDgpConfig { n: 1_000_000, seed: 10, ..scenario_c() };
    let sim = simulate(&cfg).unwrap();
    let diffs: Vec<f64> = sim
        .dataset
        .observations
        .iter()
        .zip(&sim.latent)
        .filter(|(o, _)| o.t == Some(ComplianceType::Complier))
        .map(|(_, l)| l.y1 - l.y0)
        .collect();
    let brute = diffs.iter().sum::<f64>() / diffs.len() as f64;
    assert!((brute - true_late(&cfg)).abs() < 1e-12);
    let oracle = late_oracle(&sim).unwrap().point;
    assert_eq!(oracle, 1.0);
}

#[test]
fn heterogeneous_effect_oracle_matches_closed_form() {
    // y = d (1 + 0.5 u) + u with u = 0.4 + eps among compliers
    let spec = NonparametricSpec {
        outcome: "interacted(alpha1=1, alpha_u=0.5)".parse().unwrap(),
        treatment: "threshold(beta0=0, beta1=1)".parse().unwrap(),
        response: "threshold(gamma0=0.2, gamma1=0.3)".parse().unwrap(),
        errors: ErrorStructure::ComplierShift { pi: 0.4, sigma_u: 1.0, rho_vw: 0.0 },
        pz: 0.5,
        n: 200_000,
        seed: 3,
    };
    let sim = simulate_nonparametric(&spec).unwrap();
    let est = late_oracle(&sim).unwrap();
    let k = est.diagnostics["n_compliers"];
    let se = 0.5 / k.sqrt();
    assert!((est.point - 1.2).abs() < 3.0 * se, "{} (se {se})", est.point);
}

#[test]
fn nonparametric_complier_shift_has_no_gap() {
    for response in ["threshold(gamma0=0.2, gamma1=0.3)", "quadratic(gamma0=1, gamma1=0.5)"] {
        let spec = NonparametricSpec {
            outcome: "linear(alpha0=0, alpha1=1)".parse().unwrap(),
            treatment: "threshold(beta0=0, beta1=1)".parse().unwrap(),
            response: response.parse().unwrap(),
            errors: ErrorStructure::ComplierShift { pi: 0.4, sigma_u: 1.0, rho_vw: 0.0 },
            pz: 0.5,
            n: 100_000,
            seed: 21,
        };
        let rep = li_gap_from_sample(&simulate_nonparametric(&spec).unwrap(), &CATALOGUE, 21);
        assert!(rep.max_z_score() <= 3.5, "{response}: {}", rep.max_z_score());
    }
}

#[test]
fn quadratic_response_with_identical_errors_breaks_ignorability() {
    let spec = NonparametricSpec {
        outcome: "linear(alpha0=0, alpha1=1)".parse().unwrap(),
        treatment: "threshold(beta0=-0.5, beta1=1)".parse().unwrap(),
        response: "quadratic(gamma0=0.1, gamma1=0)".parse().unwrap(),
        errors: ErrorStructure::Identical,
        pz: 0.5,
        n: 100_000,
        seed: 5,
    };
    let rep = li_gap_from_sample(&simulate_nonparametric(&spec).unwrap(), &[MomentFunction::Square], 5);
    // respondents have w^2 <= 0.1, so u^2 is smaller among them
    let cell = rep.cell(1, ComplianceType::Complier, MomentFunction::Square).unwrap();
    assert!(cell.gap.unwrap() < 0.0 && cell.z_score().unwrap() > 5.0);
}
