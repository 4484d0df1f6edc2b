use ivattrit::dgp::{simulate, ErrorStructure, ParametricDgpConfig};
use ivattrit::estimators::{EstimatorId, EstimatorOptions};
use ivattrit::inference::{bootstrap, monte_carlo, MonteCarloReport, DEFAULT_BOOTSTRAP_REPLICATES};

fn scenario_c(n: usize, seed: u64) -> ParametricDgpConfig {
    ParametricDgpConfig {
        beta0: -0.3,
        gamma0: 0.2,
        gamma1: 0.3,
        error_structure: ErrorStructure::ComplierShift { pi: 0.4, sigma_u: 1.0, rho_vw: 0.0 },
        n,
        seed,
        ..Default::default()
    }
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

#[test]
fn default_replicates_follow_the_protocol() {
    assert_eq!(DEFAULT_BOOTSTRAP_REPLICATES, 1999);
}

#[test]
fn bootstrap_is_schedule_invariant() {
    let ds = simulate(&scenario_c(800, 2)).unwrap().dataset;
    let opts = EstimatorOptions::default();
    for id in [EstimatorId::Wald, EstimatorId::Mar, EstimatorId::LiMar] {
        let one = in_pool(1, || bootstrap(&ds, id, 199, 17, &opts).unwrap());
        let four = in_pool(4, || bootstrap(&ds, id, 199, 17, &opts).unwrap());
        let again = bootstrap(&ds, id, 199, 17, &opts).unwrap();
        assert_eq!(one, four, "{id}");
        assert_eq!(one, again, "{id}");
        assert_eq!(one.estimates, four.estimates);
        let other = bootstrap(&ds, id, 199, 18, &opts).unwrap();
        assert_ne!(one.estimates, other.estimates);
        assert!(one.standard_error > 0.0 && (1.0 / 199.0..=1.0).contains(&one.p_value));
    }
}

#[test]
fn monte_carlo_is_schedule_invariant() {
    let cfg = scenario_c(500, 0);
    let ids = [EstimatorId::Wald, EstimatorId::LiMar, EstimatorId::Oracle];
    let opts = EstimatorOptions::default();
    let a = in_pool(1, || monte_carlo(&cfg, &ids, 12, 500, 5, &opts).unwrap());
    let b = in_pool(3, || monte_carlo(&cfg, &ids, 12, 500, 5, &opts).unwrap());
    assert_eq!(a, b);
}

#[test]
fn oracle_bias_is_exactly_zero() {
    for alpha1 in [0.0, 1.0, -2.5] {
        let cfg = ParametricDgpConfig { alpha1, ..scenario_c(1000, 0) };
        let rep = monte_carlo(&cfg, &[EstimatorId::Oracle], 20, 1000, 3, &Default::default()).unwrap();
        let s = rep.summary(EstimatorId::Oracle).unwrap();
        assert_eq!(s.mean_bias, Some(0.0));
        assert_eq!(s.rmse, Some(0.0));
        assert_eq!(s.failures, 0);
        assert_eq!(s.bias_in_se(), Some(0.0));
    }
}

#[test]
fn report_moments_recompute_from_replications() {
    let cfg = scenario_c(400, 0);
    let ids = [EstimatorId::Wald, EstimatorId::Mar, EstimatorId::LiMar];
    let rep = monte_carlo(&cfg, &ids, 15, 400, 9, &Default::default()).unwrap();
    let json = serde_json::to_string(&rep.replications).unwrap();
    let restored = MonteCarloReport::from_replications(rep.dgp.clone(), &ids, serde_json::from_str(&json).unwrap());
    assert_eq!(restored, rep);
    for s in &rep.estimators {
        assert!(s.rmse.unwrap() >= s.mean_bias.unwrap().abs());
        assert_eq!(s.successes + s.failures, 15);
    }
}
