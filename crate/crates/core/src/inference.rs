//! Full-pipeline bootstrap with quantile-method p-values, and the Monte Carlo
//! harness used to check estimators against a known LATE.
//!
//! Both run their replications in parallel. Replication `r` draws from
//! substream `r` of the seed, so results do not depend on scheduling.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::dgp::{simulate_stream, true_late, ParametricDgpConfig};
use crate::error::{Error, Result};
use crate::estimators::{estimate, late_oracle, EstimatorId, EstimatorOptions};
use crate::rng::substream;
use crate::stats::{mean, mean_sd};

/// Bootstrap replications used when none are specified.
pub const DEFAULT_BOOTSTRAP_REPLICATES: usize = 1999;
pub const MIN_BOOTSTRAP_REPLICATES: usize = 99;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub estimator: EstimatorId,
    pub point: f64,
    pub standard_error: f64,
    pub p_value: f64,
    pub replicates: usize,
    pub failed_replicates: usize,
    pub seed: u64,
    /// False when at least a tenth of the replicates failed.
    pub valid: bool,
    pub failure_reasons: BTreeMap<String, usize>,
    /// Replicate estimates in replicate order; failures are `None`.
    #[serde(skip)]
    pub estimates: Vec<Option<f64>>,
}

/// Two-sided quantile-method p-value: twice the smaller of the shares of
/// replicate estimates at or below zero and at or above zero, clipped to
/// `[1/b, 1]`.
pub fn quantile_p_value(estimates: &[f64], b: usize) -> f64 {
    let lower = 1.0 / b as f64;
    if estimates.is_empty() {
        return 1.0;
    }
    let k = estimates.len() as f64;
    let le = estimates.iter().filter(|&&e| e <= 0.0).count() as f64 / k;
    let ge = estimates.iter().filter(|&&e| e >= 0.0).count() as f64 / k;
    (2.0 * le.min(ge)).clamp(lower, 1.0)
}

/// Resample rows with replacement `b` times, refit nuisances and re-estimate
/// on every replicate. Replicates that fail are counted and dropped.
pub fn bootstrap(
    dataset: &Dataset,
    estimator: EstimatorId,
    b: usize,
    seed: u64,
    options: &EstimatorOptions,
) -> Result<BootstrapResult> {
    if b < MIN_BOOTSTRAP_REPLICATES {
        return Err(Error::InvalidConfig(format!(
            "at least {MIN_BOOTSTRAP_REPLICATES} bootstrap replicates required, got {b}"
        )));
    }
    let point = estimate(dataset, estimator, options)?.point;
    let n = dataset.len();
    let outcomes: Vec<std::result::Result<f64, &'static str>> = (0..b)
        .into_par_iter()
        .map(|r| {
            let mut rng = substream(seed, r as u64);
            let idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            estimate(&dataset.select(&idx), estimator, options)
                .map(|e| e.point)
                .map_err(|e| e.kind())
        })
        .collect();

    let mut failure_reasons = BTreeMap::new();
    for reason in outcomes.iter().filter_map(|o| o.as_ref().err()) {
        *failure_reasons.entry(reason.to_string()).or_insert(0) += 1;
    }
    let successes: Vec<f64> = outcomes.iter().filter_map(|o| o.as_ref().ok().copied()).collect();
    let failed = b - successes.len();
    let (_, _, sd) = mean_sd(successes.iter().copied());
    Ok(BootstrapResult {
        estimator,
        point,
        standard_error: sd.unwrap_or(0.0),
        p_value: quantile_p_value(&successes, b),
        replicates: b,
        failed_replicates: failed,
        seed,
        valid: failed * 10 < b && !successes.is_empty(),
        failure_reasons,
        estimates: outcomes.into_iter().map(|o| o.ok()).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub estimator: EstimatorId,
    pub successes: usize,
    pub failures: usize,
    pub mean_estimate: Option<f64>,
    pub mean_bias: Option<f64>,
    pub rmse: Option<f64>,
    /// Standard error of the mean bias across replications.
    pub mc_standard_error: Option<f64>,
}

impl EstimatorSummary {
    /// `|mean bias|` in Monte Carlo standard errors; infinite for a nonzero
    /// bias with no spread, zero when both vanish.
    pub fn bias_in_se(&self) -> Option<f64> {
        let (bias, se) = (self.mean_bias?, self.mc_standard_error?);
        Some(if se > 0.0 {
            bias.abs() / se
        } else if bias == 0.0 {
            0.0
        } else {
            f64::INFINITY
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub index: usize,
    /// Estimate per estimator; `None` when it failed on this draw.
    pub estimates: BTreeMap<EstimatorId, Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub dgp: ParametricDgpConfig,
    pub truth: f64,
    pub reps: usize,
    pub estimators: Vec<EstimatorSummary>,
    pub replications: Vec<Replication>,
}

impl MonteCarloReport {
    pub fn summary(&self, id: EstimatorId) -> Option<&EstimatorSummary> {
        self.estimators.iter().find(|s| s.estimator == id)
    }

    /// Rebuild a report from per-replication estimates.
    pub fn from_replications(
        dgp: ParametricDgpConfig,
        estimator_ids: &[EstimatorId],
        replications: Vec<Replication>,
    ) -> Self {
        let truth = true_late(&dgp);
        let estimators = estimator_ids
            .iter()
            .map(|&id| {
                let values: Vec<f64> =
                    replications.iter().filter_map(|r| r.estimates.get(&id).copied().flatten()).collect();
                let errors = || values.iter().map(|v| v - truth);
                let (k, mean_est, sd) = mean_sd(values.iter().copied());
                EstimatorSummary {
                    estimator: id,
                    successes: k,
                    failures: replications.len() - k,
                    mean_estimate: mean_est,
                    mean_bias: mean(errors()),
                    rmse: mean(errors().map(|e| e * e)).map(f64::sqrt),
                    mc_standard_error: sd.map(|s| s / (k as f64).sqrt()),
                }
            })
            .collect();
        Self { truth, reps: replications.len(), dgp, estimators, replications }
    }
}

pub const MIN_MONTE_CARLO_REPS: usize = 10;

/// Simulate `reps` datasets of size `n` from `config` and apply each
/// estimator; bias is measured against [`true_late`].
pub fn monte_carlo(
    config: &ParametricDgpConfig,
    estimator_ids: &[EstimatorId],
    reps: usize,
    n: usize,
    seed: u64,
    options: &EstimatorOptions,
) -> Result<MonteCarloReport> {
    if reps < MIN_MONTE_CARLO_REPS {
        return Err(Error::InvalidConfig(format!("at least {MIN_MONTE_CARLO_REPS} replications required, got {reps}")));
    }
    let dgp = config.clone().with_n(n).with_seed(seed);
    dgp.validate()?;
    let replications = (0..reps)
        .into_par_iter()
        .map(|index| {
            let sim = simulate_stream(&dgp, index as u64 + 1)?;
            let estimates = estimator_ids
                .iter()
                .map(|&id| {
                    let est = match id {
                        EstimatorId::Oracle => late_oracle(&sim),
                        _ => estimate(&sim.dataset, id, options),
                    };
                    (id, est.ok().map(|e| e.point))
                })
                .collect();
            Ok(Replication { index, estimates })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MonteCarloReport::from_replications(dgp, estimator_ids, replications))
}
