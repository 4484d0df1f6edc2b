//! LATE estimators: Wald on respondents, MAR weighting, the LI+MAR mixture
//! decomposition, and the simulation-only oracle.
//!
//! ## LI+MAR decomposition
//!
//! Under latent ignorability given `X`, exclusion, monotonicity and a
//! response equation that does not depend on `Z` directly, the cell
//! `(Z=0, D=1)` contains only always-takers and `(Z=1, D=0)` only
//! never-takers. Their respondent means and response rates therefore carry
//! over to the always-takers inside `(Z=1, D=1)` and the never-takers inside
//! `(Z=0, D=0)`. With `pi_*` the type shares and `q_zd` the response
//! probabilities,
//!
//! ```text
//! A = (pi_a + pi_c) q_11     B = pi_a q_01     C = (pi_n + pi_c) q_00     E = pi_n q_10
//! m_c1 = (A mu_11 - B mu_01) / (A - B)          m_c0 = (C mu_00 - E mu_10) / (C - E)
//! LATE = sum_i pi_c(x_i) (m_c1(x_i) - m_c0(x_i)) / sum_i pi_c(x_i)
//! ```
//!
//! where `mu_zd(x)` is the respondent outcome mean in cell `(z, d)`. The
//! complier response rates implied along the way are `(A - B)/pi_c` and
//! `(C - E)/pi_c`. Aggregating with `pi_c(x)` weights targets the complier
//! population; weighting by complier-respondent shares instead would target
//! responding compliers.
//!
//! If the pure always-taker or never-taker cell has no respondents at all,
//! that type never responds and its term (`B` or `E`) is set to zero.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{ComplianceType, Dataset, Observation};
use crate::dgp::SimulatedDataset;
use crate::error::{Error, Result};
use crate::nuisance::{fit_all, NuisanceFits, NuisanceOptions};
use crate::stats::mean;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorId {
    Wald,
    Mar,
    LiMar,
    Oracle,
}

impl EstimatorId {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Wald => "wald",
            Self::Mar => "mar",
            Self::LiMar => "li_mar",
            Self::Oracle => "oracle",
        }
    }

    /// Column heading used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            Self::Wald => "Wald",
            Self::Mar => "MAR",
            Self::LiMar => "LI + MAR",
            Self::Oracle => "Oracle",
        }
    }
}

impl fmt::Display for EstimatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "wald" => Ok(Self::Wald),
            "mar" => Ok(Self::Mar),
            "li_mar" | "li+mar" | "limar" => Ok(Self::LiMar),
            "oracle" => Ok(Self::Oracle),
            other => Err(Error::UnknownSelector(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub estimator: EstimatorId,
    pub point: f64,
    pub diagnostics: BTreeMap<String, f64>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl EffectEstimate {
    fn new(estimator: EstimatorId, point: f64) -> Self {
        Self { estimator, point, diagnostics: BTreeMap::new(), warnings: Vec::new() }
    }

    fn diag(&mut self, key: &str, value: f64) {
        self.diagnostics.insert(key.to_string(), value);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Weighted sums divided by the sum of weights.
    #[default]
    Hajek,
    /// Weighted sums divided by the sample size.
    HorvitzThompson,
}

/// How respondent outcome means `mu_zd(x)` are estimated in the LI+MAR
/// decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeModel {
    /// Least-squares regression of `y` on `x` within each respondent cell.
    #[default]
    Linear,
    /// Raw respondent cell means, ignoring covariates.
    CellMeans,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorOptions {
    pub nuisance: NuisanceOptions,
    pub weighting: Weighting,
    pub outcome_model: OutcomeModel,
    /// Floor on the decomposition denominators `A - B` and `C - E`.
    pub denominator_floor: f64,
    /// Largest share of rows allowed at that floor before the LI+MAR
    /// estimate is declared degenerate.
    pub max_floored_share: f64,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        Self {
            nuisance: NuisanceOptions::default(),
            weighting: Weighting::Hajek,
            outcome_model: OutcomeModel::Linear,
            denominator_floor: 1e-3,
            max_floored_share: 0.10,
        }
    }
}

const DENOMINATOR_EPS: f64 = 1e-12;

/// Run an estimator end to end, fitting whatever nuisance models it needs.
pub fn estimate(dataset: &Dataset, id: EstimatorId, options: &EstimatorOptions) -> Result<EffectEstimate> {
    match id {
        EstimatorId::Wald => wald_respondents(dataset),
        EstimatorId::Mar => {
            let fits = fit_all(dataset, &options.nuisance, false)?;
            late_mar(dataset, &fits, options)
        }
        EstimatorId::LiMar => {
            let fits = fit_all(dataset, &options.nuisance, true)?;
            late_li_mar(dataset, &fits, options)
        }
        EstimatorId::Oracle => Err(Error::OracleOnly("oracle")),
    }
}

/// Wald ratio computed on respondents only, ignoring attrition.
pub fn wald_respondents(dataset: &Dataset) -> Result<EffectEstimate> {
    let resp = |z: bool| dataset.observations.iter().filter(move |o| o.r && o.z == z);
    let arm = |z: bool| -> Result<(f64, f64, usize)> {
        let n = resp(z).count();
        if n == 0 {
            return Err(Error::InvalidDataset(format!("no respondents with z={}", z as u8)));
        }
        let my = mean(resp(z).filter_map(|o| o.y)).unwrap();
        let md = mean(resp(z).map(|o| o.d as u8 as f64)).unwrap();
        Ok((my, md, n))
    };
    let (y1, d1, n1) = arm(true)?;
    let (y0, d0, n0) = arm(false)?;
    let first_stage = d1 - d0;
    if first_stage.abs() < DENOMINATOR_EPS {
        return Err(Error::NoComplianceSignal);
    }
    let mut est = EffectEstimate::new(EstimatorId::Wald, (y1 - y0) / first_stage);
    est.diag("n_respondents_z1", n1 as f64);
    est.diag("n_respondents_z0", n0 as f64);
    est.diag("first_stage", first_stage);
    est.diag("reduced_form", y1 - y0);
    Ok(est)
}

/// IPW LATE under `Y independent of R given (X, Z, D)`.
///
/// Outcome means per instrument arm weight respondents by
/// `1 / (p(x) q_zd(x))` (or `1 / ((1 - p(x)) q_zd(x))`); treatment means use
/// the instrument weight alone since `D` is always observed.
pub fn late_mar(dataset: &Dataset, fits: &NuisanceFits, options: &EstimatorOptions) -> Result<EffectEstimate> {
    // [arm] sums: weighted y, outcome weights, weighted d, treatment weights
    let mut sy = [0.0f64; 2];
    let mut wy = [0.0f64; 2];
    let mut sy2 = [0.0f64; 2];
    let mut sd = [0.0f64; 2];
    let mut wd = [0.0f64; 2];
    let (mut p_trimmed, mut q_trimmed, mut q_floor, mut n_resp) = (0usize, 0usize, 0usize, 0usize);
    let lo = fits.trim_bounds.0;

    for o in &dataset.observations {
        let p = fits.instrument_propensity(&o.x)?;
        p_trimmed += p.trimmed as usize;
        let arm = o.z as usize;
        let wz = if o.z { 1.0 / p.value } else { 1.0 / (1.0 - p.value) };
        sd[arm] += wz * o.d as u8 as f64;
        wd[arm] += wz;
        if let Some(y) = o.y {
            let q = fits.response(o.z, o.d, &o.x)?;
            n_resp += 1;
            q_trimmed += q.trimmed as usize;
            q_floor += (q.value <= lo) as usize;
            let w = wz / q.value;
            sy[arm] += w * y;
            wy[arm] += w;
            sy2[arm] += w * w;
        }
    }
    if wy[0] == 0.0 || wy[1] == 0.0 {
        return Err(Error::InvalidDataset("an instrument arm has no respondents".into()));
    }
    let n = dataset.len() as f64;
    let hajek_num = sy[1] / wy[1] - sy[0] / wy[0];
    let hajek_den = sd[1] / wd[1] - sd[0] / wd[0];
    let ht_num = (sy[1] - sy[0]) / n;
    let ht_den = (sd[1] - sd[0]) / n;
    let (num, den) = match options.weighting {
        Weighting::Hajek => (hajek_num, hajek_den),
        Weighting::HorvitzThompson => (ht_num, ht_den),
    };
    if den.abs() < DENOMINATOR_EPS {
        return Err(Error::ZeroDenominator("MAR first stage"));
    }
    let mut est = EffectEstimate::new(EstimatorId::Mar, num / den);
    est.diag("hajek_numerator", hajek_num);
    est.diag("hajek_denominator", hajek_den);
    est.diag("raw_numerator", ht_num);
    est.diag("raw_denominator", ht_den);
    if ht_den.abs() >= DENOMINATOR_EPS {
        est.diag("raw_point", ht_num / ht_den);
    }
    if hajek_den.abs() >= DENOMINATOR_EPS {
        est.diag("hajek_point", hajek_num / hajek_den);
    }
    est.diag("p_trimmed", p_trimmed as f64);
    est.diag("q_trimmed", q_trimmed as f64);
    est.diag("q_at_floor", q_floor as f64);
    for arm in 0..2 {
        est.diag(&format!("ess_respondents_z{arm}"), wy[arm] * wy[arm] / sy2[arm]);
    }
    if n_resp > 0 && q_floor as f64 > 0.5 * n_resp as f64 {
        est.warnings.push(format!(
            "response probability at the trim floor for {q_floor} of {n_resp} respondents"
        ));
    }
    if !est.point.is_finite() {
        return Err(Error::ZeroDenominator("MAR estimate"));
    }
    Ok(est)
}

/// Respondent outcome model for one `(z, d)` cell.
enum CellMean {
    Constant(f64),
    Linear(DVector<f64>),
}

impl CellMean {
    fn fit(rows: &[&Observation], model: OutcomeModel, k: usize) -> Self {
        let ys: Vec<f64> = rows.iter().filter_map(|o| o.y).collect();
        if model == OutcomeModel::CellMeans || k == 0 {
            return Self::Constant(mean(ys).unwrap());
        }
        let x = DMatrix::from_fn(rows.len(), k + 1, |i, j| if j == 0 { 1.0 } else { rows[i].x[j - 1] });
        let y = DVector::from_vec(ys);
        match x.svd(true, true).solve(&y, 1e-12) {
            Ok(b) => Self::Linear(b),
            Err(_) => Self::Constant(mean(y.iter().copied()).unwrap()),
        }
    }

    fn predict(&self, x: &[f64]) -> f64 {
        match self {
            Self::Constant(m) => *m,
            Self::Linear(b) => b[0] + b.iter().skip(1).zip(x).map(|(c, v)| c * v).sum::<f64>(),
        }
    }
}

/// LATE under latent ignorability combined with MAR given `X`; see the
/// module docs for the decomposition.
///
/// A negative first stage is handled by relabeling the instrument, so the
/// estimate is invariant to how `Z` is coded.
pub fn late_li_mar(dataset: &Dataset, fits: &NuisanceFits, options: &EstimatorOptions) -> Result<EffectEstimate> {
    let obs = &dataset.observations;
    let n_z = |z: bool| obs.iter().filter(|o| o.z == z).count() as f64;
    let d_z = |z: bool| obs.iter().filter(|o| o.z == z && o.d).count() as f64;
    let (n1, n0) = (n_z(true), n_z(false));
    if n1 == 0.0 || n0 == 0.0 {
        return Err(Error::InvalidDataset("degenerate instrument".into()));
    }
    // orient the instrument so that z' = 1 raises treatment take-up
    let flip = d_z(true) / n1 < d_z(false) / n0;
    let zz = |z: bool| z != flip;

    let k = dataset.n_covariates();
    let mut mu: [[Option<CellMean>; 2]; 2] = Default::default();
    for z in [false, true] {
        for d in [false, true] {
            if dataset.cell_count(z, d) == 0 {
                return Err(Error::EmptyCell { z: z as u8, d: d as u8 });
            }
            let rows: Vec<&Observation> = obs.iter().filter(|o| o.z == z && o.d == d && o.r).collect();
            if rows.is_empty() {
                // a pure always-/never-taker cell without respondents means
                // that type never responds, so it contributes nothing to
                // the mixed cell; the mixed cells themselves are required
                if zz(z) != d {
                    continue;
                }
                return Err(Error::InvalidDataset(format!("no respondents in cell ({},{})", z as u8, d as u8)));
            }
            mu[zz(z) as usize][d as usize] = Some(CellMean::fit(&rows, options.outcome_model, k));
        }
    }
    let (always_respond, never_respond) = (mu[0][1].is_some(), mu[1][0].is_some());
    let mu = |z: usize, d: usize, x: &[f64]| mu[z][d].as_ref().map_or(0.0, |m| m.predict(x));

    let floor = options.denominator_floor;
    let (mut num, mut den) = (0.0, 0.0);
    let (mut floored_t, mut floored_c, mut pi_c_floored) = (0usize, 0usize, 0usize);
    let (mut clipped_rc1, mut clipped_rc0) = (0usize, 0usize);
    let (mut sum_rc1, mut sum_rc0) = (0.0, 0.0);
    let mut identity_residual = 0.0f64;
    for o in obs {
        let x = &o.x;
        // shares in the oriented coding: always-takers take treatment at z'=0
        let t0 = fits.trim(if flip { fits.p_d_given_z1.predict(x)? } else { fits.p_d_given_z0.predict(x)? }).value;
        let t1 = fits.trim(if flip { fits.p_d_given_z0.predict(x)? } else { fits.p_d_given_z1.predict(x)? }).value;
        let (pa, pn) = (t0, 1.0 - t1);
        let raw_c = 1.0 - pa - pn;
        let pc = raw_c.max(fits.pi_c_floor);
        pi_c_floored += (raw_c < fits.pi_c_floor) as usize;
        let q = |z: bool, d: bool| fits.response(zz(z), d, x).map(|t| t.value);
        let (q11, q01, q00, q10) = (q(true, true)?, q(false, true)?, q(false, false)?, q(true, false)?);

        let a = (pa + pc) * q11;
        let b = if always_respond { pa * q01 } else { 0.0 };
        let c = (pn + pc) * q00;
        let e = if never_respond { pn * q10 } else { 0.0 };
        let rc1 = (a - b) / pc;
        let rc0 = (c - e) / pc;
        let residual = ((b + pc * rc1) / (pa + pc) - q11).abs();
        identity_residual = identity_residual.max(residual);
        debug_assert!(residual < 1e-12);

        for (r, clipped, sum) in [(rc1, &mut clipped_rc1, &mut sum_rc1), (rc0, &mut clipped_rc0, &mut sum_rc0)] {
            let rr = r.clamp(f64::MIN_POSITIVE, 1.0);
            *clipped += (rr != r) as usize;
            *sum += rr;
        }

        let treated_den = if a - b < floor {
            floored_t += 1;
            floor
        } else {
            a - b
        };
        let control_den = if c - e < floor {
            floored_c += 1;
            floor
        } else {
            c - e
        };
        // (A mu11 - B mu01) / (A - B), written so a floored denominator
        // keeps the estimate location-equivariant
        let m1 = mu(1, 1, x) + b * (mu(1, 1, x) - mu(0, 1, x)) / treated_den;
        let m0 = mu(0, 0, x) + e * (mu(0, 0, x) - mu(1, 0, x)) / control_den;
        num += pc * (m1 - m0);
        den += pc;
    }
    let n = obs.len() as f64;
    for (which, count) in [("A - B", floored_t), ("C - E", floored_c)] {
        let share = count as f64 / n;
        if share > options.max_floored_share {
            return Err(Error::DegenerateDecomposition { which, share });
        }
    }
    let mut est = EffectEstimate::new(EstimatorId::LiMar, num / den);
    est.diag("instrument_flipped", flip as u8 as f64);
    est.diag("floored_treated_denominator", floored_t as f64);
    est.diag("floored_control_denominator", floored_c as f64);
    est.diag("pi_c_floored", pi_c_floored as f64);
    est.diag("mean_pi_c", den / n);
    est.diag("clipped_complier_response_treated", clipped_rc1 as f64);
    est.diag("clipped_complier_response_control", clipped_rc0 as f64);
    est.diag("mean_complier_response_treated", sum_rc1 / n);
    est.diag("mean_complier_response_control", sum_rc0 / n);
    est.diag("max_cell_identity_residual", identity_residual);
    if floored_t + floored_c > 0 {
        est.warnings.push(format!(
            "decomposition denominators floored on {} row(s)",
            floored_t + floored_c
        ));
    }
    for (present, who) in [(always_respond, "always-takers"), (never_respond, "never-takers")] {
        if !present {
            est.warnings.push(format!("no responding {who}; their share of the mixed cell is taken as zero"));
        }
    }
    if !est.point.is_finite() {
        return Err(Error::ZeroDenominator("LI+MAR estimate"));
    }
    Ok(est)
}

/// Average structural effect `y(1) - y(0)` over simulated compliers,
/// nonrespondents included.
pub fn late_oracle(simulated: &SimulatedDataset) -> Result<EffectEstimate> {
    let effects: Vec<f64> = simulated
        .dataset
        .observations
        .iter()
        .zip(&simulated.latent)
        .filter(|(o, _)| o.t == Some(ComplianceType::Complier))
        .map(|(_, l)| l.effect)
        .collect();
    let point = mean(effects.iter().copied()).ok_or(Error::NoType(ComplianceType::Complier))?;
    let mut est = EffectEstimate::new(EstimatorId::Oracle, point);
    est.diag("n_compliers", effects.len() as f64);
    Ok(est)
}
