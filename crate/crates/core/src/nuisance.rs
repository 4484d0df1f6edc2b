//! Conditional-probability models used by the weighting estimators:
//! instrument propensity `p(x) = Pr(Z=1|X)`, treatment shares
//! `Pr(D=1|Z=z,X)` and response probabilities `q_zd(x) = Pr(R=1|Z=z,D=d,X)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

pub const INTERCEPT: &str = "(intercept)";

/// Relative slack on the per-step likelihood comparison: a step that reduces
/// the score may lose at most this much, the summation error of the mean
/// log-likelihood.
pub const LL_ROUNDING: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticOptions {
    pub max_iter: usize,
    /// Convergence threshold on the largest score component of the
    /// per-observation (mean) penalized log-likelihood.
    pub tol: f64,
    /// Ridge penalty `ridge/2 * |beta|^2` on the mean log-likelihood,
    /// intercept included.
    pub ridge: f64,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        Self { max_iter: 100, tol: 1e-10, ridge: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    /// Intercept first.
    pub coefficients: Vec<f64>,
    pub feature_names: Vec<String>,
    pub converged: bool,
    pub iterations: usize,
    pub ridge: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
    /// Penalized mean log-likelihood after each accepted step (index 0 is the
    /// starting point).
    #[serde(skip)]
    pub log_likelihood_trace: Vec<f64>,
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

fn with_intercept(features: &DMatrix<f64>) -> DMatrix<f64> {
    let n = features.nrows();
    let mut x = DMatrix::from_element(n, features.ncols() + 1, 1.0);
    x.view_mut((0, 1), (n, features.ncols())).copy_from(features);
    x
}

/// Penalized mean Bernoulli log-likelihood for design `x` (intercept column
/// included).
pub fn penalized_log_likelihood(x: &DMatrix<f64>, labels: &[bool], beta: &DVector<f64>, ridge: f64) -> f64 {
    let eta = x * beta;
    let ll: f64 = eta
        .iter()
        .zip(labels)
        .map(|(&e, &y)| if y { -softplus(-e) } else { -softplus(e) })
        .sum();
    ll / labels.len() as f64 - 0.5 * ridge * beta.norm_squared()
}

/// Gradient of [`penalized_log_likelihood`].
pub fn score(x: &DMatrix<f64>, labels: &[bool], beta: &DVector<f64>, ridge: f64) -> DVector<f64> {
    let eta = x * beta;
    let resid = DVector::from_iterator(
        labels.len(),
        eta.iter().zip(labels).map(|(&e, &y)| y as u8 as f64 - sigmoid(e)),
    );
    x.tr_mul(&resid) / labels.len() as f64 - beta * ridge
}

/// Columns (by name) that are linearly dependent on earlier ones, via
/// modified Gram-Schmidt.
fn collinear_columns(x: &DMatrix<f64>, names: &[String]) -> Vec<String> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut out = Vec::new();
    for j in 0..x.ncols() {
        let col = x.column(j).into_owned();
        let scale = col.norm();
        let mut v = col;
        for b in &basis {
            let proj = b.dot(&v);
            v -= b * proj;
        }
        let norm = v.norm();
        if scale == 0.0 || norm <= 1e-9 * scale {
            out.push(names[j].clone());
        } else {
            basis.push(v / norm);
        }
    }
    out
}

/// Fit `Pr(label = 1 | features)` by iteratively reweighted least squares
/// (Newton steps with step halving, so the penalized log-likelihood never
/// decreases).
///
/// `features` holds one row per observation and no intercept column.
pub fn fit_logistic(
    features: &DMatrix<f64>,
    labels: &[bool],
    feature_names: &[String],
    options: &LogisticOptions,
) -> Result<LogisticModel> {
    let n = labels.len();
    if n == 0 {
        return Err(Error::InvalidDataset("cannot fit a model on zero rows".into()));
    }
    if features.nrows() != n {
        return Err(Error::DimensionMismatch { expected: n, got: features.nrows() });
    }
    if features.ncols() != feature_names.len() {
        return Err(Error::DimensionMismatch { expected: feature_names.len(), got: features.ncols() });
    }
    let ridge = options.ridge;
    let positives = labels.iter().filter(|&&y| y).count();
    if ridge <= 0.0 && (positives == 0 || positives == n) {
        return Err(Error::SingleClass);
    }
    let x = with_intercept(features);
    let names: Vec<String> = std::iter::once(INTERCEPT.to_string()).chain(feature_names.iter().cloned()).collect();
    if ridge <= 0.0 {
        let bad = collinear_columns(&x, &names);
        if !bad.is_empty() {
            return Err(Error::RankDeficient(bad));
        }
    }

    let p = x.ncols();
    let newton_step = |beta: &DVector<f64>, g: &DVector<f64>| -> DVector<f64> {
        let eta = &x * beta;
        let mut info = DMatrix::<f64>::identity(p, p) * ridge;
        for (i, &e) in eta.iter().enumerate() {
            let pi = sigmoid(e);
            let w = pi * (1.0 - pi) / n as f64;
            let row = x.row(i);
            for a in 0..p {
                let ra = row[a] * w;
                for b in 0..=a {
                    info[(a, b)] += ra * row[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                info[(b, a)] = info[(a, b)];
            }
        }
        match info.cholesky() {
            Some(ch) => ch.solve(g),
            // fitted probabilities saturated; fall back to a gradient step
            None => g.clone(),
        }
    };

    let mut beta = DVector::zeros(p);
    let mut ll = penalized_log_likelihood(&x, labels, &beta, ridge);
    let mut trace = vec![ll];
    let mut iterations = 0;
    let mut stalled = false;
    while iterations < options.max_iter {
        let g = score(&x, labels, &beta, ridge);
        let close = g.amax() < options.tol;
        let step = newton_step(&beta, &g);
        let mut t = 1.0;
        let accepted = loop {
            let cand = &beta + &step * t;
            let cand_ll = penalized_log_likelihood(&x, labels, &cand, ridge);
            if cand_ll >= ll && cand_ll.is_finite() {
                break Some((cand, cand_ll));
            }
            // near the optimum the likelihood gain drops below rounding
            // resolution; the score still tells whether the step helped
            if cand_ll >= ll - LL_ROUNDING * ll.abs() && score(&x, labels, &cand, ridge).amax() < g.amax() {
                break Some((cand, cand_ll));
            }
            // within tolerance only a full polishing step is worth taking
            t *= 0.5;
            if close || t < 1e-12 {
                break None;
            }
        };
        match accepted {
            Some((b, l)) => {
                iterations += 1;
                beta = b;
                ll = l;
                trace.push(ll);
            }
            None if close => break,
            None => {
                iterations += 1;
                stalled = true;
                break;
            }
        }
        if close {
            break;
        }
    }

    let g = score(&x, labels, &beta, ridge);
    let mut converged = g.amax() < options.tol;
    let mut diagnostic = None;
    if stalled && !converged {
        diagnostic = Some(format!("line search stalled with max |score| {:.3e}", g.amax()));
    } else if !converged {
        diagnostic = Some(format!("no convergence in {} iterations (max |score| {:.3e})", iterations, g.amax()));
    }
    if ridge <= 0.0 {
        let eta = &x * &beta;
        let separated = eta.iter().zip(labels).all(|(&e, &y)| if y { e > 0.0 } else { e < 0.0 });
        if separated || beta.amax() > 25.0 {
            converged = false;
            diagnostic = Some("perfect or quasi-complete separation: coefficients diverge without a ridge penalty".into());
        }
    }
    Ok(LogisticModel {
        coefficients: beta.iter().copied().collect(),
        feature_names: feature_names.to_vec(),
        converged,
        iterations,
        ridge,
        diagnostic,
        log_likelihood_trace: trace,
    })
}

impl LogisticModel {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn linear_index(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features() {
            return Err(Error::DimensionMismatch { expected: self.n_features(), got: x.len() });
        }
        Ok(self.coefficients[0] + self.coefficients[1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>())
    }

    /// Fitted probability, kept strictly inside (0, 1).
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.linear_index(x)?).clamp(f64::EPSILON, 1.0 - f64::EPSILON))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NuisanceOptions {
    pub logistic: LogisticOptions,
    pub trim_low: f64,
    pub trim_high: f64,
    /// Floor on the complier share `pi_c(x)`.
    pub pi_c_floor: f64,
    /// Ridge used when an unpenalized fit fails (single class, collinear
    /// design or separation).
    pub fallback_ridge: f64,
}

impl Default for NuisanceOptions {
    fn default() -> Self {
        Self {
            logistic: LogisticOptions::default(),
            trim_low: 0.01,
            trim_high: 0.99,
            pi_c_floor: 0.01,
            fallback_ridge: 1e-4,
        }
    }
}

impl NuisanceOptions {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.trim_low && self.trim_low < self.trim_high && self.trim_high < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "trim bounds must satisfy 0 < low < high < 1, got ({}, {})",
                self.trim_low, self.trim_high
            )));
        }
        if !(self.pi_c_floor > 0.0 && self.pi_c_floor < 1.0) {
            return Err(Error::InvalidConfig(format!("pi_c floor must lie in (0,1), got {}", self.pi_c_floor)));
        }
        Ok(())
    }
}

/// Stratum shares at one covariate value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TypeShares {
    pub always: f64,
    pub never: f64,
    pub complier: f64,
    /// `pi_c` was raised to the floor.
    pub floored: bool,
}

/// A probability after trimming, plus whether trimming bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trimmed {
    pub value: f64,
    pub trimmed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceFits {
    pub p_z: LogisticModel,
    pub p_d_given_z0: LogisticModel,
    pub p_d_given_z1: LogisticModel,
    /// `q[z][d]`, absent for an empty cell that was not required.
    pub q: [[Option<LogisticModel>; 2]; 2],
    pub trim_bounds: (f64, f64),
    pub pi_c_floor: f64,
}

impl NuisanceFits {
    pub fn trim(&self, p: f64) -> Trimmed {
        let (lo, hi) = self.trim_bounds;
        let value = p.clamp(lo, hi);
        Trimmed { value, trimmed: value != p }
    }

    pub fn instrument_propensity(&self, x: &[f64]) -> Result<Trimmed> {
        Ok(self.trim(self.p_z.predict(x)?))
    }

    /// `pi_a = Pr(D=1|Z=0,X)`, `pi_n = 1 - Pr(D=1|Z=1,X)`,
    /// `pi_c = 1 - pi_a - pi_n` floored at `pi_c_floor`.
    pub fn type_shares(&self, x: &[f64]) -> Result<TypeShares> {
        let always = self.trim(self.p_d_given_z0.predict(x)?).value;
        let never = 1.0 - self.trim(self.p_d_given_z1.predict(x)?).value;
        let raw = 1.0 - always - never;
        let floored = raw < self.pi_c_floor;
        Ok(TypeShares { always, never, complier: raw.max(self.pi_c_floor), floored })
    }

    pub fn response(&self, z: bool, d: bool, x: &[f64]) -> Result<Trimmed> {
        let model = self.q[z as usize][d as usize]
            .as_ref()
            .ok_or(Error::EmptyCell { z: z as u8, d: d as u8 })?;
        Ok(self.trim(model.predict(x)?))
    }

    pub fn models(&self) -> impl Iterator<Item = (String, &LogisticModel)> {
        let base = [("p_z", &self.p_z), ("p_d_given_z0", &self.p_d_given_z0), ("p_d_given_z1", &self.p_d_given_z1)]
            .into_iter()
            .map(|(k, m)| (k.to_string(), m));
        let q = (0..2).flat_map(move |z| {
            (0..2).filter_map(move |d| self.q[z][d].as_ref().map(|m| (format!("q_{z}{d}"), m)))
        });
        base.chain(q)
    }
}

/// Covariate matrix for the rows selected by `keep`.
pub fn design(dataset: &Dataset, keep: impl Fn(&crate::data::Observation) -> bool) -> DMatrix<f64> {
    let k = dataset.n_covariates();
    let rows: Vec<&[f64]> = dataset.observations.iter().filter(|o| keep(o)).map(|o| o.x.as_slice()).collect();
    DMatrix::from_fn(rows.len(), k, |i, j| rows[i][j])
}

fn fit_with_fallback(
    features: &DMatrix<f64>,
    labels: &[bool],
    names: &[String],
    options: &NuisanceOptions,
) -> Result<LogisticModel> {
    let first = fit_logistic(features, labels, names, &options.logistic);
    let reason = match &first {
        Ok(m) if m.converged || options.logistic.ridge > 0.0 => return first,
        Ok(m) => m.diagnostic.clone().unwrap_or_else(|| "not converged".into()),
        Err(Error::SingleClass) | Err(Error::RankDeficient(_)) if options.logistic.ridge <= 0.0 => {
            first.as_ref().unwrap_err().to_string()
        }
        Err(_) => return first,
    };
    let penalized = LogisticOptions { ridge: options.fallback_ridge, ..options.logistic };
    let mut model = fit_logistic(features, labels, names, &penalized)?;
    model.diagnostic = Some(format!("ridge fallback ({}) after: {reason}", options.fallback_ridge));
    Ok(model)
}

/// Fit all seven component models on their own subsamples.
///
/// With `require_all_cells`, every `(z, d)` cell must be non-empty; otherwise
/// empty cells simply get no response model.
pub fn fit_all(dataset: &Dataset, options: &NuisanceOptions, require_all_cells: bool) -> Result<NuisanceFits> {
    options.validate()?;
    let names = &dataset.covariate_names;
    let obs = &dataset.observations;
    let labels = |keep: &dyn Fn(&crate::data::Observation) -> bool, pick: fn(&crate::data::Observation) -> bool| {
        obs.iter().filter(|o| keep(o)).map(pick).collect::<Vec<bool>>()
    };

    let all = |_: &crate::data::Observation| true;
    let p_z = fit_with_fallback(&design(dataset, all), &labels(&all, |o| o.z), names, options)?;

    let mut p_d = Vec::with_capacity(2);
    for z in [false, true] {
        let keep = move |o: &crate::data::Observation| o.z == z;
        let lab = labels(&keep, |o| o.d);
        if lab.is_empty() {
            return Err(Error::InvalidDataset(format!("degenerate instrument: no rows with z={}", z as u8)));
        }
        p_d.push(fit_with_fallback(&design(dataset, keep), &lab, names, options)?);
    }

    let mut q: [[Option<LogisticModel>; 2]; 2] = Default::default();
    for z in [false, true] {
        for d in [false, true] {
            let keep = move |o: &crate::data::Observation| o.z == z && o.d == d;
            let lab = labels(&keep, |o| o.r);
            if lab.is_empty() {
                if require_all_cells {
                    return Err(Error::EmptyCell { z: z as u8, d: d as u8 });
                }
                continue;
            }
            q[z as usize][d as usize] = Some(fit_with_fallback(&design(dataset, keep), &lab, names, options)?);
        }
    }
    let p_d_given_z1 = p_d.pop().unwrap();
    let p_d_given_z0 = p_d.pop().unwrap();
    Ok(NuisanceFits {
        p_z,
        p_d_given_z0,
        p_d_given_z1,
        q,
        trim_bounds: (options.trim_low, options.trim_high),
        pi_c_floor: options.pi_c_floor,
    })
}
