//! Observations with missing outcomes, compliance types, validation and
//! descriptive statistics.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::mean_sd;

/// Principal stratum defined by how treatment responds to the instrument.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComplianceType {
    Complier,
    AlwaysTaker,
    NeverTaker,
    Defier,
}

impl ComplianceType {
    pub const ALL: [ComplianceType; 4] =
        [Self::Complier, Self::AlwaysTaker, Self::NeverTaker, Self::Defier];

    /// Types from potential treatments `(d(0), d(1))`.
    pub fn from_potential_treatments(d0: bool, d1: bool) -> Self {
        match (d0, d1) {
            (false, true) => Self::Complier,
            (true, true) => Self::AlwaysTaker,
            (false, false) => Self::NeverTaker,
            (true, false) => Self::Defier,
        }
    }

    /// Treatment status implied by the type under instrument value `z`.
    pub fn treatment(self, z: bool) -> bool {
        match self {
            Self::Complier => z,
            Self::AlwaysTaker => true,
            Self::NeverTaker => false,
            Self::Defier => !z,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Complier => "complier",
            Self::AlwaysTaker => "always_taker",
            Self::NeverTaker => "never_taker",
            Self::Defier => "defier",
        }
    }
}

impl fmt::Display for ComplianceType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ComplianceType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::UnknownSelector(s.to_string()))
    }
}

/// Classify a latent first-stage draw `v` under `D = 1(beta0 + Z*beta1 >= V)`.
///
/// `v == beta0` is an always-taker and `v == beta0 + beta1` a complier.
pub fn classify_compliance(v: f64, beta0: f64, beta1: f64) -> Result<ComplianceType> {
    if !(beta1 > 0.0) {
        return Err(Error::FirstStageSign(beta1));
    }
    Ok(if v <= beta0 {
        ComplianceType::AlwaysTaker
    } else if v <= beta0 + beta1 {
        ComplianceType::Complier
    } else {
        ComplianceType::NeverTaker
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Outcome; `None` exactly when the unit did not respond.
    pub y: Option<f64>,
    pub d: bool,
    pub z: bool,
    pub r: bool,
    pub x: Vec<f64>,
    /// Compliance type, known only for simulated data.
    pub t: Option<ComplianceType>,
}

impl Observation {
    pub fn new(y: Option<f64>, d: bool, z: bool, x: Vec<f64>) -> Self {
        Self { r: y.is_some(), y, d, z, x, t: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub observations: Vec<Observation>,
    pub covariate_names: Vec<String>,
}

impl Dataset {
    pub fn new(observations: Vec<Observation>, covariate_names: Vec<String>) -> Self {
        Self { observations, covariate_names }
    }

    /// Build and reject anything [`validate`] complains about.
    pub fn try_new(observations: Vec<Observation>, covariate_names: Vec<String>) -> Result<Self> {
        let ds = Self::new(observations, covariate_names);
        let violations = validate(&ds);
        if let Some(first) = violations.first() {
            return Err(Error::InvalidDataset(format!(
                "{first} ({} violation(s) in total)",
                violations.len()
            )));
        }
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    /// Rows drawn by index, e.g. for a bootstrap resample.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            observations: idx.iter().map(|&i| self.observations[i].clone()).collect(),
            covariate_names: self.covariate_names.clone(),
        }
    }

    /// Count of rows in instrument/treatment cell `(z, d)`.
    pub fn cell_count(&self, z: bool, d: bool) -> usize {
        self.observations.iter().filter(|o| o.z == z && o.d == d).count()
    }

    /// Drop the compliance-type labels, leaving only what an analyst observes.
    pub fn without_types(mut self) -> Self {
        for o in &mut self.observations {
            o.t = None;
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    OutcomeWithoutResponse,
    MissingOutcomeForRespondent,
    NonFiniteValue,
    CovariateDimension,
    TypeTreatmentMismatch,
    DegenerateInstrument,
    EmptyDataset,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    /// Offending row (0-based); `None` for dataset-level violations.
    pub row: Option<usize>,
    pub kind: ViolationKind,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.row {
            Some(r) => write!(f, "row {r}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

/// Check every observation- and dataset-level invariant; an empty list means
/// the dataset is well formed.
pub fn validate(dataset: &Dataset) -> Vec<Violation> {
    let mut out = Vec::new();
    let k = dataset.covariate_names.len();
    let mut push = |row, kind, message: String| out.push(Violation { row, kind, message });

    if dataset.is_empty() {
        push(None, ViolationKind::EmptyDataset, "dataset has no observations".into());
    }
    for (i, o) in dataset.observations.iter().enumerate() {
        match (o.r, o.y) {
            (false, Some(_)) => push(
                Some(i),
                ViolationKind::OutcomeWithoutResponse,
                "outcome present although r=0".into(),
            ),
            (true, None) => push(
                Some(i),
                ViolationKind::MissingOutcomeForRespondent,
                "outcome absent although r=1".into(),
            ),
            (true, Some(y)) if !y.is_finite() => {
                push(Some(i), ViolationKind::NonFiniteValue, format!("outcome {y} is not finite"))
            }
            _ => {}
        }
        if o.x.len() != k {
            push(
                Some(i),
                ViolationKind::CovariateDimension,
                format!("{} covariates, expected {k}", o.x.len()),
            );
        } else if let Some(j) = o.x.iter().position(|v| !v.is_finite()) {
            push(
                Some(i),
                ViolationKind::NonFiniteValue,
                format!("covariate `{}` is not finite", dataset.covariate_names[j]),
            );
        }
        if let Some(t) = o.t {
            if t.treatment(o.z) != o.d {
                push(
                    Some(i),
                    ViolationKind::TypeTreatmentMismatch,
                    format!("type {t} with z={} implies d={}", o.z as u8, t.treatment(o.z) as u8),
                );
            }
        }
    }
    let n_z1 = dataset.observations.iter().filter(|o| o.z).count();
    if !dataset.is_empty() && (n_z1 == 0 || n_z1 == dataset.len()) {
        push(
            None,
            ViolationKind::DegenerateInstrument,
            format!("degenerate instrument: all z={}", (n_z1 > 0) as u8),
        );
    }
    out
}

/// Mean and unbiased standard deviation for one variable in one stratum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Moments {
    pub mean: f64,
    /// Absent with a single observation.
    pub sd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DescribeRow {
    pub variable: String,
    pub total: Option<Moments>,
    pub respondents: Option<Moments>,
    pub nonrespondents: Option<Moments>,
}

/// Descriptive table: overall, respondents (r=1) and nonrespondents (r=0).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Description {
    pub n_total: usize,
    pub n_respondents: usize,
    pub n_nonrespondents: usize,
    pub rows: Vec<DescribeRow>,
}

fn moments(values: impl IntoIterator<Item = f64>) -> Option<Moments> {
    let (_, mean, sd) = mean_sd(values);
    mean.map(|mean| Moments { mean, sd })
}

/// Per-variable moments for every covariate plus the treatment and the
/// instrument. Empty strata are reported as absent.
pub fn describe(dataset: &Dataset) -> Description {
    let obs = &dataset.observations;
    let column = |j: usize, o: &Observation| -> f64 {
        let k = dataset.covariate_names.len();
        if j < k {
            o.x[j]
        } else if j == k {
            o.d as u8 as f64
        } else {
            o.z as u8 as f64
        }
    };
    let names = dataset
        .covariate_names
        .iter()
        .cloned()
        .chain(["d".to_string(), "z".to_string()]);
    let rows = names
        .enumerate()
        .map(|(j, variable)| DescribeRow {
            variable,
            total: moments(obs.iter().map(|o| column(j, o))),
            respondents: moments(obs.iter().filter(|o| o.r).map(|o| column(j, o))),
            nonrespondents: moments(obs.iter().filter(|o| !o.r).map(|o| column(j, o))),
        })
        .collect();
    let n_respondents = obs.iter().filter(|o| o.r).count();
    Description {
        n_total: obs.len(),
        n_respondents,
        n_nonrespondents: obs.len() - n_respondents,
        rows,
    }
}
