//! Structural simulators for IV designs with nonresponse and the latent
//! ignorability (LI) gap diagnostic.
//!
//! The parametric model is
//!
//! ```text
//! Y = a0 + D*a1 + U,   D = 1(b0 + Z*b1 >= V),   R = 1(g0 + D*g1 >= W)
//! ```
//!
//! with the joint law of `(U, V, W)` chosen by [`ErrorStructure`]. Optional
//! standard-normal covariates shift each index linearly. The nonparametric
//! form `Y = phi(D, U)`, `D = 1(psi(Z, V) >= 0)`, `R = 1(eta(D, W) >= 0)` is
//! driven by the same engine with forms picked from a fixed catalogue, so an
//! Eq.-(1)-shaped nonparametric spec reproduces [`simulate`] row for row.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{classify_compliance, ComplianceType, Dataset, Observation};
use crate::error::{Error, Result};
use crate::rng::{substream, StreamRng};
use crate::stats::mean_sd;

/// Joint law of the unobservables `(U, V, W)`. All laws are normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ErrorStructure {
    /// `U = V = W`, standard normal.
    Identical,
    /// `(U, V)` standard bivariate normal with correlation `rho`,
    /// `W = delta1*V + eps`, `eps ~ N(0, sigma_eps^2)` independent.
    Correlated { delta1: f64, rho: f64, sigma_eps: f64 },
    /// `U = pi*1(complier) + eps_u`, `eps_u ~ N(0, sigma_u^2)` independent of
    /// `(V, W)`. `V`, `W` standard normal with correlation `rho_vw` (0 unless
    /// set), which keeps LI intact while breaking MAR.
    ComplierShift {
        pi: f64,
        sigma_u: f64,
        #[serde(default)]
        rho_vw: f64,
    },
}

impl ErrorStructure {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        match *self {
            Self::Identical => Ok(()),
            Self::Correlated { delta1, rho, sigma_eps } => {
                if !(rho.abs() < 1.0) {
                    return bad(format!("|rho| must be < 1, got {rho}"));
                }
                if !(sigma_eps >= 0.0) || !delta1.is_finite() || !sigma_eps.is_finite() {
                    return bad(format!("sigma_eps must be finite and >= 0, got {sigma_eps}"));
                }
                Ok(())
            }
            Self::ComplierShift { pi, sigma_u, rho_vw } => {
                if !(sigma_u > 0.0) || !sigma_u.is_finite() || !pi.is_finite() {
                    return bad(format!("sigma_u must be finite and > 0, got {sigma_u}"));
                }
                if !(rho_vw.abs() < 1.0) {
                    return bad(format!("|rho_vw| must be < 1, got {rho_vw}"));
                }
                Ok(())
            }
        }
    }
}

/// A standard-normal covariate and its loadings on the three indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateEffect {
    pub name: String,
    #[serde(default)]
    pub outcome: f64,
    #[serde(default)]
    pub treatment: f64,
    #[serde(default)]
    pub response: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParametricDgpConfig {
    pub alpha0: f64,
    pub alpha1: f64,
    pub beta0: f64,
    pub beta1: f64,
    pub gamma0: f64,
    pub gamma1: f64,
    /// `Pr(Z = 1)`.
    pub pz: f64,
    pub error_structure: ErrorStructure,
    pub n: usize,
    pub seed: u64,
    #[serde(default)]
    pub covariates: Vec<CovariateEffect>,
}

impl Default for ParametricDgpConfig {
    fn default() -> Self {
        Self {
            alpha0: 0.0,
            alpha1: 1.0,
            beta0: 0.0,
            beta1: 1.0,
            gamma0: 0.0,
            gamma1: 0.5,
            pz: 0.5,
            error_structure: ErrorStructure::Identical,
            n: 1000,
            seed: 0,
            covariates: Vec::new(),
        }
    }
}

impl ParametricDgpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta1 > 0.0) {
            return Err(Error::FirstStageSign(self.beta1));
        }
        if !(self.pz > 0.0 && self.pz < 1.0) {
            return Err(Error::InvalidConfig(format!("pz must lie in (0,1), got {}", self.pz)));
        }
        if self.n == 0 {
            return Err(Error::InvalidConfig("n must be at least 1".into()));
        }
        let coefs = [self.alpha0, self.alpha1, self.beta0, self.beta1, self.gamma0, self.gamma1];
        if coefs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidConfig("coefficients must be finite".into()));
        }
        self.error_structure.validate()
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn forms(&self) -> NonparametricSpec {
        NonparametricSpec {
            outcome: OutcomeForm::Linear { alpha0: self.alpha0, alpha1: self.alpha1 },
            treatment: TreatmentForm::Threshold { beta0: self.beta0, beta1: self.beta1 },
            response: ResponseForm::Threshold { gamma0: self.gamma0, gamma1: self.gamma1 },
            errors: self.error_structure,
            pz: self.pz,
            n: self.n,
            seed: self.seed,
        }
    }
}

/// Outcome equation `phi(d, u)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutcomeForm {
    /// `a0 + d*a1 + u`
    Linear { alpha0: f64, alpha1: f64 },
    /// `a0 + d*(a1 + a_u*u) + u`: effect heterogeneous in `u`.
    Interacted { alpha0: f64, alpha1: f64, alpha_u: f64 },
}

impl OutcomeForm {
    fn eval(&self, d: bool, u: f64, shift: f64) -> f64 {
        let d = d as u8 as f64;
        match *self {
            Self::Linear { alpha0, alpha1 } => alpha0 + shift + d * alpha1 + u,
            Self::Interacted { alpha0, alpha1, alpha_u } => alpha0 + shift + d * (alpha1 + alpha_u * u) + u,
        }
    }

    /// `phi(1, u) - phi(0, u)`, computed directly so a constant effect is exact.
    fn effect(&self, u: f64) -> f64 {
        match *self {
            Self::Linear { alpha1, .. } => alpha1,
            Self::Interacted { alpha1, alpha_u, .. } => alpha1 + alpha_u * u,
        }
    }
}

/// Treatment index `psi(z, v)`; `D = 1(psi >= 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreatmentForm {
    /// `b0 + z*b1 - v`
    Threshold { beta0: f64, beta1: f64 },
}

impl TreatmentForm {
    fn beta1(&self) -> f64 {
        match *self {
            Self::Threshold { beta1, .. } => beta1,
        }
    }

    fn treated(&self, z: bool, v: f64, shift: f64) -> bool {
        match *self {
            Self::Threshold { beta0, beta1 } => beta0 + shift + (z as u8 as f64) * beta1 >= v,
        }
    }

    fn compliance(&self, v: f64, shift: f64) -> Result<ComplianceType> {
        match *self {
            Self::Threshold { beta0, beta1 } => classify_compliance(v, beta0 + shift, beta1),
        }
    }
}

/// Response index `eta(d, w)`; `R = 1(eta >= 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResponseForm {
    /// `g0 + d*g1 - w`
    Threshold { gamma0: f64, gamma1: f64 },
    /// `g0 + d*g1 - w^2`: response selects on `|w|`.
    Quadratic { gamma0: f64, gamma1: f64 },
    /// Sign fixed at `+1` (everyone responds) or `-1`.
    Constant { sign: f64 },
}

impl ResponseForm {
    fn responds(&self, d: bool, w: f64, shift: f64) -> bool {
        let d = d as u8 as f64;
        match *self {
            Self::Threshold { gamma0, gamma1 } => gamma0 + shift + d * gamma1 >= w,
            Self::Quadratic { gamma0, gamma1 } => gamma0 + shift + d * gamma1 - w * w >= 0.0,
            Self::Constant { sign } => sign >= 0.0,
        }
    }
}

fn parse_selector(s: &str) -> Result<(String, Vec<(String, f64)>)> {
    let s = s.trim();
    let (name, rest) = match s.find('(') {
        Some(i) if s.ends_with(')') => (&s[..i], &s[i + 1..s.len() - 1]),
        Some(_) => return Err(Error::UnknownSelector(s.to_string())),
        None => (s, ""),
    };
    let mut args = Vec::new();
    for part in rest.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = part.split_once('=').ok_or_else(|| Error::UnknownSelector(s.to_string()))?;
        let v: f64 = v.trim().parse().map_err(|_| Error::UnknownSelector(s.to_string()))?;
        args.push((k.trim().to_string(), v));
    }
    Ok((name.trim().to_string(), args))
}

fn take_args<const N: usize>(sel: &str, args: &[(String, f64)], keys: [&str; N]) -> Result<[f64; N]> {
    let mut out = [0.0; N];
    for (k, v) in args {
        let pos = keys.iter().position(|key| key == k).ok_or_else(|| Error::UnknownSelector(sel.to_string()))?;
        out[pos] = *v;
    }
    Ok(out)
}

impl FromStr for OutcomeForm {
    type Err = Error;

    /// `linear(alpha0=..,alpha1=..)` or `interacted(alpha0=..,alpha1=..,alpha_u=..)`;
    /// omitted arguments are zero.
    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = parse_selector(s)?;
        match name.as_str() {
            "linear" => {
                let [alpha0, alpha1] = take_args(s, &args, ["alpha0", "alpha1"])?;
                Ok(Self::Linear { alpha0, alpha1 })
            }
            "interacted" => {
                let [alpha0, alpha1, alpha_u] = take_args(s, &args, ["alpha0", "alpha1", "alpha_u"])?;
                Ok(Self::Interacted { alpha0, alpha1, alpha_u })
            }
            _ => Err(Error::UnknownSelector(s.to_string())),
        }
    }
}

impl FromStr for TreatmentForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = parse_selector(s)?;
        match name.as_str() {
            "threshold" => {
                let [beta0, beta1] = take_args(s, &args, ["beta0", "beta1"])?;
                Ok(Self::Threshold { beta0, beta1 })
            }
            _ => Err(Error::UnknownSelector(s.to_string())),
        }
    }
}

impl FromStr for ResponseForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = parse_selector(s)?;
        match name.as_str() {
            "threshold" => {
                let [gamma0, gamma1] = take_args(s, &args, ["gamma0", "gamma1"])?;
                Ok(Self::Threshold { gamma0, gamma1 })
            }
            "quadratic" => {
                let [gamma0, gamma1] = take_args(s, &args, ["gamma0", "gamma1"])?;
                Ok(Self::Quadratic { gamma0, gamma1 })
            }
            "constant" => {
                let [sign] = take_args(s, &args, ["sign"])?;
                Ok(Self::Constant { sign })
            }
            _ => Err(Error::UnknownSelector(s.to_string())),
        }
    }
}

/// Nonparametric system: forms from the catalogue plus an error law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonparametricSpec {
    pub outcome: OutcomeForm,
    pub treatment: TreatmentForm,
    pub response: ResponseForm,
    pub errors: ErrorStructure,
    pub pz: f64,
    pub n: usize,
    pub seed: u64,
}

impl NonparametricSpec {
    pub fn validate(&self) -> Result<()> {
        let b1 = self.treatment.beta1();
        if !(b1 > 0.0) {
            return Err(Error::FirstStageSign(b1));
        }
        if !(self.pz > 0.0 && self.pz < 1.0) {
            return Err(Error::InvalidConfig(format!("pz must lie in (0,1), got {}", self.pz)));
        }
        if self.n == 0 {
            return Err(Error::InvalidConfig("n must be at least 1".into()));
        }
        self.errors.validate()
    }
}

/// Latent draws and potential outcomes behind one simulated row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentDraw {
    pub u: f64,
    pub v: f64,
    pub w: f64,
    pub y0: f64,
    pub y1: f64,
    /// `y1 - y0` as given by the outcome form.
    pub effect: f64,
}

impl LatentDraw {
    /// Outcome under the realised treatment, observed or not.
    pub fn outcome(&self, d: bool) -> f64 {
        if d {
            self.y1
        } else {
            self.y0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedDataset {
    /// Observed data, with `t` populated on every row.
    pub dataset: Dataset,
    pub latent: Vec<LatentDraw>,
}

impl SimulatedDataset {
    pub fn len(&self) -> usize {
        self.latent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latent.is_empty()
    }
}

struct Engine<'a> {
    forms: &'a NonparametricSpec,
    covariates: &'a [CovariateEffect],
}

impl Engine<'_> {
    fn run(&self, rng: &mut StreamRng) -> Result<SimulatedDataset> {
        let spec = self.forms;
        let k = self.covariates.len();
        let mut observations = Vec::with_capacity(spec.n);
        let mut latent = Vec::with_capacity(spec.n);
        for _ in 0..spec.n {
            let x: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
            let (mut y_shift, mut d_shift, mut r_shift) = (0.0, 0.0, 0.0);
            for (xj, c) in x.iter().zip(self.covariates) {
                y_shift += xj * c.outcome;
                d_shift += xj * c.treatment;
                r_shift += xj * c.response;
            }
            let z = rng.gen::<f64>() < spec.pz;

            let (u, v, w, t) = match spec.errors {
                ErrorStructure::Identical => {
                    let e: f64 = rng.sample(StandardNormal);
                    (e, e, e, spec.treatment.compliance(e, d_shift)?)
                }
                ErrorStructure::Correlated { delta1, rho, sigma_eps } => {
                    let v: f64 = rng.sample(StandardNormal);
                    let e1: f64 = rng.sample(StandardNormal);
                    let eps: f64 = rng.sample(StandardNormal);
                    let u = rho * v + (1.0 - rho * rho).sqrt() * e1;
                    (u, v, delta1 * v + sigma_eps * eps, spec.treatment.compliance(v, d_shift)?)
                }
                ErrorStructure::ComplierShift { pi, sigma_u, rho_vw } => {
                    let v: f64 = rng.sample(StandardNormal);
                    let e2: f64 = rng.sample(StandardNormal);
                    let eu: f64 = rng.sample(StandardNormal);
                    let w = rho_vw * v + (1.0 - rho_vw * rho_vw).sqrt() * e2;
                    let t = spec.treatment.compliance(v, d_shift)?;
                    let shift = if t == ComplianceType::Complier { pi } else { 0.0 };
                    (shift + sigma_u * eu, v, w, t)
                }
            };

            let d = spec.treatment.treated(z, v, d_shift);
            debug_assert_eq!(d, t.treatment(z));
            let y0 = spec.outcome.eval(false, u, y_shift);
            let y1 = spec.outcome.eval(true, u, y_shift);
            let r = spec.response.responds(d, w, r_shift);
            let draw = LatentDraw { u, v, w, y0, y1, effect: spec.outcome.effect(u) };
            observations.push(Observation { y: r.then(|| draw.outcome(d)), d, z, r, x, t: Some(t) });
            latent.push(draw);
        }
        let names = self.covariates.iter().map(|c| c.name.clone()).collect();
        Ok(SimulatedDataset { dataset: Dataset::new(observations, names), latent })
    }
}

/// Draw `config.n` rows from the parametric model. Deterministic in
/// `config.seed`.
pub fn simulate(config: &ParametricDgpConfig) -> Result<SimulatedDataset> {
    simulate_stream(config, 0)
}

/// As [`simulate`], on an explicit substream of `config.seed`; Monte Carlo
/// replication `r` uses stream `r + 1`.
pub fn simulate_stream(config: &ParametricDgpConfig, stream: u64) -> Result<SimulatedDataset> {
    config.validate()?;
    let forms = config.forms();
    Engine { forms: &forms, covariates: &config.covariates }.run(&mut substream(config.seed, stream))
}

/// Draw rows from a nonparametric system of catalogue forms.
pub fn simulate_nonparametric(spec: &NonparametricSpec) -> Result<SimulatedDataset> {
    spec.validate()?;
    Engine { forms: spec, covariates: &[] }.run(&mut substream(spec.seed, 0))
}

/// Complier average treatment effect of the parametric model: the outcome
/// equation is additive, so every unit's effect is `alpha1`.
pub fn true_late(config: &ParametricDgpConfig) -> f64 {
    config.alpha1
}

/// A function `f` whose conditional means are compared across response states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MomentFunction {
    Identity,
    Square,
    /// `1(y <= threshold)`
    Indicator { threshold: f64 },
}

impl MomentFunction {
    /// The fixed set of functions checked by default: the first two moments
    /// and indicators `1(y <= c)` at a few points of the distribution.
    pub const CATALOGUE: [MomentFunction; 5] = [
        Self::Identity,
        Self::Square,
        Self::Indicator { threshold: -1.0 },
        Self::Indicator { threshold: 0.0 },
        Self::Indicator { threshold: 1.0 },
    ];

    pub fn apply(&self, y: f64) -> f64 {
        match *self {
            Self::Identity => y,
            Self::Square => y * y,
            Self::Indicator { threshold } => (y <= threshold) as u8 as f64,
        }
    }
}

impl fmt::Display for MomentFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Identity => f.write_str("identity"),
            Self::Square => f.write_str("square"),
            Self::Indicator { threshold } => write!(f, "indicator({threshold})"),
        }
    }
}

impl FromStr for MomentFunction {
    type Err = Error;

    /// `identity`, `square`, or `indicator(c)`.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        match t {
            "identity" => Ok(Self::Identity),
            "square" => Ok(Self::Square),
            _ => t
                .strip_prefix("indicator(")
                .and_then(|r| r.strip_suffix(')'))
                .and_then(|c| c.trim().parse().ok())
                .map(|threshold| Self::Indicator { threshold })
                .ok_or_else(|| Error::UnknownSelector(s.to_string())),
        }
    }
}

/// One `(z, t, f)` comparison of respondents against nonrespondents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiGapCell {
    pub z: u8,
    pub t: ComplianceType,
    pub moment: MomentFunction,
    pub n_respondents: usize,
    pub n_nonrespondents: usize,
    pub respondent_mean: Option<f64>,
    pub nonrespondent_mean: Option<f64>,
    /// Respondent minus nonrespondent mean; absent when either side is empty.
    pub gap: Option<f64>,
    /// Monte Carlo standard error of the gap.
    pub se: Option<f64>,
    pub max_respondent_u: Option<f64>,
    pub min_nonrespondent_u: Option<f64>,
    /// Set when one response side of the cell is empty.
    pub flagged: bool,
}

impl LiGapCell {
    /// Latent `u` supports of the two response states do not overlap.
    pub fn supports_disjoint(&self) -> Option<bool> {
        Some(self.max_respondent_u? <= self.min_nonrespondent_u?)
    }

    /// `|gap| / se`, infinite for a nonzero gap with zero standard error.
    pub fn z_score(&self) -> Option<f64> {
        let (gap, se) = (self.gap?, self.se?);
        Some(if se > 0.0 {
            gap.abs() / se
        } else if gap == 0.0 {
            0.0
        } else {
            f64::INFINITY
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiGapReport {
    pub moment_functions: Vec<MomentFunction>,
    pub n_mc: usize,
    pub seed: u64,
    pub cells: Vec<LiGapCell>,
}

impl LiGapReport {
    pub fn cell(&self, z: u8, t: ComplianceType, moment: MomentFunction) -> Option<&LiGapCell> {
        self.cells.iter().find(|c| c.z == z && c.t == t && c.moment == moment)
    }

    /// Largest `|gap|/se` over all cells with both sides present.
    pub fn max_z_score(&self) -> f64 {
        self.cells.iter().filter_map(LiGapCell::z_score).fold(0.0, f64::max)
    }
}

pub const MIN_LI_GAP_DRAWS: usize = 10_000;

/// Compare `E[f(Y) | Z=z, T=t, R=1]` with `E[f(Y) | Z=z, T=t, R=0]` on
/// `n_mc` fresh draws from `config`, using latent outcomes for nonrespondents.
pub fn li_gap(
    config: &ParametricDgpConfig,
    moment_functions: &[MomentFunction],
    n_mc: usize,
    seed: u64,
) -> Result<LiGapReport> {
    if n_mc < MIN_LI_GAP_DRAWS {
        return Err(Error::InvalidConfig(format!("n_mc must be at least {MIN_LI_GAP_DRAWS}, got {n_mc}")));
    }
    let sim = simulate(&config.clone().with_n(n_mc).with_seed(seed))?;
    Ok(li_gap_from_sample(&sim, moment_functions, seed))
}

/// The gap table for an already simulated sample (any model).
pub fn li_gap_from_sample(sim: &SimulatedDataset, moment_functions: &[MomentFunction], seed: u64) -> LiGapReport {
    let types = [ComplianceType::Complier, ComplianceType::AlwaysTaker, ComplianceType::NeverTaker];
    let mut cells = Vec::new();
    for z in [1u8, 0] {
        for t in types {
            let rows: Vec<(bool, &LatentDraw, bool)> = sim
                .dataset
                .observations
                .iter()
                .zip(&sim.latent)
                .filter(|(o, _)| o.z == (z == 1) && o.t == Some(t))
                .map(|(o, l)| (o.r, l, o.d))
                .collect();
            let side = |resp: bool| rows.iter().filter(move |(r, _, _)| *r == resp);
            let max_resp_u = side(true).map(|(_, l, _)| l.u).reduce(f64::max);
            let min_non_u = side(false).map(|(_, l, _)| l.u).reduce(f64::min);
            for &moment in moment_functions {
                let values = |resp: bool| side(resp).map(|(_, l, d)| moment.apply(l.outcome(*d)));
                let (n1, m1, s1) = mean_sd(values(true));
                let (n0, m0, s0) = mean_sd(values(false));
                let gap = m1.zip(m0).map(|(a, b)| a - b);
                let se = s1.zip(s0).map(|(a, b)| (a * a / n1 as f64 + b * b / n0 as f64).sqrt());
                cells.push(LiGapCell {
                    z,
                    t,
                    moment,
                    n_respondents: n1,
                    n_nonrespondents: n0,
                    respondent_mean: m1,
                    nonrespondent_mean: m0,
                    gap,
                    se,
                    max_respondent_u: max_resp_u,
                    min_nonrespondent_u: min_non_u,
                    flagged: n1 == 0 || n0 == 0,
                });
            }
        }
    }
    LiGapReport { moment_functions: moment_functions.to_vec(), n_mc: sim.len(), seed, cells }
}
