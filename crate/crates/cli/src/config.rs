//! Command-line flags, the `key = value` config file, and the resolved
//! [`RunConfig`] that every command runs from.
//!
//! A config file is spliced into the argument list ahead of the real flags,
//! so anything given on the command line wins.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, ValueEnum};
use ivattrit::dgp::MomentFunction;
use ivattrit::estimators::{OutcomeModel, Weighting};
use ivattrit::nuisance::NuisanceOptions;
use ivattrit::{CovariateEffect, ErrorStructure, EstimatorId, EstimatorOptions, ParametricDgpConfig};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Draw a dataset from the parametric model and write it as CSV.
    Simulate,
    /// Point estimates, bootstrap standard errors and p-values for a CSV file.
    Estimate,
    /// Bias, RMSE and Monte Carlo standard errors against the true LATE.
    Montecarlo,
    /// Respondent/nonrespondent outcome gaps within compliance types.
    Diagnose,
    /// Covariate means by response status.
    Describe,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::Estimate => "estimate",
            Self::Montecarlo => "montecarlo",
            Self::Diagnose => "diagnose",
            Self::Describe => "describe",
        }
    }
}

/// Preset parameter sets for the simulation commands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scenario {
    /// `U = V = W`: complier respondents and nonrespondents never overlap.
    A,
    /// Correlated errors with response driven by `V`.
    B,
    /// Complier-shifted outcome error independent of response.
    C,
    /// Response noise independent of the outcome error.
    Mar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Errors {
    Identical,
    Correlated,
    ComplierShift,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutcomeModelArg {
    Linear,
    CellMeans,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WeightingArg {
    Hajek,
    HorvitzThompson,
}

#[derive(Debug, Parser)]
#[command(name = "ivattrit", version, about = "LATE estimation under outcome attrition", args_override_self = true)]
pub struct Cli {
    pub command: Command,

    /// `key = value` file with defaults for any long flag.
    #[arg(long)]
    pub config: Option<PathBuf>,

    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    pub output_dir: PathBuf,

    #[arg(long, default_value = "y")]
    pub y_col: String,
    #[arg(long, default_value = "d")]
    pub d_col: String,
    #[arg(long, default_value = "z")]
    pub z_col: String,
    /// Response indicator column; without it, response is read off the
    /// outcome (`r` is used when the file has such a column).
    #[arg(long)]
    pub r_col: Option<String>,
    /// Comma-separated covariate columns.
    #[arg(long, default_value = "")]
    pub x_cols: String,

    /// Comma-separated estimators (li_mar, mar, wald, oracle).
    #[arg(long)]
    pub estimators: Option<String>,
    #[arg(long, default_value_t = ivattrit::inference::DEFAULT_BOOTSTRAP_REPLICATES)]
    pub bootstrap_b: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.01)]
    pub trim_low: f64,
    #[arg(long, default_value_t = 0.99)]
    pub trim_high: f64,
    #[arg(long, default_value_t = 0.01)]
    pub pi_c_floor: f64,
    #[arg(long, value_enum, default_value = "linear")]
    pub outcome_model: OutcomeModelArg,
    #[arg(long, value_enum, default_value = "hajek")]
    pub weighting: WeightingArg,
    /// Write (simulate) or read (estimate, describe) the compliance type and
    /// latent error columns.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", default_value_t = false)]
    pub oracle_columns: bool,

    #[arg(long, value_enum)]
    pub scenario: Option<Scenario>,
    #[arg(long)]
    pub alpha0: Option<f64>,
    #[arg(long)]
    pub alpha1: Option<f64>,
    #[arg(long)]
    pub beta0: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub gamma0: Option<f64>,
    #[arg(long)]
    pub gamma1: Option<f64>,
    #[arg(long)]
    pub pz: Option<f64>,
    #[arg(long, value_enum)]
    pub errors: Option<Errors>,
    #[arg(long)]
    pub delta1: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub sigma_eps: Option<f64>,
    #[arg(long)]
    pub pi: Option<f64>,
    #[arg(long)]
    pub sigma_u: Option<f64>,
    #[arg(long)]
    pub rho_vw: Option<f64>,
    /// Comma-separated `name:outcome:treatment:response` loadings.
    #[arg(long)]
    pub covariates: Option<String>,
    /// Rows per simulated dataset.
    #[arg(long)]
    pub n: Option<usize>,

    /// Monte Carlo replications.
    #[arg(long, default_value_t = 200)]
    pub reps: usize,
    /// Draws used by `diagnose`.
    #[arg(long, default_value_t = 100_000)]
    pub n_mc: usize,
    /// Comma-separated moment functions for `diagnose`.
    #[arg(long, default_value = "identity,square,indicator(-1),indicator(0),indicator(1)")]
    pub moments: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColumnMapping {
    pub y: String,
    pub d: String,
    pub z: String,
    pub r: Option<String>,
    pub x: Vec<String>,
    /// Compliance-type column, read only when oracle columns are requested.
    pub t: Option<String>,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        Self { y: "y".into(), d: "d".into(), z: "z".into(), r: None, x: Vec::new(), t: None }
    }
}

/// Everything a command needs, with defaults and the config file resolved.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: Command,
    pub input: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub columns: ColumnMapping,
    pub estimators: Vec<EstimatorId>,
    pub bootstrap_b: usize,
    pub seed: u64,
    pub options: EstimatorOptions,
    pub oracle_columns: bool,
    pub dgp: ParametricDgpConfig,
    pub reps: usize,
    pub n_mc: usize,
    pub moments: Vec<MomentFunction>,
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<T>().map_err(|e| anyhow::anyhow!("invalid {what} '{p}': {e}")))
        .collect()
}

fn parse_covariates(s: &str) -> Result<Vec<CovariateEffect>> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            let parts: Vec<&str> = p.split(':').collect();
            let [name, o, t, r] = parts[..] else {
                bail!("covariate '{p}' is not name:outcome:treatment:response");
            };
            let num = |v: &str| v.trim().parse::<f64>().with_context(|| format!("covariate '{p}'"));
            Ok(CovariateEffect { name: name.trim().to_string(), outcome: num(o)?, treatment: num(t)?, response: num(r)? })
        })
        .collect()
}

fn scenario_dgp(scenario: Option<Scenario>) -> ParametricDgpConfig {
    let base = ParametricDgpConfig { beta0: 0.0, beta1: 1.0, gamma0: 0.2, gamma1: 0.3, ..Default::default() };
    let error_structure = match scenario {
        None => return ParametricDgpConfig::default(),
        Some(Scenario::A) => ErrorStructure::Identical,
        Some(Scenario::B) => ErrorStructure::Correlated { delta1: 1.0, rho: 0.8, sigma_eps: 0.1 },
        Some(Scenario::C) => ErrorStructure::ComplierShift { pi: 0.4, sigma_u: 1.0, rho_vw: 0.0 },
        Some(Scenario::Mar) => ErrorStructure::Correlated { delta1: 0.0, rho: 0.5, sigma_eps: 1.0 },
    };
    ParametricDgpConfig { error_structure, ..base }
}

impl Cli {
    fn dgp(&self) -> Result<ParametricDgpConfig> {
        let mut cfg = scenario_dgp(self.scenario);
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut cfg.alpha0, self.alpha0);
        set(&mut cfg.alpha1, self.alpha1);
        set(&mut cfg.beta0, self.beta0);
        set(&mut cfg.beta1, self.beta1);
        set(&mut cfg.gamma0, self.gamma0);
        set(&mut cfg.gamma1, self.gamma1);
        set(&mut cfg.pz, self.pz);
        if let Some(kind) = self.errors {
            let same = matches!(
                (kind, cfg.error_structure),
                (Errors::Identical, ErrorStructure::Identical)
                    | (Errors::Correlated, ErrorStructure::Correlated { .. })
                    | (Errors::ComplierShift, ErrorStructure::ComplierShift { .. })
            );
            if !same {
                cfg.error_structure = match kind {
                    Errors::Identical => ErrorStructure::Identical,
                    Errors::Correlated => ErrorStructure::Correlated { delta1: 1.0, rho: 0.8, sigma_eps: 0.1 },
                    Errors::ComplierShift => ErrorStructure::ComplierShift { pi: 0.4, sigma_u: 1.0, rho_vw: 0.0 },
                };
            }
        }
        match &mut cfg.error_structure {
            ErrorStructure::Identical => {
                if self.delta1.or(self.rho).or(self.sigma_eps).or(self.pi).or(self.sigma_u).or(self.rho_vw).is_some() {
                    bail!("error parameters given but the error structure is identical");
                }
            }
            ErrorStructure::Correlated { delta1, rho, sigma_eps } => {
                if self.pi.or(self.sigma_u).or(self.rho_vw).is_some() {
                    bail!("--pi, --sigma-u and --rho-vw apply to complier_shift errors only");
                }
                set(delta1, self.delta1);
                set(rho, self.rho);
                set(sigma_eps, self.sigma_eps);
            }
            ErrorStructure::ComplierShift { pi, sigma_u, rho_vw } => {
                if self.delta1.or(self.rho).or(self.sigma_eps).is_some() {
                    bail!("--delta1, --rho and --sigma-eps apply to correlated errors only");
                }
                set(pi, self.pi);
                set(sigma_u, self.sigma_u);
                set(rho_vw, self.rho_vw);
            }
        }
        if let Some(c) = &self.covariates {
            cfg.covariates = parse_covariates(c)?;
        }
        if let Some(n) = self.n {
            cfg.n = n;
        }
        cfg.seed = self.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve(self) -> Result<RunConfig> {
        let default_estimators = match self.command {
            Command::Montecarlo => "li_mar,mar,wald,oracle",
            _ => "li_mar,mar,wald",
        };
        let estimators: Vec<EstimatorId> =
            parse_list(self.estimators.as_deref().unwrap_or(default_estimators), "estimator")?;
        if estimators.is_empty() {
            bail!("no estimators selected");
        }
        let options = EstimatorOptions {
            nuisance: NuisanceOptions {
                trim_low: self.trim_low,
                trim_high: self.trim_high,
                pi_c_floor: self.pi_c_floor,
                ..Default::default()
            },
            weighting: match self.weighting {
                WeightingArg::Hajek => Weighting::Hajek,
                WeightingArg::HorvitzThompson => Weighting::HorvitzThompson,
            },
            outcome_model: match self.outcome_model {
                OutcomeModelArg::Linear => OutcomeModel::Linear,
                OutcomeModelArg::CellMeans => OutcomeModel::CellMeans,
            },
            ..Default::default()
        };
        options.nuisance.validate()?;
        let needs_input = matches!(self.command, Command::Estimate | Command::Describe);
        if needs_input && self.input.is_none() {
            bail!("{} needs --input", self.command.as_str());
        }
        if !needs_input && self.input.is_some() {
            bail!("{} does not read --input", self.command.as_str());
        }
        let columns = ColumnMapping {
            x: parse_list(&self.x_cols, "covariate column")?,
            t: self.oracle_columns.then(|| "t".to_string()),
            y: self.y_col.clone(),
            d: self.d_col.clone(),
            z: self.z_col.clone(),
            r: self.r_col.clone(),
        };
        Ok(RunConfig {
            command: self.command,
            dgp: self.dgp()?,
            input: self.input,
            output_dir: self.output_dir,
            columns,
            estimators,
            bootstrap_b: self.bootstrap_b,
            seed: self.seed,
            options,
            oracle_columns: self.oracle_columns,
            reps: self.reps,
            n_mc: self.n_mc,
            moments: parse_list(&self.moments, "moment function")?,
        })
    }
}

/// Turn `key = value` lines into `--key=value` arguments. `#` starts a
/// comment; blank lines are ignored.
pub fn config_file_args(text: &str) -> Result<Vec<OsString>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("config line {}: expected key = value", i + 1);
        };
        let key = key.trim().replace('_', "-");
        if key == "config" || key == "command" {
            bail!("config line {}: '{key}' cannot be set from a config file", i + 1);
        }
        out.push(format!("--{key}={}", value.trim()).into());
    }
    Ok(out)
}

/// Parse process arguments, splicing in a config file when one is named.
pub fn parse_args<I, T>(args: I) -> Result<RunConfig, ArgsError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = Cli::try_parse_from(&args).map_err(ArgsError::Usage)?;
    let Some(path) = &cli.config else {
        return cli.resolve().map_err(ArgsError::Invalid);
    };
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading config file {}", path.display()))
        .map_err(ArgsError::Invalid)?;
    let extra = config_file_args(&text).map_err(ArgsError::Invalid)?;
    // program name and command first, then the file, then the real flags
    let command_pos = args.iter().skip(1).position(|a| Command::from_str(&a.to_string_lossy(), false).is_ok());
    let split = command_pos.map_or(1, |p| p + 2);
    let spliced: Vec<OsString> =
        args[..split].iter().cloned().chain(extra).chain(args[split..].iter().cloned()).collect();
    Cli::try_parse_from(spliced).map_err(ArgsError::Usage)?.resolve().map_err(ArgsError::Invalid)
}

#[derive(Debug)]
pub enum ArgsError {
    /// Malformed command line; clap renders its own message.
    Usage(clap::Error),
    /// Well-formed but inconsistent configuration.
    Invalid(anyhow::Error),
}
