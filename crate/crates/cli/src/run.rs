use std::collections::BTreeMap;
use std::fs;

use anyhow::{bail, Context, Result};
use ivattrit::dgp::li_gap;
use ivattrit::inference::{bootstrap, monte_carlo};
use ivattrit::{describe, estimate, simulate, true_late, EstimatorId};
use serde::Serialize;

use crate::config::{Command, RunConfig};
use crate::io::{load_csv, write_atomic, write_simulated, LoadError};
use crate::report::{self, ErrorReport, EstimateReport, EstimateRow, SimulateReport};

/// What a successful run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    /// Text report echoed to stdout.
    pub summary: String,
    /// Files written to the output directory, manifest last.
    pub files: Vec<String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: Command,
    config: &'a RunConfig,
    input_rows: Option<usize>,
    outputs: &'a [String],
}

struct Outputs<'a> {
    config: &'a RunConfig,
    files: Vec<String>,
}

impl Outputs<'_> {
    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.config.output_dir.join(name), bytes)?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.put(name, text.as_bytes())
    }
}

/// Run one command, writing its artifacts and a manifest to the output
/// directory.
pub fn run(config: &RunConfig) -> Result<RunOutput> {
    fs::create_dir_all(&config.output_dir)
        .with_context(|| format!("creating output directory {}", config.output_dir.display()))?;
    let mut out = Outputs { config, files: Vec::new() };
    let mut input_rows = None;
    let summary = match config.command {
        Command::Simulate => {
            let sim = simulate(&config.dgp)?;
            out.put("data.csv", &write_simulated(&sim, config.oracle_columns)?)?;
            let mut type_counts = BTreeMap::new();
            for o in &sim.dataset.observations {
                if let Some(t) = o.t {
                    *type_counts.entry(t.to_string()).or_insert(0) += 1;
                }
            }
            let rep = SimulateReport {
                dgp: config.dgp.clone(),
                true_late: true_late(&config.dgp),
                n: sim.len(),
                n_respondents: sim.dataset.observations.iter().filter(|o| o.r).count(),
                type_counts,
                data_file: "data.csv".into(),
            };
            out.json("simulate.json", &rep)?;
            format!(
                "simulated {} rows ({} respondents) into data.csv; true LATE {}\n",
                rep.n, rep.n_respondents, rep.true_late
            )
        }
        Command::Estimate => {
            let input = config.input.as_ref().context("estimate needs --input")?;
            let ds = load_csv(input, &config.columns)?;
            input_rows = Some(ds.len());
            if config.estimators.contains(&EstimatorId::Oracle) {
                bail!(ivattrit::Error::OracleOnly("oracle"));
            }
            let mut estimates = Vec::new();
            for &id in &config.estimators {
                let point = estimate(&ds, id, &config.options)?;
                let boot = bootstrap(&ds, id, config.bootstrap_b, config.seed, &config.options)?;
                estimates.push(EstimateRow {
                    estimator: id,
                    label: id.label().to_string(),
                    effect: point.point,
                    standard_error: boot.standard_error,
                    p_value: boot.p_value,
                    replicates: boot.replicates,
                    failed_replicates: boot.failed_replicates,
                    valid: boot.valid,
                    failure_reasons: boot.failure_reasons,
                    diagnostics: point.diagnostics,
                    warnings: point.warnings,
                });
            }
            let rep = EstimateReport {
                n: ds.len(),
                n_respondents: ds.observations.iter().filter(|o| o.r).count(),
                covariates: ds.covariate_names.clone(),
                bootstrap_replicates: config.bootstrap_b,
                seed: config.seed,
                estimates,
            };
            out.json("estimates.json", &rep)?;
            let table = report::estimate_table(&rep);
            out.put("estimates.txt", table.as_bytes())?;
            table
        }
        Command::Montecarlo => {
            let rep = monte_carlo(&config.dgp, &config.estimators, config.reps, config.dgp.n, config.seed, &config.options)?;
            out.json("montecarlo.json", &rep)?;
            out.put("replications.csv", &report::replications_csv(&rep)?)?;
            let table = report::montecarlo_table(&rep);
            out.put("montecarlo.txt", table.as_bytes())?;
            table
        }
        Command::Diagnose => {
            let rep = li_gap(&config.dgp, &config.moments, config.n_mc, config.seed)?;
            out.json("li_gap.json", &rep)?;
            let table = report::li_gap_table(&rep);
            out.put("li_gap.txt", table.as_bytes())?;
            table
        }
        Command::Describe => {
            let input = config.input.as_ref().context("describe needs --input")?;
            let ds = load_csv(input, &config.columns)?;
            input_rows = Some(ds.len());
            let desc = describe(&ds);
            out.json("describe.json", &desc)?;
            let table = report::describe_table(&desc);
            out.put("describe.txt", table.as_bytes())?;
            table
        }
    };
    let mut files = out.files.clone();
    files.push("manifest.json".into());
    let manifest = Manifest {
        tool: "ivattrit",
        version: env!("CARGO_PKG_VERSION"),
        command: config.command,
        config,
        input_rows,
        outputs: &files,
    };
    out.json("manifest.json", &manifest)?;
    Ok(RunOutput { summary, files: out.files })
}

/// Machine-readable form of a failed run.
pub fn error_report(err: &anyhow::Error) -> ErrorReport {
    let kind = if let Some(e) = err.downcast_ref::<ivattrit::Error>() {
        e.kind()
    } else if let Some(e) = err.downcast_ref::<LoadError>() {
        e.kind()
    } else if err.downcast_ref::<std::io::Error>().is_some() {
        "io"
    } else {
        "invalid_config"
    };
    ErrorReport { kind: kind.to_string(), message: format!("{err:#}") }
}

/// Write `error.json` next to where the results would have gone.
pub fn write_error(config: &RunConfig, report: &ErrorReport) -> Result<()> {
    fs::create_dir_all(&config.output_dir)?;
    let mut text = serde_json::to_string_pretty(&serde_json::json!({ "error": report }))?;
    text.push('\n');
    write_atomic(&config.output_dir.join("error.json"), text.as_bytes())
}
