//! Report payloads written as JSON, and their aligned text renderings.

use std::collections::BTreeMap;
use std::fmt::Write;

use ivattrit::data::Description;
use ivattrit::dgp::LiGapReport;
use ivattrit::{EstimatorId, MonteCarloReport, ParametricDgpConfig};
use serde::Serialize;

/// One estimator column of the effect table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateRow {
    pub estimator: EstimatorId,
    pub label: String,
    pub effect: f64,
    pub standard_error: f64,
    pub p_value: f64,
    pub replicates: usize,
    pub failed_replicates: usize,
    /// False when a tenth or more of the bootstrap replicates failed.
    pub valid: bool,
    pub failure_reasons: BTreeMap<String, usize>,
    pub diagnostics: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateReport {
    pub n: usize,
    pub n_respondents: usize,
    pub covariates: Vec<String>,
    pub bootstrap_replicates: usize,
    pub seed: u64,
    pub estimates: Vec<EstimateRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulateReport {
    pub dgp: ParametricDgpConfig,
    pub true_late: f64,
    pub n: usize,
    pub n_respondents: usize,
    pub type_counts: BTreeMap<String, usize>,
    pub data_file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorReport {
    pub kind: String,
    pub message: String,
}

/// Right-align every column after the first.
fn render(rows: &[Vec<String>]) -> String {
    let ncol = rows.iter().map(Vec::len).max().unwrap_or(0);
    let width: Vec<usize> =
        (0..ncol).map(|j| rows.iter().filter_map(|r| r.get(j)).map(|c| c.chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for row in rows {
        let mut line = String::new();
        for (j, cell) in row.iter().enumerate() {
            if j == 0 {
                let _ = write!(line, "{cell:<w$}", w = width[0]);
            } else {
                let _ = write!(line, "  {cell:>w$}", w = width[j]);
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

fn fixed(v: f64, digits: usize) -> String {
    format!("{v:.digits$}")
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |v| fixed(v, digits))
}

/// Effect, standard error and p-value per estimator, one column each.
pub fn estimate_table(report: &EstimateReport) -> String {
    let mut rows = vec![std::iter::once(String::new())
        .chain(report.estimates.iter().map(|e| format!("{}{}", e.label, if e.valid { "" } else { "*" })))
        .collect::<Vec<_>>()];
    for (name, get) in [
        ("Effect", (|e: &EstimateRow| e.effect) as fn(&EstimateRow) -> f64),
        ("Standard error", |e| e.standard_error),
        ("p-value", |e| e.p_value),
    ] {
        rows.push(std::iter::once(name.to_string()).chain(report.estimates.iter().map(|e| fixed(get(e), 4))).collect());
    }
    let mut out = render(&rows);
    let _ = writeln!(
        out,
        "\nN = {}, respondents = {}; standard errors and quantile p-values from {} bootstrap replicates (seed {}).",
        report.n, report.n_respondents, report.bootstrap_replicates, report.seed
    );
    if report.estimates.iter().any(|e| !e.valid) {
        out.push_str("* a tenth or more of the bootstrap replicates failed; see the JSON report.\n");
    }
    for e in &report.estimates {
        for w in &e.warnings {
            let _ = writeln!(out, "warning ({}): {w}", e.estimator);
        }
    }
    out
}

/// Covariate means (standard deviations) overall and by response status;
/// the nonrespondent column is dropped when everyone responded.
pub fn describe_table(desc: &Description) -> String {
    let with_nr = desc.n_nonrespondents > 0;
    let mut header = vec!["Variable".to_string(), "All".into(), "Respondents".into()];
    if with_nr {
        header.push("Nonrespondents".into());
    }
    let mut rows = vec![header];
    let cell = |m: &Option<ivattrit::data::Moments>| match m {
        Some(m) => format!("{} ({})", fixed(m.mean, 3), opt(m.sd, 3)),
        None => "-".to_string(),
    };
    for r in &desc.rows {
        let mut row = vec![r.variable.clone(), cell(&r.total), cell(&r.respondents)];
        if with_nr {
            row.push(cell(&r.nonrespondents));
        }
        rows.push(row);
    }
    let mut n = vec!["N".to_string(), desc.n_total.to_string(), desc.n_respondents.to_string()];
    if with_nr {
        n.push(desc.n_nonrespondents.to_string());
    }
    rows.push(n);
    let mut out = render(&rows);
    out.push_str("\nMeans with standard deviations in parentheses.\n");
    out
}

pub fn montecarlo_table(report: &MonteCarloReport) -> String {
    let mut rows = vec![["Estimator", "Mean", "Bias", "RMSE", "MC s.e.", "|Bias|/s.e.", "Failures"]
        .map(String::from)
        .to_vec()];
    for s in &report.estimators {
        rows.push(vec![
            s.estimator.label().to_string(),
            opt(s.mean_estimate, 4),
            opt(s.mean_bias, 4),
            opt(s.rmse, 4),
            opt(s.mc_standard_error, 4),
            opt(s.bias_in_se(), 2),
            s.failures.to_string(),
        ]);
    }
    let mut out = render(&rows);
    let _ = writeln!(
        out,
        "\nTrue LATE {}; {} replications of n = {} (seed {}).",
        report.truth, report.reps, report.dgp.n, report.dgp.seed
    );
    out
}

pub fn li_gap_table(report: &LiGapReport) -> String {
    let mut rows =
        vec![["z", "Type", "f", "Resp.", "Nonresp.", "Gap", "s.e.", "|Gap|/s.e.", "Disjoint"].map(String::from).to_vec()];
    for c in &report.cells {
        rows.push(vec![
            c.z.to_string(),
            c.t.to_string(),
            c.moment.to_string(),
            c.n_respondents.to_string(),
            c.n_nonrespondents.to_string(),
            opt(c.gap, 4),
            opt(c.se, 4),
            opt(c.z_score(), 2),
            c.supports_disjoint().map_or("-", |d| if d { "yes" } else { "no" }).to_string(),
        ]);
    }
    let mut out = render(&rows);
    let _ = writeln!(
        out,
        "\nRespondent minus nonrespondent means of f(y) within (z, type) on {} draws (seed {}).",
        report.n_mc, report.seed
    );
    out
}

/// Per-replication estimates, one row per replication.
pub fn replications_csv(report: &MonteCarloReport) -> anyhow::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let ids: Vec<EstimatorId> = report.estimators.iter().map(|s| s.estimator).collect();
    w.write_record(std::iter::once("replication".to_string()).chain(ids.iter().map(|id| id.to_string())))?;
    for r in &report.replications {
        let cells = ids.iter().map(|id| r.estimates.get(id).copied().flatten().map(|v| format!("{v}")).unwrap_or_default());
        w.write_record(std::iter::once(r.index.to_string()).chain(cells))?;
    }
    Ok(w.into_inner()?)
}
