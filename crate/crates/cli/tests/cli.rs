use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command as Process;

use ivattrit::dgp::simulate;
use ivattrit::{ErrorStructure, ParametricDgpConfig};
use ivattrit_cli::{load_csv, parse_args, run, write_simulated, ColumnMapping, RunConfig};
use serde_json::Value;

fn schema_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/schemas")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Violations of `docs/schemas/<name>.schema.json` by `instance`.
fn schema_errors(name: &str, instance: &Value) -> Vec<String> {
    let defs = read_json(&schema_dir().join("defs.schema.json"));
    let schema = read_json(&schema_dir().join(format!("{name}.schema.json")));
    let registry = jsonschema::Registry::new()
        .add("https://ivattrit.invalid/schemas/defs.schema.json", defs)
        .unwrap()
        .prepare()
        .unwrap();
    let validator = jsonschema::options().with_registry(&registry).build(&schema).unwrap();
    validator.iter_errors(instance).map(|e| e.to_string()).collect()
}

fn assert_schema(name: &str, instance: &Value) {
    let errors = schema_errors(name, instance);
    assert!(errors.is_empty(), "{name}: {errors:#?}");
}

fn config(args: &[&str]) -> RunConfig {
    parse_args(std::iter::once("ivattrit").chain(args.iter().copied())).unwrap()
}

fn tmp() -> tempfile::TempDir {
    tempfile::tempdir().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn scenario_c(n: usize, seed: u64) -> ParametricDgpConfig {
    ParametricDgpConfig {
        beta0: -0.3,
        gamma0: 0.2,
        gamma1: 0.3,
        error_structure: ErrorStructure::ComplierShift { pi: 0.4, sigma_u: 1.0, rho_vw: 0.0 },
        covariates: vec![ivattrit::CovariateEffect { name: "x1".into(), outcome: 0.5, treatment: 0.3, response: 0.2 }],
        n,
        seed,
        ..Default::default()
    }
}

#[test]
fn csv_round_trip_is_exact() {
    let sim = simulate(&scenario_c(500, 4)).unwrap();
    let dir = tmp();
    let path = dir.path().join("data.csv");
    for oracle in [false, true] {
        fs::write(&path, write_simulated(&sim, oracle).unwrap()).unwrap();
        let mapping = ColumnMapping {
            x: vec!["x1".into()],
            t: oracle.then(|| "t".into()),
            ..Default::default()
        };
        let loaded = load_csv(&path, &mapping).unwrap();
        let expected = if oracle { sim.dataset.clone() } else { sim.dataset.clone().without_types() };
        assert_eq!(loaded, expected, "oracle columns {oracle}");
        if oracle {
            // latent columns are written with full precision too
            let mut rdr = csv::Reader::from_path(&path).unwrap();
            for (rec, l) in rdr.records().zip(&sim.latent) {
                let rec = rec.unwrap();
                assert_eq!(rec[6].parse::<f64>().unwrap(), l.u);
                assert_eq!(rec[8].parse::<f64>().unwrap(), l.w);
            }
        }
    }
}

#[test]
fn every_command_output_matches_its_schema() {
    let dir = tmp();
    let d = dir.path();
    let sim_dir = d.join("sim");
    run(&config(&["simulate", "--scenario", "c", "--n", "1500", "--seed", "2", "--covariates", "x1:0.5:0.3:0.2", "--output-dir", s(&sim_dir)])).unwrap();
    assert_schema("simulate", &read_json(&sim_dir.join("simulate.json")));
    assert_schema("manifest", &read_json(&sim_dir.join("manifest.json")));
    let data = sim_dir.join("data.csv");

    let est = d.join("est");
    run(&config(&["estimate", "--input", s(&data), "--x-cols", "x1", "--bootstrap-b", "99", "--output-dir", s(&est)])).unwrap();
    let mut estimates = read_json(&est.join("estimates.json"));
    assert_schema("estimates", &estimates);
    estimates["estimates"][0]["p_value"] = 1.5.into();
    assert!(!schema_errors("estimates", &estimates).is_empty(), "schema must reject p > 1");
    assert_schema("manifest", &read_json(&est.join("manifest.json")));

    let desc = d.join("desc");
    run(&config(&["describe", "--input", s(&data), "--x-cols", "x1", "--output-dir", s(&desc)])).unwrap();
    assert_schema("describe", &read_json(&desc.join("describe.json")));

    let mc = d.join("mc");
    run(&config(&["montecarlo", "--scenario", "a", "--n", "400", "--reps", "10", "--output-dir", s(&mc)])).unwrap();
    assert_schema("montecarlo", &read_json(&mc.join("montecarlo.json")));

    let dg = d.join("dg");
    run(&config(&["diagnose", "--scenario", "b", "--n-mc", "10000", "--output-dir", s(&dg)])).unwrap();
    assert_schema("li_gap", &read_json(&dg.join("li_gap.json")));
    assert_schema("manifest", &read_json(&dg.join("manifest.json")));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tmp();
    let out = dir.path().join("out");
    let data = dir.path().join("sim");
    run(&config(&["simulate", "--scenario", "c", "--n", "800", "--seed", "5", "--output-dir", s(&data)])).unwrap();
    let input = data.join("data.csv");
    let runs: [Vec<&str>; 4] = [
        vec!["simulate", "--scenario", "b", "--n", "300", "--seed", "1", "--oracle-columns"],
        vec!["estimate", "--input", s(&input), "--bootstrap-b", "99", "--seed", "3"],
        vec!["montecarlo", "--scenario", "c", "--n", "300", "--reps", "10", "--seed", "8"],
        vec!["diagnose", "--scenario", "a", "--n-mc", "10000", "--seed", "2"],
    ];
    for args in runs {
        let mut args = args.clone();
        args.extend(["--output-dir", s(&out)]);
        let first = run(&config(&args)).unwrap();
        let snapshot: Vec<Vec<u8>> = first.files.iter().map(|f| fs::read(out.join(f)).unwrap()).collect();
        let second = run(&config(&args)).unwrap();
        assert_eq!(first, second);
        for (f, bytes) in first.files.iter().zip(&snapshot) {
            assert_eq!(&fs::read(out.join(f)).unwrap(), bytes, "{} {f}", args[0]);
        }
        let manifest = fs::read_to_string(out.join("manifest.json")).unwrap();
        assert!(!manifest.contains("time"), "manifest must not carry timestamps");
    }
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tmp();
    let cfg = dir.path().join("run.conf");
    fs::write(&cfg, "# replicate settings\nbootstrap-b = 299\nseed = 11\nx_cols = age, educ\ntrim-low = 0.05\n").unwrap();
    let c = config(&["estimate", "--input", "a.csv", "--config", s(&cfg), "--seed", "4"]);
    assert_eq!(c.bootstrap_b, 299);
    assert_eq!(c.seed, 4);
    assert_eq!(c.columns.x, ["age", "educ"]);
    assert_eq!(c.options.nuisance.trim_low, 0.05);
    fs::write(&cfg, "no-such-flag = 1\n").unwrap();
    assert!(parse_args(["ivattrit", "estimate", "--input", "a.csv", "--config", s(&cfg)]).is_err());
}

#[test]
fn describe_drops_nonrespondent_column_under_full_response() {
    let dir = tmp();
    let data = dir.path().join("full.csv");
    fs::write(&data, "y,d,z,age\n1,1,1,30\n2,0,1,40\n0.5,0,0,22\n3,1,0,35\n").unwrap();
    let out = run(&config(&["describe", "--input", s(&data), "--x-cols", "age", "--output-dir", s(dir.path())])).unwrap();
    let header = out.summary.lines().next().unwrap();
    assert!(header.contains("Respondents") && !header.contains("Nonrespondents"), "{header}");
    assert!(out.summary.contains("age"));
}

#[test]
fn simulate_then_estimate_recovers_the_late() {
    let dir = tmp();
    let sim = dir.path().join("sim");
    run(&config(&["simulate", "--scenario", "c", "--n", "20000", "--seed", "21", "--output-dir", s(&sim)])).unwrap();
    let est = dir.path().join("est");
    run(&config(&["estimate", "--input", s(&sim.join("data.csv")), "--bootstrap-b", "199", "--output-dir", s(&est)])).unwrap();
    let report = read_json(&est.join("estimates.json"));
    let truth = read_json(&sim.join("simulate.json"))["true_late"].as_f64().unwrap();
    for e in report["estimates"].as_array().unwrap() {
        let (effect, se) = (e["effect"].as_f64().unwrap(), e["standard_error"].as_f64().unwrap());
        assert!((effect - truth).abs() < 3.0 * se, "{}: {effect} vs {truth} (se {se})", e["estimator"]);
        assert!(e["valid"].as_bool().unwrap());
    }
}

#[test]
fn binary_reports_errors_as_json() {
    let dir = tmp();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "y,d,z,r\n1,1,1,1\n3.2,0,0,0\n").unwrap();
    let out_dir = dir.path().join("out");
    let output = Process::new(env!("CARGO_BIN_EXE_ivattrit"))
        .args(["estimate", "--input", s(&bad), "--output-dir", s(&out_dir)])
        .output()
        .unwrap();
    assert!(!output.status.success());
    let err: Value = serde_json::from_slice(&output.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "outcome_without_response");
    assert_schema("error", &err);
    assert_eq!(read_json(&out_dir.join("error.json")), err);

    let output = Process::new(env!("CARGO_BIN_EXE_ivattrit")).args(["estimate"]).output().unwrap();
    assert_eq!(output.status.code(), Some(1));
    let output = Process::new(env!("CARGO_BIN_EXE_ivattrit")).args(["frobnicate"]).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn binary_prints_effect_table() {
    let dir = tmp();
    let sim = dir.path().join("sim");
    let exe = env!("CARGO_BIN_EXE_ivattrit");
    let ok = Process::new(exe).args(["simulate", "--scenario", "c", "--n", "3000", "--output-dir", s(&sim)]).output().unwrap();
    assert!(ok.status.success());
    let output = Process::new(exe)
        .args(["estimate", "--input", s(&sim.join("data.csv")), "--bootstrap-b", "99", "--output-dir", s(dir.path())])
        .output()
        .unwrap();
    assert!(output.status.success());
    let text = String::from_utf8(output.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0].split_whitespace().collect::<Vec<_>>(), ["LI", "+", "MAR", "MAR", "Wald"]);
    assert!(lines[1].starts_with("Effect"));
    assert!(lines[2].starts_with("Standard error"));
    assert!(lines[3].starts_with("p-value"));
    assert_eq!(fs::read_to_string(dir.path().join("estimates.txt")).unwrap(), text);
}
