use diffna::cli::{run_args, without_meta, EXIT_OK, EXIT_VALIDATION, SCHEMA};
use serde_json::Value;

fn run(args: &[&str]) -> diffna::cli::Outcome {
    let mut argv = vec!["diffna"];
    argv.extend_from_slice(args);
    run_args(argv)
}

fn validate(report: &str) {
    let schema: Value = serde_json::from_str(SCHEMA).unwrap();
    let compiled = jsonschema::JSONSchema::compile(&schema).expect("schema compiles");
    let doc: Value = serde_json::from_str(report).unwrap();
    if let Err(errors) = compiled.validate(&doc) {
        let msgs: Vec<String> = errors.map(|e| format!("{} at {}", e, e.instance_path)).collect();
        panic!("schema violations: {msgs:?}");
    };
}

#[test]
fn catalog_matches_golden() {
    let o = run(&["catalog"]);
    assert_eq!(o.code, EXIT_OK);
    validate(&o.text);
    let body = without_meta(&o.text).unwrap();
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden/catalog.json");
    if std::env::var("DIFFNA_BLESS").is_ok() {
        std::fs::write(path, &body).unwrap();
    }
    let golden = std::fs::read_to_string(path).expect("golden file present");
    assert_eq!(body, golden);
}

#[test]
fn reports_validate_against_schema() {
    let cases: Vec<Vec<&str>> = vec![
        vec!["classify", "--model", "counterexample_nondc"],
        vec!["verdict", "--model", "sticky_bm", "--rho", "2", "--x0", "0", "--horizon", "1"],
        vec!["verdict", "--model", "counterexample_nondc", "--x0", "1", "--horizon", "inf"],
        vec!["simulate", "--model", "skew_bm", "--x0", "0", "--horizon", "1", "--n-paths", "300", "--cells", "32", "--seed", "1", "--exit=-1,1"],
        vec!["arbitrage", "--model", "counterexample_reflecting", "--x0", "1", "--horizon", "1", "--n-paths", "300", "--cells", "32", "--seed", "7"],
        vec!["arbitrage", "--model", "demo_post_hit_clock", "--x0", "0.1", "--horizon", "1", "--dt", "0.001", "--n-paths", "200", "--seed", "2"],
        vec!["report", "--model", "brownian", "--x0", "0", "--horizon", "1", "--n-paths", "200", "--cells", "32", "--seed", "5"],
    ];
    for c in cases {
        let o = run(&c);
        assert_eq!(o.code, EXIT_OK, "{c:?}: {}", o.text);
        validate(&o.text);
    }
}

#[test]
fn sticky_verdict_example() {
    let o = run(&["verdict", "--model", "sticky_bm", "--rho", "2", "--x0", "0", "--horizon", "1"]);
    let v: Value = serde_json::from_str(&o.text).unwrap();
    assert_eq!(v["body"]["verdict"]["na"], "holds");
    let trace = v["body"]["verdict"]["rule_trace"].as_array().unwrap();
    assert!(trace.iter().any(|r| r.as_str().unwrap().starts_with("R1")));
}

#[test]
fn classify_counterexample_example() {
    let o = run(&["classify", "--model", "counterexample_nondc"]);
    let v: Value = serde_json::from_str(&o.text).unwrap();
    let b = &v["body"];
    for side in b["boundaries"].as_array().unwrap() {
        assert_eq!(side["accessibility"], "inaccessible");
    }
    assert_eq!(b["dc_scale"]["verdict"], "not_dc");
    assert_eq!(b["dc_inverse"]["verdict"], "dc");
}

#[test]
fn validation_errors_exit_2() {
    let bad: Vec<Vec<&str>> = vec![
        vec!["verdict", "--model", "no_such_model", "--x0", "0", "--horizon", "1"],
        vec!["simulate", "--model", "brownian", "--x0", "0", "--horizon", "1"],
        vec!["simulate", "--model", "brownian", "--x0", "0", "--horizon", "inf", "--seed", "1"],
        vec!["verdict", "--model", "counterexample_reflecting", "--x0", "0", "--horizon", "1"],
        vec!["verdict", "--model", "sticky_bm", "--rho", "-1", "--x0", "0", "--horizon", "1"],
        vec!["verdict", "--model", "brownian", "--x0", "0", "--horizon", "-2"],
        vec!["catalog", "--format", "csv"],
        vec!["frobnicate"],
    ];
    for c in bad {
        let o = run(&c);
        assert_eq!(o.code, EXIT_VALIDATION, "{c:?}: {}", o.text);
        assert!(o.is_error);
    }
}

#[test]
fn model_spec_file_round_trip() {
    let dir = std::env::temp_dir().join(format!("diffna-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let m = diffna::characteristics::builtin("skew_bm", &Default::default()).unwrap();
    let path = dir.join("skew.json");
    std::fs::write(&path, serde_json::to_string(&m.to_spec()).unwrap()).unwrap();
    let p = path.to_str().unwrap();
    let from_file = run(&["verdict", "--model", p, "--x0", "1", "--horizon", "1"]);
    let builtin = run(&["verdict", "--model", "skew_bm", "--x0", "1", "--horizon", "1"]);
    assert_eq!(from_file.code, EXIT_OK);
    assert_eq!(without_meta(&from_file.text).unwrap(), without_meta(&builtin.text).unwrap());

    let broken = dir.join("broken.json");
    std::fs::write(&broken, "{\n  \"interval\": 3\n}").unwrap();
    let o = run(&["verdict", "--model", broken.to_str().unwrap(), "--x0", "1", "--horizon", "1"]);
    assert_eq!(o.code, EXIT_VALIDATION);
    assert!(o.text.contains("line 2"), "{}", o.text);
}

#[test]
fn csv_and_out_file() {
    let dir = std::env::temp_dir().join(format!("diffna-csv-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let out = dir.join("dc.csv");
    let o = run(&["classify", "--model", "skew_bm", "--format", "csv", "--out", out.to_str().unwrap()]);
    assert_eq!(o.code, EXIT_OK);
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("# scale\ngrid_step,total_variation_of_slopes\n"));
}

#[test]
fn identical_configs_give_identical_reports() {
    let args = ["arbitrage", "--model", "counterexample_reflecting", "--x0", "1", "--horizon", "1", "--n-paths", "500", "--cells", "32", "--seed", "9"];
    let a = run(&args);
    let b = run(&args);
    assert_eq!(without_meta(&a.text).unwrap(), without_meta(&b.text).unwrap());
}
