use std::process::{Command, Output};

fn fixture(name: &str) -> String {
    format!("{}/../../fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn cbrw(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cbrw")).args(args).output().expect("binary runs")
}

fn json(out: &[u8]) -> serde_json::Value {
    serde_json::from_slice(out).expect("valid JSON")
}

#[test]
fn classify_reports_subcritical_regime() {
    let r1 = fixture("r1.toml");
    let out = cbrw(&["classify", "--model", &r1]);
    assert!(out.status.success());
    let v = json(&out.stdout);
    assert_eq!(v["regime"], "subcritical");
    assert_eq!(v["threshold"], 1.0);
    assert!((v["mean_offspring"].as_f64().unwrap() - 0.9).abs() < 1e-15);
}

#[test]
fn solve_m_writes_commented_csv() {
    let r1 = fixture("r1.toml");
    let out = cbrw(&["solve-m", "--model", &r1, "--horizon", "2", "--y", "-1"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    let comment = lines.next().unwrap();
    for key in ["# model=", "step=0.05", "horizon=2", "tol="] {
        assert!(comment.contains(key), "{comment}");
    }
    assert_eq!(lines.next().unwrap(), "t,value,error_estimate");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 41);
    assert!(rows[0].starts_with("0,0"));
}

#[test]
fn outputs_are_reproducible() {
    let r1 = fixture("r1.toml");
    let args = ["simulate", "--model", &r1, "--reps", "300", "--times", "1,3", "--seed", "17"];
    assert_eq!(cbrw(&args).stdout, cbrw(&args).stdout);
}

#[test]
fn usage_errors_exit_with_two() {
    let r1 = fixture("r1.toml");
    assert_eq!(cbrw(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(cbrw(&["classify", "--model", "/does/not/exist.toml"]).status.code(), Some(2));
    assert_eq!(cbrw(&["verify", "--model", &r1, "--suite", "nonsense"]).status.code(), Some(2));
}

#[test]
fn invalid_model_reports_the_key() {
    let dir = std::env::temp_dir().join(format!("cbrw-cli-test-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("bad.toml");
    let text = std::fs::read_to_string(fixture("r1.toml")).unwrap().replace("alpha = 0.5", "alpha = 1.5");
    std::fs::write(&path, text).unwrap();
    let out = cbrw(&["classify", "--model", path.to_str().unwrap()]);
    std::fs::remove_dir_all(&dir).ok();
    assert_eq!(out.status.code(), Some(2));
    let err = json(&out.stderr);
    assert_eq!(err["error"]["kind"], "Parse");
    assert!(err["error"]["message"].as_str().unwrap().starts_with("alpha"));
}

#[test]
fn computation_errors_exit_with_three() {
    // the planar tail is far too heavy at this horizon
    let r2 = fixture("r2.toml");
    let out = cbrw(&["j-integral", "--model", &r2, "--horizon", "20", "--y", "0,0"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(json(&out.stderr)["error"]["kind"], "TailBoundTooLarge");
}

#[test]
fn verify_moments_passes() {
    let r1 = fixture("r1.toml");
    let out = cbrw(&["verify", "--model", &r1, "--suite", "moments"]);
    assert!(out.status.success());
    let v = json(&out.stdout);
    let text = v.to_string();
    assert!(text.contains("\"passed\":true") && !text.contains("\"passed\":false"), "{text}");
}
