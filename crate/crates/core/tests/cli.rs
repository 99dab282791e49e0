use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_born-series"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

const SMALL: [&str; 6] = ["--h", "0.5", "--n-src", "6", "--n-det", "6"];

#[test]
fn radii_emits_documented_header() {
    let o = bin(&["radii", "--ka", "1,10,100", "--mode", "scalar"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "ka,mu_inf,mu_2,nu_inf,nu_2,forward_radius_inf,forward_radius_2,R_inf,R_2,mode"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.ends_with(",scalar")));
}

#[test]
fn forward_flags_noncompliant_phantom_with_exit_two() {
    let mut args = vec!["forward", "--contraction", "1.5"];
    args.extend_from_slice(&SMALL);
    let o = bin(&args);
    assert_eq!(o.status.code(), Some(2));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["certificate_applicable"], false);
    let data = v["data"].as_array().unwrap();
    assert_eq!(data.len(), 36);
    assert!(data.iter().any(|d| d[0].as_f64().unwrap() != 0.0));
}

#[test]
fn forward_compliant_phantom_exits_zero() {
    let mut args = vec!["forward", "--contraction", "0.3", "--order", "8"];
    args.extend_from_slice(&SMALL);
    let o = bin(&args);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["certificate_holds"], true);
    // keys keep struct order, config first
    assert!(text.starts_with("{\n  \"config\": {\n    \"mode\""));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"k": 2.0, "h": 0.5, "n_src": 4, "n_det": 5, "p": "inf", "regularization": {"rank": 5}}"#,
    )
    .unwrap();
    let out = dir.path().join("out.json");
    let o = bin(&[
        "invert",
        "--config",
        cfg.to_str().unwrap(),
        "--k",
        "1.5",
        "--order",
        "2",
        "--output",
        out.to_str().unwrap(),
    ]);
    assert!(matches!(o.status.code(), Some(0 | 2)), "{o:?}");
    assert!(o.stdout.is_empty());
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["config"]["k"], 1.5);
    assert_eq!(v["config"]["n_det"], 5);
    assert_eq!(v["config"]["p"], "inf");
    assert_eq!(v["rank"], 5);
    assert_eq!(v["errors"].as_array().unwrap().len(), 2);
}

#[test]
fn invalid_input_exits_one() {
    let o = bin(&["forward", "--a", "1", "--h", "2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));

    let o = bin(&["invert", "--noise", "0.1", "--h", "0.5"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed"));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"wave_number": 1.0}"#).unwrap();
    let o = bin(&["radii", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn selftest_reports_injected_fault_by_name() {
    let o = bin(&["selftest", "--quick"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).lines().all(|l| !l.starts_with("FAIL")));

    let o = bin(&["selftest", "--quick", "--inject-fault", "mu_closed_form"]);
    assert_eq!(o.status.code(), Some(1));
    let text = stdout(&o);
    let failed: Vec<&str> = text.lines().filter(|l| l.starts_with("FAIL")).collect();
    assert_eq!(failed.len(), 1);
    assert!(failed[0].contains("mu_closed_form"));

    let o = bin(&["selftest", "--quick", "--inject-fault", "no_such_check"]);
    assert_eq!(o.status.code(), Some(1));
}
