use std::fs;
use std::path::Path;
use std::process::Command;

use lobscope_harness::ExperimentConfig;

fn lobscope(args: &[&str], cwd: &Path) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_lobscope")).args(args).current_dir(cwd).env("RUST_LOG", "warn").output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn configs() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn shipped_configs_parse() {
    let full = ExperimentConfig::load(&configs().join("full.toml")).unwrap();
    assert_eq!(full.horizons.len(), 9);
    assert_eq!(full.models.len(), 7);
    let smoke = ExperimentConfig::load(&configs().join("smoke.toml")).unwrap();
    assert_eq!(smoke.tickers, vec!["AAA", "BBB", "NUL"]);
}

#[test]
fn synth_ingest_features_mcs_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let spec = configs().join("synth-small.toml");
    lobscope(&["synth", "--out", "data", "--tickers", "AAA", "--coefs", "0.4", "--days", "6", "--spec", spec.to_str().unwrap()], d);
    let mut names: Vec<String> = fs::read_dir(d.join("data/AAA")).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    names.sort();
    assert_eq!(names.len(), 12);
    assert_eq!(names[0], "AAA_2019-01-07_34200000_36600000_message_5.csv");

    let message = d.join("data/AAA").join(&names[0]);
    let summary: serde_json::Value = serde_json::from_str(&lobscope(&["ingest", message.to_str().unwrap(), "--levels", "5", "--edge-trim-secs", "60"], d)).unwrap();
    assert_eq!(summary["mismatched_events"], 0);
    assert_eq!(summary["crossed_or_one_sided"], 0);
    assert!(summary["retained"].as_u64().unwrap() > 1000);

    let cfg = "[representation]\nt = 10\nlevels = 5\nwindow = 5\ndepth = 3\n[session]\nedge_trim_secs = 60\n";
    fs::write(d.join("cfg.toml"), cfg).unwrap();
    let prior: Vec<String> = names.iter().filter(|n| n.contains("message")).take(5).map(|n| d.join("data/AAA").join(n).to_string_lossy().into_owned()).collect();
    let last = d.join("data/AAA").join(names.iter().rev().find(|n| n.contains("message")).unwrap());
    lobscope(&["features", last.to_str().unwrap(), "--config", "cfg.toml", "--representation", "order-flow", "--prior", &prior.join(","), "--stride", "100", "--out", "of.lobt"], d);
    let c = lobscope_core::container::Container::read(&d.join("of.lobt")).unwrap();
    let (dims, x) = c.f32("x").unwrap();
    assert_eq!(&dims[1..], &[10, 10]);
    assert!(x.iter().all(|v| v.is_finite()));
    assert_eq!(c.attr("standardised_with"), Some("prior sessions"));

    fs::write(d.join("panel.csv"), "window,n,benchmark,good\n0,100,1.10,1.00\n1,100,1.09,1.01\n2,100,1.11,0.99\n3,100,1.10,1.02\n4,100,1.08,1.00\n5,100,1.12,1.01\n").unwrap();
    let printed = lobscope(&["mcs", "panel.csv", "--replications", "500", "--seed", "3", "--out", "mcs"], d);
    assert!(printed.contains("good\t1"));
    let r = lobscope_mcs::McsResult::read_json(&d.join("mcs/mcs.json")).unwrap();
    assert!(r.p_values[0] < 0.05);

    let empty = lobscope_harness::ExperimentResult::empty(lobscope_harness::experiment::RunKind::PerTicker, vec![10], vec![0.05]);
    empty.write_json(&d.join("results.json")).unwrap();
    lobscope(&["report", "results.json", "--out", "rep", "--format", "csv"], d);
    assert_eq!(fs::read_to_string(d.join("rep/pvalues.csv")).unwrap(), "ticker,h10\n");
}

#[test]
fn select_prints_quantile_tickers() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("chars.csv"),
        "ticker,updates,trades,price_changes,spread\nA,1,1,1,1\nB,2,2,2,2\nC,3,3,3,3\nD,4,4,4,4\nE,5,5,5,5\n",
    )
    .unwrap();
    assert_eq!(lobscope(&["select", "chars.csv", "--n", "3"], dir.path()), "A\nC\nE\n");
}

#[test]
fn bad_input_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_lobscope")).args(["ingest", "nope_message_10.csv"]).current_dir(dir.path()).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "));
}
