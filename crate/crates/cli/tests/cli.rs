//! Runs the `bec` binary and checks exit codes and output framing.

use std::process::{Command, Output};

fn data(name: &str) -> String {
    format!("{}/data/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn bec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bec")).args(args).output().expect("bec runs")
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("stdout is json")
}

#[test]
fn winding_of_trivial_model_is_zero() {
    let out = bec(&["winding", &data("trivial.json")]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["winding"], 0);
    assert_eq!(v["metadata"]["tool"], "bec-cli");
    assert_eq!(v["metadata"]["command"], "winding");
    assert_eq!(v["metadata"]["input_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn verify_fixture_passes() {
    let out = bec(&["verify", "--fixture", "dimerized-all"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn bad_input_exits_two() {
    assert_eq!(bec(&["winding", "/no/such/file.json"]).status.code(), Some(2));
    assert_eq!(bec(&["winding", "--fixture", "nope"]).status.code(), Some(2));
    assert_eq!(bec(&["winding", &data("ssh.json"), "--tol.bogus=1"]).status.code(), Some(2));
    assert_eq!(bec(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn spectrum_csv_framing() {
    let out = bec(&["spectrum", &data("ssh.json"), "--samples", "16"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(!text.contains('\r'));
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    assert_eq!(lines.next(), Some("k,E_1,E_2"));
    assert!(lines.count() >= 16);
    let meta = text.lines().next().unwrap().trim_start_matches('#').trim();
    let meta: serde_json::Value = serde_json::from_str(meta).unwrap();
    assert_eq!(meta["command"], "spectrum");
}

#[test]
fn phase_diagram_has_one_row_per_grid_point() {
    let out = bec(&["phase-diagram", &data("ssh_family.json"), "--grid", "3x4", "--cells", "30"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut rows = text.lines().filter(|l| !l.starts_with('#'));
    assert_eq!(rows.next(), Some("t1,t2,W,edge_index,gap_margin"));
    assert_eq!(rows.count(), 12);
}

#[test]
fn out_flag_writes_file() {
    let path = std::env::temp_dir().join(format!("bec-cli-test-{}.json", std::process::id()));
    let out = bec(&["--out", path.to_str().unwrap(), "winding", "--fixture", "dimerized-minus"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    std::fs::remove_file(&path).ok();
    assert_eq!(v["winding"], -1);
}
