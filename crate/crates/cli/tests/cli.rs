use std::path::PathBuf;
use std::process::{Command, Output};

fn model(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../models").join(name)
}

fn pwa_hier(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pwa-hier"))
        .args(args)
        .env_remove("PWA_HIER_LOG")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn check_passes_on_both_models() {
    for name in ["case1.model", "case2.model"] {
        let out = pwa_hier(&["check", model(name).to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{name}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(stdout(&out).contains("PASS"));
    }
}

#[test]
fn run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = pwa_hier(&[
        "run",
        model("case1.model").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--plot-data",
        "--t-end",
        "2",
        "--step",
        "0.002",
    ]);
    assert_eq!(out.status.code(), Some(0));
    for file in ["trajectory.csv", "bounds.csv", "report.json", "err.dat", "kappaV.dat", "delta.dat"] {
        assert!(dir.path().join(file).exists(), "missing {file}");
    }
    let csv = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    let mut lines = csv.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("t,x1_1,"));
    assert!(header.ends_with(",mode_i,mode_j,err,V,b,delta"));
    assert_eq!(lines.count(), 1001);
    let bounds = std::fs::read_to_string(dir.path().join("bounds.csv")).unwrap();
    assert_eq!(bounds.lines().next(), Some("t,err,kappaV,delta"));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["verdict"], "PASS");
}

#[test]
fn sweep_prints_one_row_per_value() {
    let out = pwa_hier(&[
        "sweep",
        model("case1.model").to_str().unwrap(),
        "--param",
        "disturbance-amplitude",
        "--values",
        "0,0.1",
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout(&out).matches("PASS").count(), 2);
}

#[test]
fn invalid_inputs_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let case1 = model("case1.model");
    let case1 = case1.to_str().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["check", "/nonexistent/model.model"],
        vec!["run", case1, "--out", out_dir, "--t-end", "0"],
        vec!["run", case1, "--out", out_dir, "--step", "-1"],
        vec!["sweep", case1, "--param", "temperature", "--values", "1"],
        vec!["frobnicate"],
    ];
    for args in cases {
        let out = pwa_hier(&args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
    }
}

#[test]
fn malformed_model_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.model");
    std::fs::write(&path, "name = \"broken\"\n[dims]\nn = 2\n").unwrap();
    let out = pwa_hier(&["check", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn help_exits_with_zero() {
    assert_eq!(pwa_hier(&["--help"]).status.code(), Some(0));
}

#[test]
fn sequential_flag_matches_parallel_output() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let case2 = model("case2.model");
    for (dir, extra) in [(&a, None), (&b, Some("--sequential"))] {
        let mut args = vec!["run", case2.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--t-end", "3"];
        args.extend(extra);
        assert_eq!(pwa_hier(&args).status.code(), Some(0));
    }
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("trajectory.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn leaving_the_partition_exits_with_two() {
    let text = std::fs::read_to_string(model("case1.model")).unwrap();
    let text = text.replace("{ t = 4.0, value = [2.5, 2.5] }", "{ t = 4.0, value = [0.0, -4.0] }");
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("downward.model");
    std::fs::write(&path, text).unwrap();
    let out_dir = dir.path().join("out");
    let out = pwa_hier(&["run", path.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}
