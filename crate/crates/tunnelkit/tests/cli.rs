use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_tunnelkit");

fn problem(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("problems").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("spawn tunnelkit")
}

const SMALL: &str = "schema = 1
[domain]
kind = interval
extents = -2, 2
resolution = 401
[potential]
V = (1 - x^2)^2
[hbar]
sweep = 0.12, 0.1, 0.09, 0.08
[output]
coo = true
";

#[test]
fn report_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.tk");
    std::fs::write(&cfg, SMALL).unwrap();
    let out = dir.path().join("out");
    let o = run(&["report", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["report.json", "sweep.csv", "operator.coo", "fields/agmon_0.csv", "fields/agmon_1.csv"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["command"], "report");
    assert_eq!(report["wells"]["wells"].as_array().unwrap().len(), 2);
    assert_eq!(report["interaction"]["per_hbar"].as_array().unwrap().len(), 4);
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn same_seed_gives_identical_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = problem("double_well.tk");
    let mut reports = Vec::new();
    for (k, threads) in ["1", "3"].iter().enumerate() {
        let out = dir.path().join(format!("run{k}"));
        let o = run(&[
            "interaction",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--seed",
            "17",
            "--threads",
            threads,
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        reports.push(std::fs::read(out.join("report.json")).unwrap());
    }
    assert!(reports[0] == reports[1]);
}

#[test]
fn bad_configs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("unknown key", SMALL.replace("resolution = 401", "resolution = 401\nmesh = fine")),
        ("missing schema", SMALL.replace("schema = 1\n", "")),
        ("bad expression", SMALL.replace("(1 - x^2)^2", "(1 - x^2")),
        ("negative hbar", SMALL.replace("0.12, 0.1", "-0.12, 0.1")),
    ];
    for (name, text) in cases {
        let cfg = dir.path().join("bad.tk");
        std::fs::write(&cfg, text).unwrap();
        let o = run(&["wells", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
        assert!(!o.status.success(), "{name} accepted");
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(err.starts_with("error:"), "{name}: {err}");
    }
    let o = run(&["sweep", "--config", dir.path().join("absent.tk").to_str().unwrap()]);
    assert!(!o.status.success());
}
