use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
name = tiny
N = 1, 2
J = 2
lower = 0, 0
upper = 1, 1
costs = 0.1, 0.2
T = 3
dist.kind = uniform
";

fn mdauction(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mdauction"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.conf");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn compare_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), TINY);
    let out = dir.path().join("out");
    let run = mdauction(&["compare", &config, "--out", out.to_str().unwrap()]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let stdout = String::from_utf8(run.stdout).unwrap();
    assert!(stdout.contains("tiny, N=2"));
    for n in ["N1", "N2"] {
        for file in ["solution.csv", "Q1.pgm", "Q2.pgm", "exclusion.pgm", "report.csv", "report.txt"] {
            assert!(out.join(n).join(file).is_file(), "{n}/{file}");
        }
    }
    assert!(out.join("report.csv").is_file());
    let table = fs::read_to_string(out.join("N1/solution.csv")).unwrap();
    assert!(table.starts_with("v_1,v_2,Q_1,Q_2,U,M,excluded\n"));
    assert_eq!(table.lines().count(), 1 + 16);
    assert!(fs::read_to_string(out.join("N1/Q1.pgm")).unwrap().starts_with("P2\n4 4\n255\n"));
}

#[test]
fn csv_only_skips_images() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), TINY);
    let out = dir.path().join("out");
    let run = mdauction(&["solve", &config, "--out", out.to_str().unwrap(), "--format", "csv"]);
    assert!(run.status.success());
    assert!(out.join("N1/solution.csv").is_file());
    assert!(!out.join("N1/Q1.pgm").exists());
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), TINY);
    let runs: Vec<_> = ["a", "b"]
        .iter()
        .map(|tag| {
            let out = dir.path().join(tag);
            assert!(mdauction(&["compare", &config, "--out", out.to_str().unwrap()]).status.success());
            out
        })
        .collect();
    for file in ["N2/solution.csv", "N2/report.csv", "report.csv"] {
        assert_eq!(fs::read(runs[0].join(file)).unwrap(), fs::read(runs[1].join(file)).unwrap(), "{file}");
    }
}

#[test]
fn zero_intervals_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &TINY.replace("T = 3", "T = 0"));
    let run = mdauction(&["solve", &config]);
    assert_eq!(run.status.code(), Some(2));
    let stderr = String::from_utf8(run.stderr).unwrap();
    assert!(stderr.contains("T must be"), "{stderr}");
}

#[test]
fn missing_config_and_bad_flags() {
    assert_eq!(mdauction(&["solve", "/nonexistent/run.conf"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), TINY);
    assert_eq!(mdauction(&["solve", &config, "--tol", "-1"]).status.code(), Some(2));
    assert_eq!(mdauction(&["solve", &config, "--threads", "0"]).status.code(), Some(2));
}
