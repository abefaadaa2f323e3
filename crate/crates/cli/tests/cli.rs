use std::collections::HashSet;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_manysim");
const GRID: &str = "tiles_x=4,tiles_y=4";

fn manysim(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("MANYSIM_SET").output().expect("spawn manysim")
}

fn run_bfs(dir: &Path, verbosity: u8, extra: &[&str]) -> Output {
    let v = verbosity.to_string();
    let mut args = vec!["run", "--app", "bfs", "--dataset", "hand", "--set", GRID, "--frame-us", "0.01", "-v", &v];
    args.extend(["--out-dir", dir.to_str().unwrap()]);
    args.extend(extra);
    let out = manysim(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn report_value(report: &str, key: &str) -> f64 {
    report
        .lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.trim().strip_prefix('=')))
        .unwrap_or_else(|| panic!("{key} missing"))
        .trim()
        .parse()
        .unwrap()
}

#[test]
fn run_writes_all_artifacts() {
    let d = tempfile::tempdir().unwrap();
    run_bfs(d.path(), 0, &[]);
    for f in ["run.log", "summary.json", "counters.txt", "report.txt", "config.txt"] {
        assert!(d.path().join(f).is_file(), "{f}");
    }
    let log = fs::read_to_string(d.path().join("run.log")).unwrap();
    let lines: Vec<_> = log.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("RUN app=bfs dataset=hand grid=4x4"));
    assert!(lines[1].starts_with("SUMMARY ") && lines[1].ends_with("check=pass"));
    let s: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(s["app"], "bfs");
    assert_eq!(s["grid"], serde_json::json!([4, 4]));
    assert!(s["check"].is_null());
}

#[test]
fn higher_verbosity_is_superset() {
    let d = tempfile::tempdir().unwrap();
    let logs: Vec<String> = (0..=3u8)
        .map(|v| {
            let p = d.path().join(format!("v{v}"));
            run_bfs(&p, v, &[]);
            fs::read_to_string(p.join("run.log")).unwrap()
        })
        .collect();
    for w in logs.windows(2) {
        let hi: HashSet<&str> = w[1].lines().collect();
        assert!(w[0].lines().all(|l| hi.contains(l)));
        assert!(w[1].lines().count() > w[0].lines().count());
    }
}

#[test]
fn per_tile_records_cover_every_frame() {
    let d = tempfile::tempdir().unwrap();
    run_bfs(d.path(), 2, &[]);
    let log = fs::read_to_string(d.path().join("run.log")).unwrap();
    let s: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.path().join("summary.json")).unwrap()).unwrap();
    let frames = s["frames"].as_u64().unwrap();
    let cycles = s["metrics"]["noc_cycles"].as_u64().unwrap();
    let fc = s["frame_cycles"].as_u64().unwrap();
    assert!(frames.abs_diff(cycles / fc) <= 1);
    let tile_records = log.lines().filter(|l| l.starts_with("FRAME ") && !l.contains(" * * ")).count() as u64;
    assert_eq!(tile_records, frames * 16);
    let whole = log.lines().filter(|l| l.contains(" * * ")).count() as u64;
    assert_eq!(whole, frames);
}

#[test]
fn worker_count_does_not_change_results() {
    let d = tempfile::tempdir().unwrap();
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    run_bfs(&a, 2, &["--workers", "1"]);
    run_bfs(&b, 2, &["--workers", "3"]);
    for f in ["counters.txt", "report.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let strip = |p: &Path| fs::read_to_string(p.join("run.log")).unwrap();
    assert_eq!(strip(&a), strip(&b));
}

#[test]
fn postprocess_reproduces_report() {
    let d = tempfile::tempdir().unwrap();
    run_bfs(d.path(), 0, &[]);
    let c = d.path().join("counters.txt");
    let cfg = d.path().join("config.txt");
    let out = manysim(&["postprocess", c.to_str().unwrap(), cfg.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(out.stdout, fs::read(d.path().join("report.txt")).unwrap());
}

#[test]
fn postprocess_override_scales_hbm_cost() {
    let d = tempfile::tempdir().unwrap();
    run_bfs(d.path(), 0, &["--set", "dram.channels=1"]);
    let c = d.path().join("counters.txt");
    let cfg = d.path().join("config.txt");
    let base = fs::read_to_string(d.path().join("report.txt")).unwrap();
    let out = manysim(&["postprocess", c.to_str().unwrap(), cfg.to_str().unwrap(), "--set", "hbm_usd_per_gb=3.75"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let half = String::from_utf8(out.stdout).unwrap();
    let key = "cost.package.hbm_usd";
    assert_eq!(report_value(&half, key) * 2.0, report_value(&base, key));
}

#[test]
fn postprocess_missing_counters_fails() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("config.txt");
    fs::write(&cfg, "").unwrap();
    let out = manysim(&["postprocess", d.path().join("nope.txt").to_str().unwrap(), cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.txt"));
}

#[test]
fn bad_override_is_a_hard_error() {
    let d = tempfile::tempdir().unwrap();
    let out = manysim(&["run", "--app", "bfs", "--dataset", "hand", "--set", "no_such_key=1", "--out-dir", d.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));
}

#[test]
fn flags_read_from_environment() {
    let d = tempfile::tempdir().unwrap();
    let out = Command::new(BIN)
        .args(["run", "--out-dir", d.path().to_str().unwrap()])
        .env("MANYSIM_APP", "histogram")
        .env("MANYSIM_DATASET", "hand")
        .env("MANYSIM_SET", GRID)
        .env("MANYSIM_VERBOSITY", "1")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let log = fs::read_to_string(d.path().join("run.log")).unwrap();
    assert!(log.starts_with("RUN app=histogram dataset=hand grid=4x4"));
    assert!(log.lines().any(|l| l.starts_with("FRAMES ")));
}
