use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "\
boundary.kind = plane
boundary.extent = 2
boundary.spacing = 1/256
grid.lower = -1, 0
grid.upper = 1, 1
grid.h = 1/16, 1/32
solve.mode = green
solve.pole = 0, 0.5
functional.tags = hess_u, grad_sq_grad_u
functional.ks = 1
functional.policy = solved
bwgl.k_max = 2
";

fn urlab(args: &[&str], config: &str, dir: &Path) -> Output {
    let cfg = dir.join("exp.cfg");
    std::fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_urlab"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap()
}

fn bundle(dir: &Path) -> std::path::PathBuf {
    let mut entries: Vec<_> = std::fs::read_dir(dir.join("out")).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(entries.len(), 1);
    entries.pop().unwrap()
}

fn csvs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn gen_boundary_writes_the_sample() {
    let tmp = tempfile::tempdir().unwrap();
    let out = urlab(&["gen-boundary"], SMALL, tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let b = bundle(tmp.path());
    let text = std::fs::read_to_string(b.join("boundary.csv")).unwrap();
    assert!(text.starts_with("x,y,weight\n"));
    assert_eq!(text.lines().count(), 1 + 1025);
    assert!(b.join("manifest.json").exists());
}

#[test]
fn unknown_tag_exits_with_validation_code() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = SMALL.replace("hess_u, grad_sq_grad_u", "hess_u, no_such_tag");
    let out = urlab(&["functional"], &cfg, tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_tag"));
}

#[test]
fn solver_failure_exits_with_numerical_code_and_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let out = urlab(&["solve"], &format!("{SMALL}solve.max_iter = 2\n"), tmp.path());
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("`solve`") && err.contains("convergence"), "{err}");
}

#[test]
fn rerun_reproduces_every_csv() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = urlab(&["report"], SMALL, a.path());
    let rb = urlab(&["report", "--threads", "1"], SMALL, b.path());
    assert!(ra.status.success() && rb.status.success());
    let (ba, bb) = (bundle(a.path()), bundle(b.path()));
    assert_eq!(ba.file_name(), bb.file_name());
    let (ca, cb) = (csvs(&ba), csvs(&bb));
    assert!(ca.len() >= 8);
    assert_eq!(ca, cb);
    assert!(ba.join("slice.svg").exists());
}

#[test]
fn spacing_flag_replaces_the_ladder() {
    let tmp = tempfile::tempdir().unwrap();
    let out = urlab(&["functional", "--h", "0.0625"], SMALL, tmp.path());
    assert!(out.status.success());
    let b = bundle(tmp.path());
    assert!(b.join("carleson_hess_u_h0.csv").exists());
    assert!(!b.join("carleson_hess_u_h1.csv").exists());
    assert!(!b.join("trend.csv").exists());
    let bad = urlab(&["functional", "--h", "-1"], SMALL, tmp.path());
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn dichotomy_reports_a_verdict() {
    let tmp = tempfile::tempdir().unwrap();
    let out = urlab(&["dichotomy"], SMALL, tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(bundle(tmp.path()).join("dichotomy.csv")).unwrap();
    assert!(text.starts_with("h,sup,ratio_to_previous\n"));
    assert!(text.lines().last().unwrap().starts_with("verdict,"));
}

#[test]
fn missing_config_is_a_validation_error() {
    let out = Command::new(env!("CARGO_BIN_EXE_urlab"))
        .args(["bwgl", "--config", "/nonexistent/urlab.cfg"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
