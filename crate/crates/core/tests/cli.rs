use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_metastable"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(sub: &str, config: &Path, out: &Path, threads: Option<usize>) -> (i32, String) {
    let mut cmd = bin();
    cmd.arg(sub)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out);
    if let Some(t) = threads {
        cmd.arg("--threads").arg(t.to_string());
    }
    let output = cmd.output().unwrap();
    (
        output.status.code().unwrap(),
        String::from_utf8_lossy(&output.stderr).into_owned(),
    )
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, body).unwrap();
    path
}

const SMALL_SWEEP: &str = r#"
[driving]
kind = "rotation"
arcs = [{ start = 0.0, values = [1.0, 0.0] }, { start = 0.6, values = [0.0, 1.0] }]

[sweep]
eps_list = [0.1, 0.05, 0.0]
grid = { min = 320, factor = 16.0 }
fibers = [0, 1000]
"#;

#[test]
fn markov_is_deterministic_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("chain3.toml");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run("markov", &cfg, &a, Some(1)).0, 0);
    assert_eq!(run("markov", &cfg, &b, Some(4)).0, 0);
    let first = fs::read(a.join("markov.csv")).unwrap();
    assert_eq!(first, fs::read(b.join("markov.csv")).unwrap());

    let text = String::from_utf8(first).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "epsilon,fiber,n,col,max_dist_to_v0");
    assert!(lines[lines.len() - 2].starts_with("summary,pass,"));
    assert!(lines[lines.len() - 1].starts_with("# config_sha256="));
    assert_eq!(lines.len(), 1 + 10 * 3 + 2);
}

#[test]
fn ly_and_pi_checks_pass() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("tent.toml");
    let (code, err) = run("ly-check", &cfg, dir.path(), None);
    assert_eq!(code, 0, "{err}");
    let (code, err) = run("pi-check", &cfg, dir.path(), None);
    assert_eq!(code, 0, "{err}");
    let pi = fs::read_to_string(dir.path().join("pi_check.csv")).unwrap();
    assert!(
        pi.starts_with("chain,epsilon,varying,closed_form_gap,pi_series,pi_recursion,gap,terms\n")
    );
    assert_eq!(pi.lines().count(), 1 + 100 + 2);
    let ly = fs::read_to_string(dir.path().join("ly_check.csv")).unwrap();
    assert!(ly.contains("summary,pass,") && ly.contains(",violations=0,"));
}

#[test]
fn sweep_commands_share_the_schema() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_SWEEP);
    let (code, err) = run("lambda2", &cfg, dir.path(), None);
    assert_eq!(code, 0, "{err}");
    let text = fs::read_to_string(dir.path().join("lambda2.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "epsilon,fiber,grid_n,horizon,l1_phi_dist,l1_psi_dist,lambda2,flags"
    );
    assert_eq!(text.lines().count(), 1 + 3 * 2 + 1);
    assert!(text.lines().nth(1).unwrap().ends_with(",ok"));
}

#[test]
fn unmet_threshold_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_SWEEP);
    let (code, err) = run("phi-converge", &cfg, dir.path(), None);
    assert_eq!(code, 1);
    assert!(err.contains("final φ distance"), "{err}");
    assert!(dir.path().join("phi_converge.csv").exists());

    let loose = format!("{SMALL_SWEEP}phi_tolerance = 0.2\npsi_tolerance = 0.3\n");
    let cfg = write_config(dir.path(), &loose);
    assert_eq!(run("phi-converge", &cfg, dir.path(), None).0, 0);
    assert_eq!(run("psi-converge", &cfg, dir.path(), None).0, 0);
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = SMALL_SWEEP.replace("[0.1, 0.05, 0.0]", "[0.05, 0.1]");
    let cfg = write_config(dir.path(), &bad);
    let (code, err) = run("phi-converge", &cfg, dir.path(), None);
    assert_eq!(code, 2);
    assert!(err.contains("strictly decreasing"), "{err}");

    let missing = dir.path().join("nope.toml");
    assert_eq!(run("markov", &missing, dir.path(), None).0, 2);

    let cfg = write_config(dir.path(), "[driving]\nkind = \"rotation\"\narcs = 3\n");
    let (code, err) = run("markov", &cfg, dir.path(), None);
    assert_eq!(code, 2);
    assert!(err.contains("line"), "{err}");
}
