use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn lab(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ire-lab"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("IRE_LAB_OUT")
        .output()
        .expect("binary runs")
}

fn run_config(out: &Path, name: &str, extra: &[&str]) -> Output {
    let cfg = configs().join(name);
    let mut args = vec!["run", "--config", cfg.to_str().unwrap()];
    args.extend(extra);
    lab(out, &args)
}

fn records(path: &Path) -> Vec<Vec<String>> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .unwrap()
        .records()
        .map(|r| r.unwrap().iter().map(String::from).collect())
        .collect()
}

fn column(recs: &[Vec<String>], name: &str) -> usize {
    recs[0].iter().position(|h| h == name).unwrap()
}

#[test]
fn gd_eta_one_converges() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_config(dir.path(), "toy_gd.toml", &[]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let recs = records(&dir.path().join("toy_gd.csv"));
    let last = &recs[recs.len() - 2];
    let v: f64 = last[column(&recs, "theta_1")].parse().unwrap();
    assert!(v.abs() <= 1e-6);
    assert_eq!(recs.last().unwrap()[..2], ["status", "converged"]);
    assert_eq!(recs.len(), 1 + 501 + 1);
}

#[test]
fn divergent_run_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("d.toml");
    std::fs::write(
        &cfg,
        "run.steps = 100\nrun.init = [0.0, 1.0]\nlandscape.kind = \"toy2d\"\noptimizer.kind = \"gd\"\noptimizer.lr = 3.0\n",
    )
    .unwrap();
    let out = lab(dir.path(), &["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let recs = records(&dir.path().join("run.csv"));
    let status = recs.last().unwrap();
    assert_eq!(status[..2], ["status", "diverged"]);
    let at: usize = status[2].parse().unwrap();
    let last_step: usize = recs[recs.len() - 2][0].parse().unwrap();
    assert_eq!(last_step, at - 1);
}

#[test]
fn same_config_twice_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let out = run_config(dir.path(), "softmax_gamma_sweep.toml", &["--seed", "99"]);
        assert_eq!(out.status.code(), Some(0));
    }
    let x = std::fs::read(a.path().join("softmax_gamma_sweep.csv")).unwrap();
    let y = std::fs::read(b.path().join("softmax_gamma_sweep.csv")).unwrap();
    assert!(!x.is_empty());
    assert_eq!(x, y);
}

#[test]
fn seed_flag_changes_stochastic_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_config(a.path(), "softmax_gamma_sweep.toml", &["--seed", "1"]);
    run_config(b.path(), "softmax_gamma_sweep.toml", &["--seed", "2"]);
    let x = std::fs::read(a.path().join("softmax_gamma_sweep.csv")).unwrap();
    let y = std::fs::read(b.path().join("softmax_gamma_sweep.csv")).unwrap();
    assert_ne!(x, y);
}

fn sweep(out: &Path, name: &str, jobs: &str) -> Vec<Vec<String>> {
    let cfg = configs().join(name);
    let o = lab(
        out,
        &["--jobs", jobs, "sweep", "--config", cfg.to_str().unwrap()],
    );
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    records(&out.join(name.replace(".toml", ".csv")))
}

#[test]
fn kappa_sweep_trace_is_non_increasing() {
    let dir = tempfile::tempdir().unwrap();
    let recs = sweep(dir.path(), "toy_kappa_sweep.toml", "1");
    let trace = column(&recs, "final_trace");
    let kappa = column(&recs, "kappa");
    let rows = &recs[1..];
    let ks: Vec<f64> = rows.iter().map(|r| r[kappa].parse().unwrap()).collect();
    assert_eq!(ks, [0.0, 1.0, 5.0, 10.0]);
    let ts: Vec<f64> = rows.iter().map(|r| r[trace].parse().unwrap()).collect();
    assert!(ts.windows(2).all(|w| w[1] <= w[0]), "{ts:?}");
}

#[test]
fn gamma_sweep_has_no_divergence() {
    let dir = tempfile::tempdir().unwrap();
    let recs = sweep(dir.path(), "softmax_gamma_sweep.toml", "1");
    let status = column(&recs, "status");
    assert_eq!(recs.len(), 4);
    assert!(recs[1..]
        .iter()
        .all(|r| r[status] == "completed" || r[status] == "converged"));
}

#[test]
fn sweep_output_does_not_depend_on_jobs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    sweep(a.path(), "softmax_gamma_sweep.toml", "1");
    sweep(b.path(), "softmax_gamma_sweep.toml", "3");
    let x = std::fs::read(a.path().join("softmax_gamma_sweep.csv")).unwrap();
    let y = std::fs::read(b.path().join("softmax_gamma_sweep.csv")).unwrap();
    assert_eq!(x, y);
}

#[test]
fn empty_grid_gives_empty_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("e.toml");
    std::fs::write(
        &cfg,
        "run.steps = 10\nlandscape.kind = \"toy2d\"\noptimizer.kind = \"gd\"\noptimizer.lr = 0.1\n",
    )
    .unwrap();
    let out = lab(dir.path(), &["sweep", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let recs = records(&dir.path().join("sweep.csv"));
    assert_eq!(recs.len(), 1);
    assert_eq!(recs[0][0], "cell");
}

#[test]
fn failing_cells_are_recorded_and_the_sweep_continues() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("f.toml");
    std::fs::write(
        &cfg,
        "run.steps = 10\nlandscape.kind = \"toy2d\"\noptimizer.kind = \"gd\"\noptimizer.lr = 0.1\n\
         ire.kappa = 1.0\nire.gamma = 0.5\nire.estimator = \"exact_diag\"\nsweep.gamma = [0.4, 0.5]\n",
    )
    .unwrap();
    let out = lab(dir.path(), &["sweep", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let recs = records(&dir.path().join("sweep.csv"));
    let status = column(&recs, "status");
    let error = column(&recs, "error");
    assert_eq!(recs[1][status], "error");
    assert!(
        recs[1][error].contains("degenerate") || recs[1][error].contains("mask"),
        "{:?}",
        recs[1]
    );
    assert_eq!(recs[2][status], "completed");
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "run.steps = 10\nlandscape.kind = \"toy2d\"\noptimizer.kind = \"gd\"\noptimizer.lrr = 0.1\n").unwrap();
    let out = lab(dir.path(), &["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("line 4") && err.contains("lrr") && err.contains("bad.toml"),
        "{err}"
    );
}

#[test]
fn verify_reports_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = lab(dir.path(), &["verify", "masks"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("masks/failures\t0\t==0\tPASS"), "{text}");
    assert!(text.lines().skip(1).all(|l| l.split('\t').count() == 4));

    let out = lab(dir.path(), &["verify", "nonsense"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("drift-standard") && err.contains("lemmas"),
        "{err}"
    );
}

#[test]
fn toy_writes_three_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = lab(dir.path(), &["toy", "--kappa", "0", "--kappa", "1"]);
    assert_eq!(out.status.code(), Some(0));
    for f in ["toy_gd_eta1.csv", "toy_gd_eta2.csv", "toy_ire_kappa.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let recs = records(&dir.path().join("toy_ire_kappa.csv"));
    assert_eq!(recs[0][0], "kappa");
    // Two runs of 2000 steps, each with its start row and status record.
    assert_eq!(recs.len(), 1 + 2 * (2001 + 1));
}

#[test]
fn output_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("toy_gd.toml");
    let out = Command::new(env!("CARGO_BIN_EXE_ire-lab"))
        .args(["run", "--config", cfg.to_str().unwrap()])
        .env("IRE_LAB_OUT", dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(dir.path().join("toy_gd.csv").exists());
}
