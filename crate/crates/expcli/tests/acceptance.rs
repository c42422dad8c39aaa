//! Acceptance criteria. Runs every criterion in turn and prints one verdict
//! line per criterion, followed by its individual checks and its runtime
//! against the budget. Exits nonzero if any criterion fails.
//!
//! `cargo test -p ire-expcli --test acceptance [-- FILTER]` runs only the
//! criteria whose number or name contains FILTER.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use ire_expcli::verify::{self, Bound, Check};

const SEED: u64 = 1;

type Body = fn() -> anyhow::Result<Vec<Check>>;

const CRITERIA: [(u32, &str, f64, Body); 11] = [
    (1, "toy sharpness monotonicity", 1.0, verify::toy_sharpness),
    (2, "toy divergence", 1.0, verify::toy_divergence),
    (3, "mask correctness", 1.0, || Ok(verify::masks(SEED))),
    (4, "fisher unbiasedness", 60.0, || verify::fisher(SEED)),
    (5, "overhead accounting", 30.0, verify::overhead),
    (6, "average-SAM-IRE drift", 300.0, || {
        verify::drift_average(SEED)
    }),
    (7, "standard-SAM-IRE drift", 600.0, || {
        verify::drift_standard(SEED)
    }),
    (8, "stability under kappa <= 1/rho", 300.0, || {
        verify::stability(SEED)
    }),
    (9, "SDE effective dynamics", 120.0, || verify::sde(SEED)),
    (10, "lemma suite", 60.0, verify::lemmas),
    (11, "infrastructure", 30.0, infrastructure),
];

fn lab(out: &Path, args: &[&str]) -> anyhow::Result<()> {
    let status = Command::new(env!("CARGO_BIN_EXE_ire-lab"))
        .arg("--out")
        .arg(out)
        .args(args)
        .status()?;
    anyhow::ensure!(
        status.success() || status.code() == Some(3),
        "{args:?}: {status}"
    );
    Ok(())
}

fn same_bytes(a: &Path, b: &Path) -> anyhow::Result<f64> {
    let x = std::fs::read(a)?;
    let y = std::fs::read(b)?;
    Ok(f64::from(u8::from(!x.is_empty() && x == y)))
}

fn infrastructure() -> anyhow::Result<Vec<Check>> {
    let mut checks = verify::eigen(SEED)?;
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let run_cfg = configs.join("valley_sam_ire.toml");
    let sweep_cfg = configs.join("softmax_gamma_sweep.toml");
    let dirs = (0..3)
        .map(|_| tempfile::tempdir())
        .collect::<Result<Vec<_>, _>>()?;
    for (d, jobs) in dirs.iter().zip(["1", "1", "3"]) {
        let run = ["--jobs", jobs, "run", "--config", run_cfg.to_str().unwrap()];
        lab(d.path(), &run)?;
        let sweep = [
            "--jobs",
            jobs,
            "sweep",
            "--config",
            sweep_cfg.to_str().unwrap(),
        ];
        lab(d.path(), &sweep)?;
        lab(d.path(), &["--jobs", jobs, "toy"])?;
    }
    for file in [
        "valley_sam_ire.csv",
        "softmax_gamma_sweep.csv",
        "toy_ire_kappa.csv",
    ] {
        let p = |i: usize| dirs[i].path().join(file);
        checks.push(Check::new(
            format!("csv/{file}_identical_across_runs"),
            same_bytes(&p(0), &p(1))?,
            Bound::Equals(1.0),
        ));
        checks.push(Check::new(
            format!("csv/{file}_identical_across_jobs"),
            same_bytes(&p(0), &p(2))?,
            Bound::Equals(1.0),
        ));
    }
    Ok(checks)
}

fn main() -> ExitCode {
    // libtest flags such as --nocapture are accepted and ignored.
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = Vec::new();
    for (id, name, budget, body) in CRITERIA {
        if let Some(f) = &filter {
            if !(id.to_string() == *f || name.contains(f.as_str())) {
                continue;
            }
        }
        let start = Instant::now();
        let result = body();
        let elapsed = start.elapsed().as_secs_f64();
        let (ok, lines) = match result {
            Ok(mut checks) => {
                checks.push(Check::new("runtime_secs", elapsed, Bound::AtMost(budget)));
                (
                    checks.iter().all(|c| c.passed),
                    checks.iter().map(|c| c.to_string()).collect(),
                )
            }
            Err(e) => (false, vec![format!("error: {e:#}")]),
        };
        println!(
            "criterion {id} {name}: {}",
            if ok { "PASS" } else { "FAIL" }
        );
        for l in lines {
            println!("    {l}");
        }
        if !ok {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
