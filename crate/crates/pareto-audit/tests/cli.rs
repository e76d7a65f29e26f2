//! Black-box checks of the binary: subcommand plumbing, provenance chaining,
//! stale-input refusal, and exit codes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_pareto-audit")
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn pareto-audit")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn fails(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn simulate_writes_expected_files_and_rejects_bad_constants() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &[
            "simulate",
            "--c",
            "0.2",
            "--c-prime",
            "0.5",
            "--c-double-prime",
            "0.8",
            "--sweep-c",
            "0.05,0.1,0.2,0.4",
            "--out-dir",
            "sim",
        ],
    );
    let mut files: Vec<String> = std::fs::read_dir(dir.path().join("sim"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    files.sort();
    assert_eq!(files.len(), 8, "{files:?}");

    // Invalid c'' must error before creating anything.
    let err = fails(
        dir.path(),
        &[
            "simulate",
            "--c",
            "0.2",
            "--c-prime",
            "0.5",
            "--c-double-prime",
            "0",
            "--out-dir",
            "bad",
        ],
    );
    assert!(err.contains("invalid configuration"), "{err}");
    assert!(!dir.path().join("bad").exists());
}

#[test]
fn pipeline_chains_digests_and_refuses_stale_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "gen", "--n-samples", "1500", "--pi", "0.2", "--zeta", "0.5", "--out", "data.csv",
        ],
    );
    let sweep_args = [
        "sweep",
        "--data",
        "data.csv",
        "--out",
        "points.csv",
        "--hidden",
        "16,16",
        "--lambdas",
        "0.0,0.2,0.5,1.0,2.0,5.0,10.0,50.0",
        "--seeds",
        "0",
        "--epochs",
        "3",
    ];
    let first = ok(d, &sweep_args);
    assert!(first.contains("8 runs executed"), "{first}");
    let resumed = ok(d, &sweep_args);
    assert!(resumed.contains("8 resumed"), "{resumed}");

    ok(
        d,
        &[
            "frontier", "--points", "points.csv", "--out", "front.csv", "--kind", "envelope",
            "--average-seeds",
        ],
    );
    ok(
        d,
        &[
            "fit", "--frontier", "front.csv", "--points", "points.csv", "--mode", "lower_bound",
            "--out", "fit.txt",
        ],
    );
    ok(
        d,
        &[
            "extrapolate", "--fit", "fit.txt", "--n-plus", "28960", "--d-plus", "975",
            "--out-prefix", "big",
        ],
    );
    let summary = ok(
        d,
        &[
            "audit", "--fit", "fit.txt", "--loss", "0.7", "--delta", "0.2", "--n-plus", "28960",
            "--d-plus", "975", "--label", "cli", "--out", "audit.txt",
        ],
    );
    assert_eq!(summary.lines().count(), 1, "{summary}");
    assert!(d.join("audit.txt").exists());

    // Regenerating the dataset invalidates everything downstream.
    ok(
        d,
        &[
            "gen", "--n-samples", "1500", "--pi", "0.2", "--zeta", "0.5", "--data-seed", "9",
            "--out", "data.csv",
        ],
    );
    let err = fails(d, &sweep_args);
    assert!(err.contains("stale input"), "{err}");
    let mut forced: Vec<&str> = sweep_args.to_vec();
    forced.push("--force");
    ok(d, &forced);

    // The frontier's recorded points digest no longer matches either.
    let err = fails(
        d,
        &[
            "fit", "--frontier", "front.csv", "--points", "points.csv", "--out", "fit2.txt",
        ],
    );
    assert!(err.contains("stale input"), "{err}");
}

#[test]
fn verify_passes_and_reports_each_suite() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["verify"]);
    assert_eq!(out.matches("PASS").count(), 5, "{out}");
    assert_eq!(out.matches("FAIL").count(), 0, "{out}");
}

#[test]
fn gen_accepts_a_config_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("run.toml"),
        "[dgp]\nn_samples = 1200\nx_dim = 10\npi = 0.3\nzeta = 0.4\ng_seed = 2\ndata_seed = 2\nmode = \"projected\"\n",
    )
    .unwrap();
    ok(
        dir.path(),
        &["gen", "--config", "run.toml", "--out", "data.csv"],
    );
    let body = std::fs::read_to_string(dir.path().join("data.csv")).unwrap();
    assert_eq!(body.lines().filter(|l| !l.starts_with('#')).count(), 1201);

    // Unknown keys in the config are rejected.
    std::fs::write(
        dir.path().join("bad.toml"),
        "[dgp]\nn_samples = 10\npi = 0.3\nzeta = 0.4\nbogus = 1\n",
    )
    .unwrap();
    let err = fails(
        dir.path(),
        &["gen", "--config", "bad.toml", "--out", "x.csv"],
    );
    assert!(err.contains("bogus"), "{err}");
}

#[test]
fn outputs_are_byte_identical_across_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for tag in ["a", "b"] {
        ok(
            d,
            &[
                "simulate", "--c", "0.1", "--c-prime", "0.6", "--c-double-prime", "0.7",
                "--out-dir", tag,
            ],
        );
    }
    let read = |tag: &str| -> Vec<u8> {
        let p: PathBuf = d.join(tag).join("shape_c0p1_exact.csv");
        std::fs::read(p).unwrap()
    };
    assert_eq!(read("a"), read("b"));
}
