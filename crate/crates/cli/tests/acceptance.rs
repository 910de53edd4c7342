//! End-to-end checks of the `drcf` binary.
//!
//! The determinism test prints a verdict line in the same format as the
//! estimator acceptance suite; the remaining tests pin the exit-code
//! contract (2 config, 3 data, 0 success) with real subprocess runs.
//!
//! Run with: cargo test -p drcf-cli --test acceptance -- --nocapture

use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

/// Small but non-trivial run: three features, four groups, enough units
/// that every fold trains a real model.
const CONFIG: &str = "\
[synthetic]
n_units = 500
n_features = 3
n_groups = 4
noise_sd = 0.03
seed = 11

[synthetic.effect]
kind = \"group_structured\"
effects = [-0.04, -0.02, 0.0, 0.02]

[crossfit]
k_folds = 3
seed = 11
min_group_size = 10

[crossfit.learner]
kind = \"gbt\"
n_trees = 30
max_depth = 3
min_leaf = 10

[report]
label_a = \"first run\"
label_b = \"second run\"
";

const FIT_FILES: [&str; 5] = [
    "scores.csv",
    "estimates.json",
    "blp.json",
    "manifest.json",
    "run_config.json",
];

const COMPARE_FILES: [&str; 5] = [
    "metrics.json",
    "rank_table.csv",
    "cate_curve.csv",
    "lift_curve.csv",
    "run_config.json",
];

fn drcf() -> Command {
    Command::new(env!("CARGO_BIN_EXE_drcf"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn drcf");
    assert!(
        out.status.success(),
        "command {:?} failed\nstdout:\n{}\nstderr:\n{}",
        cmd,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr),
    );
    out
}

fn run_err(cmd: &mut Command) -> (i32, String) {
    let out = cmd.output().expect("spawn drcf");
    let code = out.status.code().expect("process terminated by signal");
    assert_ne!(code, 0, "command {cmd:?} unexpectedly succeeded");
    (code, String::from_utf8_lossy(&out.stderr).into_owned())
}

fn sha256_file(path: &Path) -> String {
    let bytes = std::fs::read(path)
        .unwrap_or_else(|e| panic!("cannot read {}: {e}", path.display()));
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    hex::encode(hasher.finalize())
}

/// Compares `files` between two directories, recording any divergence.
fn compare_dirs(
    dir_a: &Path,
    dir_b: &Path,
    files: &[&str],
    checked: &mut usize,
    problems: &mut Vec<String>,
) {
    for name in files {
        *checked += 1;
        let (ha, hb) = (sha256_file(&dir_a.join(name)), sha256_file(&dir_b.join(name)));
        if ha != hb {
            problems.push(format!(
                "{name} differs between {} and {}",
                dir_a.display(),
                dir_b.display()
            ));
        }
    }
}

fn verdict(tag: &str, pass: bool, detail: &str) {
    println!(
        "acceptance {tag}: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "{tag} failed: {detail}");
}

/// Same config and seeds must give byte-identical artifacts, including
/// across worker-thread counts: generation twice, fitting three times
/// (serial, rerun, two threads), comparison twice, inspection twice.
#[test]
fn ac10_byte_identical_artifacts_across_reruns_and_threads() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("run.toml");
    std::fs::write(&config, CONFIG).unwrap();
    let path_of = |name: &str| tmp.path().join(name);

    let mut checked = 0usize;
    let mut problems: Vec<String> = Vec::new();

    let gen_a = path_of("gen_a");
    let gen_b = path_of("gen_b");
    for dir in [&gen_a, &gen_b] {
        run_ok(
            drcf()
                .arg("generate")
                .arg("--config")
                .arg(&config)
                .arg("--out")
                .arg(dir)
                .arg("--jsonl"),
        );
    }
    compare_dirs(
        &gen_a,
        &gen_b,
        &["dataset.csv", "dataset.jsonl", "truth.csv", "run_config.json"],
        &mut checked,
        &mut problems,
    );

    let data = gen_a.join("dataset.csv");
    let fit_serial = path_of("fit_serial");
    let fit_rerun = path_of("fit_rerun");
    let fit_two_threads = path_of("fit_two_threads");
    for (dir, threads) in [
        (&fit_serial, "1"),
        (&fit_rerun, "1"),
        (&fit_two_threads, "2"),
    ] {
        run_ok(
            drcf()
                .arg("fit")
                .arg("--config")
                .arg(&config)
                .arg("--data")
                .arg(&data)
                .arg("--out")
                .arg(dir)
                .arg("--threads")
                .arg(threads),
        );
    }
    compare_dirs(&fit_serial, &fit_rerun, &FIT_FILES, &mut checked, &mut problems);
    compare_dirs(
        &fit_serial,
        &fit_two_threads,
        &FIT_FILES,
        &mut checked,
        &mut problems,
    );

    let cmp_a = path_of("cmp_a");
    let cmp_b = path_of("cmp_b");
    for dir in [&cmp_a, &cmp_b] {
        run_ok(
            drcf()
                .arg("report")
                .arg("compare")
                .arg("--config")
                .arg(&config)
                .arg("--a")
                .arg(&fit_serial)
                .arg("--b")
                .arg(&fit_two_threads)
                .arg("--out")
                .arg(dir),
        );
    }
    compare_dirs(&cmp_a, &cmp_b, &COMPARE_FILES, &mut checked, &mut problems);

    let inspect = |limit: &str| {
        let out = run_ok(
            drcf()
                .arg("inspect")
                .arg("scores")
                .arg("--run")
                .arg(&fit_serial)
                .arg("--limit")
                .arg(limit),
        );
        String::from_utf8(out.stdout).expect("inspect output is utf-8")
    };
    let (first, second) = (inspect("8"), inspect("8"));
    assert!(first.contains("unit_id") && first.contains("dr_label"));
    checked += 1;
    if first != second {
        problems.push("inspect scores output differs between runs".into());
    }

    verdict(
        "AC10",
        problems.is_empty() && checked == 20,
        &format!(
            "{checked} artifacts byte-identical across reruns and 1 vs 2 worker threads{}",
            if problems.is_empty() {
                String::new()
            } else {
                format!("; problems: {}", problems.join("; "))
            }
        ),
    );
}

#[test]
fn config_mistakes_exit_with_code_2() {
    let tmp = tempfile::tempdir().unwrap();

    // Misspelled or unknown keys must be rejected, not silently ignored.
    let unknown = tmp.path().join("unknown.toml");
    std::fs::write(&unknown, "nonsense = true\n").unwrap();
    let (code, stderr) = run_err(
        drcf()
            .arg("fit")
            .arg("--config")
            .arg(&unknown)
            .arg("--data")
            .arg(tmp.path().join("whatever.csv"))
            .arg("--out")
            .arg(tmp.path().join("out")),
    );
    assert_eq!(code, 2, "unknown key: {stderr}");
    assert!(stderr.contains("nonsense"), "stderr names the bad key: {stderr}");

    // Invalid parameter values fail before the data file is opened, so a
    // bad config is diagnosed as such even when the data is also missing.
    let bad_k = tmp.path().join("bad_k.toml");
    std::fs::write(&bad_k, CONFIG.replace("k_folds = 3", "k_folds = 1")).unwrap();
    let (code, stderr) = run_err(
        drcf()
            .arg("fit")
            .arg("--config")
            .arg(&bad_k)
            .arg("--data")
            .arg(tmp.path().join("absent.csv"))
            .arg("--out")
            .arg(tmp.path().join("out")),
    );
    assert_eq!(code, 2, "k_folds = 1: {stderr}");
    assert!(stderr.contains("k_folds must be >= 2"), "stderr: {stderr}");

    // No output directory from either the flag or the config file.
    let minimal = tmp.path().join("minimal.toml");
    std::fs::write(&minimal, CONFIG).unwrap();
    let (code, stderr) = run_err(
        drcf()
            .arg("generate")
            .arg("--config")
            .arg(&minimal),
    );
    assert_eq!(code, 2, "missing --out: {stderr}");
    assert!(stderr.contains("no output directory"), "stderr: {stderr}");
}

#[test]
fn data_problems_exit_with_code_3() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("run.toml");
    std::fs::write(&config, CONFIG).unwrap();

    let (code, stderr) = run_err(
        drcf()
            .arg("fit")
            .arg("--config")
            .arg(&config)
            .arg("--data")
            .arg(tmp.path().join("missing.csv"))
            .arg("--out")
            .arg(tmp.path().join("out")),
    );
    assert_eq!(code, 3, "missing data file: {stderr}");
    assert!(stderr.contains("does not exist"), "stderr: {stderr}");

    // A schema that names a column the file lacks is a data error too.
    let gen = tmp.path().join("gen");
    run_ok(
        drcf()
            .arg("generate")
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(&gen),
    );
    let with_schema = tmp.path().join("with_schema.toml");
    let schema_block = "\n[schema]\nid_col = \"id\"\noutcome_col = \"y\"\n\
                        treatment_col = \"t\"\ngroup_col = \"grp\"\n\
                        text_col = \"story\"\nfeature_cols = [\"z0\", \"z1\", \"z2\"]\n";
    std::fs::write(&with_schema, format!("{CONFIG}{schema_block}")).unwrap();
    let (code, stderr) = run_err(
        drcf()
            .arg("fit")
            .arg("--config")
            .arg(&with_schema)
            .arg("--data")
            .arg(gen.join("dataset.csv"))
            .arg("--out")
            .arg(tmp.path().join("out")),
    );
    assert_eq!(code, 3, "missing text column: {stderr}");
    assert!(stderr.contains("story"), "stderr names the column: {stderr}");

    // Inspecting a directory that holds no run artifacts.
    let (code, _) = run_err(
        drcf()
            .arg("inspect")
            .arg("scores")
            .arg("--run")
            .arg(tmp.path().join("no_such_run")),
    );
    assert_eq!(code, 3, "missing run directory");
}
