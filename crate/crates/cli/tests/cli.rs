use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use skillscope_cli::manifest::{RunManifest, Stage, LOCK_FILE};

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/corpus10.csv")
}

fn skillscope(run_dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_skillscope"))
        .arg("--run-dir")
        .arg(run_dir)
        .args(args)
        .env_remove("SKILLSCOPE_RUN_DIR")
        .output()
        .expect("binary runs")
}

fn ok(run_dir: &Path, args: &[&str]) -> String {
    let out = skillscope(run_dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn full_pipeline(run_dir: &Path) {
    let input = fixture();
    ok(run_dir, &["--seed", "7", "ingest", "--input", input.to_str().unwrap()]);
    ok(run_dir, &["preprocess"]);
    ok(run_dir, &["fit", "--k", "2"]);
    ok(run_dir, &["scan", "--kmin", "2", "--kmax", "5"]);
    ok(run_dir, &["topics", "--top", "5"]);
    ok(run_dir, &["profile", "--group-by", "institution"]);
}

fn artifacts(run_dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let manifest = RunManifest::load(run_dir).unwrap().unwrap();
    let mut files = BTreeMap::new();
    for stage in Stage::ALL {
        for path in skillscope_cli::stage_artifacts(run_dir, &manifest, stage) {
            let rel = path.strip_prefix(run_dir).unwrap().display().to_string();
            files.insert(rel, fs::read(&path).unwrap());
        }
    }
    files
}

#[test]
fn full_pipeline_records_six_stages() {
    let dir = tempfile::tempdir().unwrap();
    full_pipeline(dir.path());
    let manifest = RunManifest::load(dir.path()).unwrap().unwrap();
    assert_eq!(manifest.seed, 7);
    assert_eq!(manifest.stages.len(), 6);
    assert!(manifest.stages.values().all(|r| r.completed_unix_ms > 0));
    for stage in Stage::ALL {
        manifest.check_current(dir.path(), stage).unwrap();
    }
    assert!(!dir.path().join(LOCK_FILE).exists());

    let csv = fs::read_to_string(dir.path().join("profile/profiles.csv")).unwrap();
    assert!(csv.starts_with("# "));
    assert!(csv.contains("institution,topic,share"));
    let svg = fs::read_to_string(dir.path().join("profile/profiles.svg")).unwrap();
    assert!(svg.contains("<svg"));
}

#[test]
fn report_numbers_come_from_stage_files() {
    let dir = tempfile::tempdir().unwrap();
    full_pipeline(dir.path());
    let report = ok(dir.path(), &["report"]);
    assert!(report.contains("model: ctm with K = 2"), "{report}");
    assert!(report.contains("10 documents, 6 programs, 3 institutions"), "{report}");

    let fit: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("fit/summary.json")).unwrap()).unwrap();
    let elbo = fit["final_elbo"].as_f64().unwrap();
    assert!(report.contains(&format!("final ELBO {elbo}")), "{report}");

    // every profile share printed in the report is the CSV value
    let csv = fs::read_to_string(dir.path().join("profile/profiles.csv")).unwrap();
    let rows: Vec<_> = csv.lines().skip(2).collect();
    assert_eq!(rows.len(), 3 * 2);
    for row in rows {
        let share = row.rsplit(',').next().unwrap();
        assert!(report.contains(share), "{share} missing from report");
    }
    for inst in ["East College", "North University", "South University"] {
        assert!(report.contains(inst));
    }
}

#[test]
fn fit_before_preprocess_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = skillscope(dir.path(), &["fit", "--k", "2"]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("skillscope preprocess"), "{err}");
}

#[test]
fn stale_upstream_asks_for_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let input = fixture();
    ok(dir.path(), &["ingest", "--input", input.to_str().unwrap()]);
    ok(dir.path(), &["preprocess"]);
    ok(dir.path(), &["fit", "--k", "2"]);
    // a filtered re-ingest changes documents.jsonl under preprocess and fit
    ok(
        dir.path(),
        &[
            "ingest",
            "--input",
            input.to_str().unwrap(),
            "--institution",
            "North University",
        ],
    );
    let out = skillscope(dir.path(), &["topics"]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("re-run `skillscope preprocess`"), "{err}");

    // a hand-edited artifact is caught too
    ok(dir.path(), &["preprocess"]);
    fs::write(dir.path().join("preprocess/vocab.tsv"), "term\tdf\n").unwrap();
    let out = skillscope(dir.path(), &["fit", "--k", "2"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn rerunning_topics_does_not_refit() {
    let dir = tempfile::tempdir().unwrap();
    full_pipeline(dir.path());
    let before = RunManifest::load(dir.path()).unwrap().unwrap();
    let model = fs::read(dir.path().join("fit/model.json")).unwrap();
    ok(dir.path(), &["topics", "--top", "5"]);
    let after = RunManifest::load(dir.path()).unwrap().unwrap();
    assert_eq!(before.record(Stage::Fit), after.record(Stage::Fit));
    assert_eq!(fs::read(dir.path().join("fit/model.json")).unwrap(), model);
    assert_eq!(
        before.record(Stage::Topics).unwrap().outputs,
        after.record(Stage::Topics).unwrap().outputs
    );
}

#[test]
fn report_on_empty_dir_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = skillscope(dir.path(), &["report"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(skillscope(dir.path(), &["train"]).status.code(), Some(2));
    assert_eq!(
        skillscope(dir.path(), &["fit", "--model", "pca"]).status.code(),
        Some(2)
    );
    let out = Command::new(env!("CARGO_BIN_EXE_skillscope"))
        .arg("report")
        .env_remove("SKILLSCOPE_RUN_DIR")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_skillscope"))
        .args(["ingest", "--input", fixture().to_str().unwrap()])
        .env("SKILLSCOPE_RUN_DIR", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("ingest/documents.jsonl").exists());
}

#[test]
fn held_lock_blocks_a_second_writer() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join(LOCK_FILE), "1\n").unwrap();
    let out = skillscope(dir.path(), &["ingest", "--input", fixture().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("in use"));
    // the failed run must not remove someone else's lock
    assert!(dir.path().join(LOCK_FILE).exists());
}

#[test]
fn profile_needs_posteriors() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["ingest", "--input", fixture().to_str().unwrap()]);
    ok(dir.path(), &["preprocess"]);
    ok(dir.path(), &["fit", "--model", "lsa", "--k", "2"]);
    ok(dir.path(), &["topics", "--top", "3"]);
    assert_eq!(skillscope(dir.path(), &["profile"]).status.code(), Some(2));
}

#[test]
fn lda_pipeline_and_labels() {
    let dir = tempfile::tempdir().unwrap();
    let labels = dir.path().join("labels.json");
    fs::write(&labels, r#"{"0": "Quantitative", "1": "Communication"}"#).unwrap();
    let run = dir.path().join("run");
    ok(&run, &["ingest", "--input", fixture().to_str().unwrap()]);
    ok(&run, &["preprocess"]);
    ok(&run, &["fit", "--model", "lda", "--k", "2"]);
    ok(&run, &["profile", "--labels", labels.to_str().unwrap()]);
    let tsv = fs::read_to_string(run.join("profile/rankings.tsv")).unwrap();
    assert!(tsv.contains("Quantitative") && tsv.contains("Communication"), "{tsv}");
}

#[test]
fn pipeline_is_bitwise_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    full_pipeline(a.path());
    full_pipeline(b.path());
    let (fa, fb) = (artifacts(a.path()), artifacts(b.path()));
    assert_eq!(fa.len(), fb.len());
    assert!(fa.len() >= 15);
    for (name, bytes) in &fa {
        assert!(fb[name] == *bytes, "{name} differs between runs");
    }
}

#[test]
fn config_file_sets_model_and_scan_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("pipeline.toml");
    fs::write(
        &config,
        "seed = 11\nlsa_weighting = \"tf_idf\"\n\n[model]\nk = 3\nmax_em_iters = 5\n\n[scan]\nk_min = 2\nk_max = 5\n",
    )
    .unwrap();
    let run = dir.path().join("run");
    let cfg = config.to_str().unwrap();
    ok(
        &run,
        &["--config", cfg, "ingest", "--input", fixture().to_str().unwrap()],
    );
    ok(&run, &["--config", cfg, "preprocess"]);
    let fitted = ok(&run, &["--config", cfg, "fit"]);
    assert!(fitted.contains("K = 3"), "{fitted}");
    let scanned = ok(&run, &["--config", cfg, "scan"]);
    assert!(scanned.contains("K = 2..=5"), "{scanned}");
    assert_eq!(RunManifest::load(&run).unwrap().unwrap().seed, 11);
    ok(&run, &["--config", cfg, "fit", "--model", "lsa"]);
    let model = fs::read_to_string(run.join("fit/model.json")).unwrap();
    assert!(model.contains("tf_idf"));

    fs::write(&config, "[model]\nbogus = 1\n").unwrap();
    assert_eq!(skillscope(&run, &["--config", cfg, "fit"]).status.code(), Some(2));
}
