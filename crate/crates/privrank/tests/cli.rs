//! End-to-end CLI tests: calibrate -> run -> eval, exit codes, and
//! idempotence notices, driving the real binary.

use std::path::Path;
use std::process::Output;

fn privrank(args: &[&str]) -> Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_privrank"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Parse a rendered percentage cell ("83.4%" or "n/a") back to a rate.
fn percent(cell: &str) -> Option<f64> {
    cell.strip_suffix('%').map(|v| v.parse::<f64>().unwrap() / 100.0)
}

fn calibrate_with(dir: &Path, docs: &str, privileged: &str, targets: [&str; 3]) {
    let out = privrank(&[
        "calibrate",
        "--docs", docs,
        "--privileged", privileged,
        "--precision", targets[0],
        "--recall", targets[1],
        "--inconsistency", targets[2],
        "--seed", "7",
        "--out-dir", dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "calibrate failed: {}", stderr(&out));
}

/// Paper-scale corpus with the headline targets.
fn calibrate_into(dir: &Path, docs: &str) {
    calibrate_with(dir, docs, "402", ["0.834", "0.575", "0.042"]);
}

/// Desk-size corpus; targets sit on the integer grid of a small doc count.
fn calibrate_small(dir: &Path, docs: &str, privileged: &str) {
    calibrate_with(dir, docs, privileged, ["0.8", "0.6", "0.0625"]);
}

#[test]
fn calibrate_run_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    calibrate_into(root, "1206");

    let corpus = root.join("corpus.jsonl");
    let profile = root.join("profile.jsonl");
    let report = root.join("calibration_report.md");
    assert!(corpus.exists() && profile.exists() && report.exists());
    let lines = std::fs::read_to_string(&corpus).unwrap().lines().count();
    assert_eq!(lines, 1206);
    assert!(std::fs::read_to_string(&report).unwrap().contains("Pool arithmetic"));

    let store = root.join("store.jsonl");
    let run_args = [
        "run",
        "--corpus", corpus.to_str().unwrap(),
        "--store", store.to_str().unwrap(),
        "--provider", "sim",
        "--sim-profile", profile.to_str().unwrap(),
        "--seed", "7",
        "--temperatures", "0",
        "--top-ps", "0.9",
        "--trials", "5",
    ];
    let out = privrank(&run_args);
    assert_eq!(out.status.code(), Some(0), "run failed: {}", stderr(&out));
    assert!(stdout(&out).contains("completed 6030/6030"), "{}", stdout(&out));

    // Idempotent re-run.
    let out = privrank(&run_args);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("0 new submissions"), "{}", stdout(&out));

    // Sweep tables.
    let eval_dir = root.join("out");
    let out = privrank(&[
        "eval",
        "--store", store.to_str().unwrap(),
        "--corpus", corpus.to_str().unwrap(),
        "--mode", "sweep",
        "--out-dir", eval_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "eval failed: {}", stderr(&out));
    let sweep_csv = std::fs::read_to_string(eval_dir.join("sweep_t0_p0.9.csv")).unwrap();
    let rows: Vec<&str> = sweep_csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 11, "header plus 10 range rows:\n{sweep_csv}");
    assert!(rows[0].starts_with("Score Range,Precision,Recall"));
    assert!(rows[1].starts_with("0.90-1.00,"));
    assert!(rows[10].starts_with("0.00-0.10,"));
    assert!(rows[10].ends_with("100.0%"), "bottom row recall must be 100%: {}", rows[10]);
    let sweep_md = std::fs::read_to_string(eval_dir.join("sweep_t0_p0.9.md")).unwrap();
    // Identical rounded values across renderings.
    for row in &rows[1..] {
        let fields: Vec<&str> = row.split(',').collect();
        assert!(sweep_md.contains(fields[1]), "md missing {}", fields[1]);
        assert!(sweep_md.contains(fields[2]), "md missing {}", fields[2]);
    }

    // The files written by calibrate, round-tripped through run and eval,
    // reproduce the calibration targets at the table surface.
    let bottom: Vec<&str> = rows[10].split(',').collect();
    let bottom_precision = percent(bottom[1]).unwrap();
    assert!(
        (bottom_precision - 402.0 / 1206.0).abs() <= 0.005,
        "t=0 precision {bottom_precision} should sit at prevalence"
    );
    let low: Vec<&str> = rows[9].split(',').collect(); // 0.10-0.20 range row
    let low_precision = percent(low[1]).unwrap();
    let low_recall = percent(low[2]).unwrap();

    // Settings and variability tables.
    let out = privrank(&[
        "eval",
        "--store", store.to_str().unwrap(),
        "--corpus", corpus.to_str().unwrap(),
        "--mode", "settings",
        "--out-dir", eval_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let settings_csv = std::fs::read_to_string(eval_dir.join("settings.csv")).unwrap();
    assert!(settings_csv.contains("Temperature,Precision,Recall"));
    let data_row = settings_csv
        .lines()
        .find(|l| l.starts_with("0,"))
        .expect("temperature-0 row");
    let fields: Vec<&str> = data_row.split(',').collect();
    let single_precision = percent(fields[1]).unwrap();
    let single_recall = percent(fields[2]).unwrap();
    assert!(
        (single_precision - 0.834).abs() <= 0.02,
        "single-trial averaged precision {single_precision}"
    );
    assert!(
        (single_recall - 0.575).abs() <= 0.02,
        "single-trial averaged recall {single_recall}"
    );
    let gain = low_recall - single_recall;
    assert!(
        (0.015..=0.065).contains(&gain),
        "ensemble recall gain {gain} out of band (display rounding widens the library gate)"
    );
    assert!(
        single_precision - low_precision <= 0.035,
        "ensemble precision drop {} too large",
        single_precision - low_precision
    );

    let out = privrank(&[
        "eval",
        "--store", store.to_str().unwrap(),
        "--corpus", corpus.to_str().unwrap(),
        "--mode", "variability",
        "--out-dir", eval_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let var_csv = std::fs::read_to_string(eval_dir.join("variability.csv")).unwrap();
    assert!(var_csv.contains("Counts for Docs with different classifications"));
}

#[test]
fn missing_corpus_exits_2_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = privrank(&[
        "run",
        "--corpus", "/nonexistent/corpus.jsonl",
        "--store", dir.path().join("s.jsonl").to_str().unwrap(),
        "--provider", "sim",
        "--sim-profile", "/nonexistent/profile.jsonl",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("/nonexistent/corpus.jsonl"));
}

#[test]
fn eval_on_incomplete_store_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    calibrate_small(root, "60", "20");

    let corpus = root.join("corpus.jsonl");
    let profile = root.join("profile.jsonl");
    let store = root.join("store.jsonl");
    let out = privrank(&[
        "run",
        "--corpus", corpus.to_str().unwrap(),
        "--store", store.to_str().unwrap(),
        "--provider", "sim",
        "--sim-profile", profile.to_str().unwrap(),
        "--seed", "7",
        "--temperatures", "0",
        "--top-ps", "0.9",
        "--trials", "5",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    // Drop the tail of the store to fake an interrupt.
    let content = std::fs::read_to_string(&store).unwrap();
    let kept: String = content
        .lines()
        .take(200)
        .map(|l| format!("{l}\n"))
        .collect();
    std::fs::write(&store, kept).unwrap();

    let out = privrank(&[
        "eval",
        "--store", store.to_str().unwrap(),
        "--corpus", corpus.to_str().unwrap(),
        "--mode", "sweep",
        "--out-dir", root.join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
    assert!(stderr(&out).contains("missing"), "{}", stderr(&out));
}

#[test]
fn infeasible_calibration_exits_5() {
    let dir = tempfile::tempdir().unwrap();
    let out = privrank(&[
        "calibrate",
        "--docs", "1203",
        "--privileged", "402",
        "--precision", "0.834",
        "--recall", "1.1",
        "--inconsistency", "0.042",
        "--out-dir", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(5));
    assert!(stderr(&out).contains("recall"));
}

#[test]
fn equal_seeds_produce_byte_identical_stores_and_eval_files() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    calibrate_small(root, "120", "40");
    let corpus = root.join("corpus.jsonl");
    let profile = root.join("profile.jsonl");

    for name in ["a", "b"] {
        let out = privrank(&[
            "run",
            "--corpus", corpus.to_str().unwrap(),
            "--store", root.join(format!("store_{name}.jsonl")).to_str().unwrap(),
            "--provider", "sim",
            "--sim-profile", profile.to_str().unwrap(),
            "--seed", "99",
            "--temperatures", "0,1",
            "--top-ps", "0.9",
            "--trials", "3",
            "--max-in-flight", if name == "a" { "1" } else { "32" },
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        let out = privrank(&[
            "eval",
            "--store", root.join(format!("store_{name}.jsonl")).to_str().unwrap(),
            "--corpus", corpus.to_str().unwrap(),
            "--mode", "sweep",
            "--out-dir", root.join(format!("out_{name}")).to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    }

    let store_a = std::fs::read(root.join("store_a.jsonl")).unwrap();
    let store_b = std::fs::read(root.join("store_b.jsonl")).unwrap();
    assert_eq!(store_a, store_b, "stores differ across in-flight settings");

    for file in ["sweep_t0_p0.9.csv", "sweep_t1_p0.9.csv", "sweep_combined.csv"] {
        let a = std::fs::read(root.join("out_a").join(file)).unwrap();
        let b = std::fs::read(root.join("out_b").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs");
    }
}

#[test]
fn config_file_drives_run_with_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    calibrate_small(root, "60", "20");

    let cfg = root.join("run.conf");
    std::fs::write(
        &cfg,
        format!(
            "corpus = {}\nstore = {}\nprovider = sim\nsim-profile = {}\nseed = 7\ntrials = 4\n",
            root.join("corpus.jsonl").display(),
            root.join("store.jsonl").display(),
            root.join("profile.jsonl").display(),
        ),
    )
    .unwrap();

    // --trials 1 overrides the file's 4.
    let out = privrank(&[
        "run",
        "--config", cfg.to_str().unwrap(),
        "--trials", "1",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("completed 60/60"), "{}", stdout(&out));
}

#[test]
fn eval_respects_settings_filter() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    calibrate_small(root, "60", "20");
    let corpus = root.join("corpus.jsonl");
    let profile = root.join("profile.jsonl");
    let store = root.join("store.jsonl");
    let out = privrank(&[
        "run",
        "--corpus", corpus.to_str().unwrap(),
        "--store", store.to_str().unwrap(),
        "--provider", "sim",
        "--sim-profile", profile.to_str().unwrap(),
        "--seed", "7",
        "--temperatures", "0,0.5,1",
        "--top-ps", "0.9",
        "--trials", "2",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    // Filter to a single temperature: only that sweep file appears.
    let eval_dir = root.join("only_t0");
    let out = privrank(&[
        "eval",
        "--store", store.to_str().unwrap(),
        "--corpus", corpus.to_str().unwrap(),
        "--mode", "sweep",
        "--temperatures", "0",
        "--out-dir", eval_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(eval_dir.join("sweep_t0_p0.9.csv").exists());
    assert!(!eval_dir.join("sweep_t1_p0.9.csv").exists());
    assert!(!eval_dir.join("sweep_combined.csv").exists());
}
