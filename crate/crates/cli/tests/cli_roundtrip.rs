//! End-to-end CLI behavior: dataset round-trips, command exit codes, config
//! file precedence, and report reproducibility from the embedded config.

use std::path::{Path, PathBuf};
use std::process::Command;

use spillkit::estimators::{run_all_estimators, BaselineMode, PropensityConfig};
use spillkit::evaluation::{run_monte_carlo, McConfig};
use spillkit::propensity::{LinearOptions, ModelOptions};
use spillkit::sim::{simulate_experiment, CasePreset};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_spillkit")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("spillkit-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run_in(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(bin())
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

#[test]
fn simulate_dump_reloads_exactly() {
    let dir = scratch("roundtrip");
    let out = run_in(
        &dir,
        &["simulate", "--case", "III", "--seed", "314", "--out-dir", "sim"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let mut sim = CasePreset::III.config(314);
    sim.seed = 314;
    let expected = simulate_experiment(&sim).unwrap().dataset;

    let options = spillkit_cli::ingest::IngestOptions {
        truncation_k: expected.truncation_k,
        outlier_cap: None,
    };
    let (loaded, report) = spillkit_cli::ingest::load_dataset(
        &dir.join("sim/players.csv"),
        Some(&dir.join("sim/sessions.csv")),
        None,
        &options,
    )
    .unwrap();
    assert_eq!(report.outliers_dropped, 0);
    assert_eq!(loaded, expected, "CSV round-trip must be field-for-field exact");
}

#[test]
fn cli_estimate_matches_in_memory_pipeline() {
    let dir = scratch("pipeline");
    let out = run_in(
        &dir,
        &["simulate", "--case", "II", "--seed", "2718", "--out-dir", "sim"],
    );
    assert!(out.status.success());
    let out = run_in(
        &dir,
        &[
            "estimate",
            "--players",
            "sim/players.csv",
            "--sessions",
            "sim/sessions.csv",
            "--truncate-at",
            "10",
            "--baseline",
            "known-mu",
            "--propensity",
            "linear",
            "--outlier-cap",
            "none",
            "--out-dir",
            "est",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    // Same computation in memory.
    let mut sim = CasePreset::II.config(2718);
    sim.seed = 2718;
    let dataset = simulate_experiment(&sim).unwrap().dataset;
    let propensity = PropensityConfig {
        options: ModelOptions::Linear(LinearOptions::default()),
        epsilon: 0.01,
    };
    let expected = run_all_estimators(&dataset, &propensity, BaselineMode::KnownMu).unwrap();

    let raw = std::fs::read_to_string(dir.join("est/estimate.json")).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&raw).unwrap();
    let estimators = parsed["estimators"].as_array().unwrap();
    assert_eq!(estimators.len(), 4);
    for (json, tau) in estimators.iter().zip(&expected) {
        let got = json["overall"].as_f64().unwrap();
        let want = tau.overall.unwrap();
        assert!(
            (got - want).abs() < 1e-12,
            "{}: CLI {got} vs library {want}",
            tau.kind.name()
        );
    }
}

#[test]
fn commands_complete_on_toy_config_and_flags_override_file() {
    let dir = scratch("toyconfig");
    std::fs::write(
        dir.join("run.conf"),
        "case = III\nseed = 11\nplayers = 200\ngames = 120\nreplicates = 2\nout-dir = from-file\n",
    )
    .unwrap();

    // simulate honors the file, flag overrides out-dir.
    let out = run_in(
        &dir,
        &["simulate", "--config", "run.conf", "--out-dir", "sim"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("sim/players.csv").exists());
    assert!(!dir.join("from-file").exists());

    let out = run_in(
        &dir,
        &[
            "mc-eval",
            "--config",
            "run.conf",
            "--propensity",
            "linear",
            "--out-dir",
            "mc",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("mc/mc_summary.json").exists());
    // Tidy table shape: header plus four estimators times eleven levels.
    let levels = std::fs::read_to_string(dir.join("mc/mc_levels.csv")).unwrap();
    assert_eq!(levels.lines().count(), 1 + 4 * 11);

    let out = run_in(
        &dir,
        &[
            "estimate",
            "--players",
            "sim/players.csv",
            "--sessions",
            "sim/sessions.csv",
            "--baseline",
            "known-mu",
            "--propensity",
            "linear",
            "--truncate-at",
            "10",
            "--outlier-cap",
            "none",
            "--out-dir",
            "est",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    // Re-rendering a stored report is byte-stable.
    let out = run_in(
        &dir,
        &["report", "--input", "mc/mc_summary.json", "--out-dir", "rerender"],
    );
    assert!(out.status.success());
    let a = std::fs::read(dir.join("mc/mc_summary.json")).unwrap();
    let b = std::fs::read(dir.join("rerender/mc_summary.json")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn error_paths_use_distinct_exit_codes() {
    let dir = scratch("exitcodes");
    // Unknown flag: usage error from the parser.
    let out = run_in(&dir, &["simulate", "--definitely-not-a-flag"]);
    assert_eq!(out.status.code(), Some(2));
    // Config error: missing output dir.
    let out = run_in(&dir, &["simulate", "--case", "I"]);
    assert_eq!(out.status.code(), Some(2));
    // Config error: nonexistent input path fails validation.
    let out = run_in(
        &dir,
        &["estimate", "--players", "nope.csv", "--exposures", "nope2.csv", "--out-dir", "x"],
    );
    assert_eq!(out.status.code(), Some(2));
    // Data error: malformed players file.
    std::fs::write(dir.join("bad.csv"), "id,z,y,y_pre,x1\n0,9,1.0,,0.5\n").unwrap();
    std::fs::write(dir.join("exp.csv"), "id,m\n0,1\n").unwrap();
    let out = run_in(
        &dir,
        &[
            "estimate",
            "--players",
            "bad.csv",
            "--exposures",
            "exp.csv",
            "--out-dir",
            "x",
        ],
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn saved_propensity_models_reproduce_the_estimate() {
    let dir = scratch("models");
    let out = run_in(
        &dir,
        &["simulate", "--case", "III", "--seed", "626", "--out-dir", "sim"],
    );
    assert!(out.status.success());
    let base_args = [
        "estimate",
        "--players",
        "sim/players.csv",
        "--sessions",
        "sim/sessions.csv",
        "--truncate-at",
        "10",
        "--baseline",
        "known-mu",
        "--propensity",
        "linear",
        "--outlier-cap",
        "none",
    ];
    let mut fit_args: Vec<&str> = base_args.to_vec();
    fit_args.extend(["--save-models", "models", "--out-dir", "est-fit"]);
    let out = run_in(&dir, &fit_args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("models/propensity_pooled.json").exists());
    assert!(dir.join("models/propensity_treated.json").exists());

    let mut reuse_args: Vec<&str> = base_args.to_vec();
    reuse_args.extend(["--models", "models", "--out-dir", "est-reuse"]);
    let out = run_in(&dir, &reuse_args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let a: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.join("est-fit/estimate.json")).unwrap(),
    )
    .unwrap();
    let b: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.join("est-reuse/estimate.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(a["estimators"], b["estimators"]);
}

#[test]
fn report_reproduces_from_embedded_config() {
    let dir = scratch("embedded");
    let out = run_in(
        &dir,
        &[
            "mc-eval",
            "--case",
            "I",
            "--seed",
            "404",
            "--replicates",
            "3",
            "--players",
            "250",
            "--games",
            "150",
            "--propensity",
            "linear",
            "--out-dir",
            "mc",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let raw = std::fs::read_to_string(dir.join("mc/mc_summary.json")).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&raw).unwrap();
    let config: McConfig = serde_json::from_value(parsed["config"].clone()).unwrap();
    let summary = run_monte_carlo(&config).unwrap();
    let stored: spillkit::evaluation::McSummary =
        serde_json::from_value(parsed["summary"].clone()).unwrap();
    assert_eq!(summary, stored, "embedded config must reproduce the report");
}
