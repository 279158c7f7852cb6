use std::fs;
use std::path::Path;
use std::process::Command;

use gqlab_cli::output::{read_runs, AGGREGATE_HEADER, RUN_HEADER};
use gqlab_cli::{run_config_file, summarize_dir, ConfigError, RunError};

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

const SMOKE: &str = r#"
environment = "mountain_car"
learner = "gq"
lambda = 0.9
features = { kind = "tile_coding", n_tilings = 8, tiles_per_dim = 8, dim = 128 }
n_runs = 2
n_episodes = 10
output = "out"
sigma = [{ mode = "dynamic" }]
step_sizes = [{ mode = "constant", alpha = 0.01, eta = 0.5 }]
"#;

#[test]
fn mountain_car_smoke_writes_one_row_per_episode() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write(tmp.path(), "smoke.toml", SMOKE);
    let report = run_config_file(&config).unwrap();
    assert_eq!(report.output_dir, tmp.path().join("out"));
    let outputs = read_runs(&report.output_dir).unwrap();
    assert_eq!(outputs.len(), 2);
    let rows: usize = outputs.iter().map(|o| o.records.len()).sum();
    assert_eq!(rows, 20);
    for o in &outputs {
        for (i, r) in o.records.iter().enumerate() {
            assert_eq!(r.episode, i as u64);
            assert!(r.episode_return <= -1.0 && r.episode_return == -r.episode_length);
            assert!((0.0..=1.0).contains(&r.sigma));
        }
    }
    let aggregate = fs::read_to_string(report.output_dir.join("aggregate.csv")).unwrap();
    let mut lines = aggregate.lines();
    assert_eq!(lines.next().unwrap(), AGGREGATE_HEADER.join(","));
    assert_eq!(lines.count(), 10);
    let first_run =
        fs::read_to_string(report.output_dir.join("runs/00_sigma-dynamic__a0.01_e0.5/run_000.csv")).unwrap();
    assert_eq!(first_run.lines().next().unwrap(), RUN_HEADER.join(","));
    assert!(report.output_dir.join("metadata.toml").exists());
}

#[test]
fn summarize_round_trips_the_written_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write(
        tmp.path(),
        "boyan.toml",
        r#"
environment = "boyan"
learner = "gq"
lambda = 0.5
n_runs = 3
n_steps = 3000
cadence = 300
output = "out"
sigma = [
  { mode = "fixed", value = 0.0 },
  { mode = "fixed", value = 0.5 },
  { mode = "fixed", value = 1.0 },
]
step_sizes = [{ mode = "constant", alpha = 0.05, eta = 1.0 }]
"#,
    );
    let report = run_config_file(&config).unwrap();
    let written = fs::read_to_string(report.output_dir.join("summary.txt")).unwrap();
    let reread = summarize_dir(&report.output_dir).unwrap();
    assert_eq!(reread, report.summary);
    assert_eq!(reread.to_string(), written);
    assert_eq!(reread.cases.len(), 1);
    assert_eq!(reread.cases[0].1.labels.len(), 1);
}

#[test]
fn invalid_model_fails_before_anything_is_written() {
    let tmp = tempfile::tempdir().unwrap();
    write(
        tmp.path(),
        "broken.toml",
        r#"
gamma = 0.9
transition = [[[0.5, 0.4]], [[0.0, 1.0]]]
reward = [[0.0], [1.0]]
behavior = [[1.0], [1.0]]
target = [[1.0], [1.0]]
"#,
    );
    let config = write(
        tmp.path(),
        "exp.toml",
        r#"
environment = "custom"
mdp_file = "broken.toml"
learner = "gq"
lambda = 0.0
n_runs = 1
n_steps = 10
output = "out"
sigma = [{ mode = "fixed", value = 0.0 }]
step_sizes = [{ mode = "constant", alpha = 0.1, eta = 1.0 }]
"#,
    );
    let err = run_config_file(&config).unwrap_err();
    assert!(matches!(err, RunError::Config(ConfigError::Model(_))), "{err}");
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn invalid_configs_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cases = [
        ("unknown field", SMOKE.replace("n_runs = 2", "n_runs = 2\nbogus = 1")),
        ("zero eta", SMOKE.replace("eta = 0.5", "eta = 0.0")),
        ("lambda above one", SMOKE.replace("lambda = 0.9", "lambda = 1.5")),
        ("no episodes", SMOKE.replace("n_episodes = 10", "")),
        ("bad sigma", SMOKE.replace(r#"{ mode = "dynamic" }"#, r#"{ mode = "fixed", value = 2.0 }"#)),
    ];
    for (what, text) in cases {
        let config = write(tmp.path(), "bad.toml", &text);
        assert!(run_config_file(&config).is_err(), "{what} accepted");
        assert!(!tmp.path().join("out").exists(), "{what} wrote output");
    }
}

#[test]
fn binary_runs_and_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_gqlab");

    let oracle = Command::new(bin).args(["oracle", "boyan", "--sigma", "0.5", "--lambda", "0.5"]).output().unwrap();
    assert!(oracle.status.success());
    let text = String::from_utf8(oracle.stdout).unwrap();
    assert!(text.contains("negative definite: true"), "{text}");
    assert!(text.contains("theta*:"));

    let config = write(tmp.path(), "smoke.toml", SMOKE);
    let run = Command::new(bin).arg("run").arg(&config).env("GQLAB_WORKERS", "2").output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let summarize = Command::new(bin).arg("summarize").arg(tmp.path().join("out")).output().unwrap();
    assert!(summarize.status.success());
    assert!(String::from_utf8(summarize.stdout).unwrap().contains("# configurations"));

    let missing = Command::new(bin).arg("run").arg(tmp.path().join("missing.toml")).output().unwrap();
    assert!(!missing.status.success());
    assert!(String::from_utf8(missing.stderr).unwrap().starts_with("error:"));
    let bad_sigma = Command::new(bin).args(["oracle", "boyan", "--sigma", "2", "--lambda", "0"]).output().unwrap();
    assert!(!bad_sigma.status.success());
}
