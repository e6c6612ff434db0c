use std::fs;
use std::path::Path;

use bangbang::experiment::{exit_code, run, ExperimentConfig, RunOptions};
use serde_json::Value;

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn echoed_config_reruns_to_identical_results() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(
        dir.path(),
        "c.json",
        r#"{"kind": "bounds-check", "model": "logistic-population", "n_points": 128, "n_steps": 300,
            "k_list": [4, 6], "n_directions": 5, "seed": 5}"#,
    );
    let first = run(
        &config,
        &RunOptions {
            out_dir: Some(dir.path().join("first")),
            seed: Some(9),
        },
    )
    .unwrap();
    assert_eq!(
        exit_code(&Ok(first.clone())),
        0,
        "{:?}",
        first.bundle.checks
    );

    let summary: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("first/summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["config"]["seed"], 9);
    let mut echoed = summary["config"].clone();
    echoed["output_dir"] = Value::String(dir.path().join("second").to_string_lossy().into_owned());
    let echo_path = write(dir.path(), "echo.json", &echoed.to_string());
    let parsed = ExperimentConfig::load(&echo_path).unwrap();
    assert_eq!(parsed.seed, 9);
    run(&echo_path, &RunOptions::default()).unwrap();
    assert_eq!(
        csv_files(&dir.path().join("first")),
        csv_files(&dir.path().join("second"))
    );
}

#[test]
fn every_emitted_file_reparses() {
    let dir = tempfile::tempdir().unwrap();
    for (i, text) in [
        r#"{"kind": "solve", "model": "pure-heat", "n_points": 64, "n_steps": 100, "snapshot_times": [0.0, 0.25, 1.0]}"#,
        r#"{"kind": "optimize", "model": "pure-heat", "n_points": 128, "n_steps": 100}"#,
        r#"{"kind": "expansion-study", "model": "logistic-population", "n_points": 64, "n_steps": 1024, "k_list": [4, 8, 16]}"#,
    ]
    .iter()
    .enumerate()
    {
        let out = dir.path().join(format!("out{i}"));
        let config = write(dir.path(), &format!("c{i}.json"), text);
        let outcome = run(&config, &RunOptions { out_dir: Some(out.clone()), seed: None }).unwrap();
        assert!(outcome.passed(), "{:?}", outcome.bundle.checks);
        let _: Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
        for (name, bytes) in csv_files(&out) {
            let text = String::from_utf8(bytes).unwrap();
            let mut lines = text.lines();
            let width = lines.next().unwrap().split(',').count();
            for line in lines {
                let cells: Vec<&str> = line.split(',').collect();
                assert_eq!(cells.len(), width, "{name}");
                for c in cells {
                    c.parse::<f64>().unwrap_or_else(|_| panic!("{name}: `{c}`"));
                }
            }
        }
    }
    let control = fs::read_to_string(dir.path().join("out1/control.csv")).unwrap();
    assert!(control.starts_with("x,m\n"));
    for line in control.lines().skip(1) {
        let m: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&m));
    }
    let trace = fs::read_to_string(dir.path().join("out1/trace.csv")).unwrap();
    let objectives: Vec<f64> = trace
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(objectives.windows(2).all(|w| w[1] >= w[0] - 1e-12));
    assert!(fs::read_to_string(dir.path().join("out2/scaling.csv"))
        .unwrap()
        .starts_with("K,residual_energy\n"));
    assert!(
        fs::read_to_string(dir.path().join("out2/scaling_report.csv"))
            .unwrap()
            .starts_with("K,residual_energy,envelope,L2_LK,ratio_IJ_over_L,slope\n")
    );
}

#[test]
fn carrying_capacity_bounds_check_reports_the_monotonicity_failure() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(
        dir.path(),
        "c.json",
        r#"{"kind": "bounds-check", "model": "carrying-capacity", "n_points": 128, "n_steps": 300, "k_list": [4]}"#,
    );
    let outcome = run(
        &config,
        &RunOptions {
            out_dir: Some(dir.path().join("o")),
            seed: None,
        },
    );
    assert_eq!(exit_code(&outcome), 1);
    let checks = &outcome.unwrap().bundle.checks;
    assert!(checks.iter().any(|c| c.name == "monotonicity" && !c.passed));
    assert!(checks.iter().any(|c| c.name == "hypotheses" && c.passed));
}
