use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const PAIR: &str = r#"
[problem]
p = { sin = [[1, 0.2]] }
q = { sin = [[3, 1.0]] }
h = 0.5

[problem.bar]
q = { sin = [[3, 1.0]], cos = [[1, 0.2]] }

[run]
n_min = 16
n_max = 40
grid_size = 64
"#;

fn lab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pencil-lab"))
        .args(args)
        .current_dir(dir)
        .env_remove("PENCIL_CACHE_DIR")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn selfcheck_on_bundled_config_is_all_zero() {
    let tmp = TempDir::new().unwrap();
    let o = lab(&["selfcheck", "--out", "out"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = fs::read_to_string(tmp.path().join("out/selfcheck.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("check,value,expected,tolerance,discrepancy"));
    for line in lines {
        assert!(line.ends_with(",0"), "nonzero discrepancy: {line}");
    }
}

#[test]
fn selfcheck_targets_are_named() {
    let tmp = TempDir::new().unwrap();
    let o = lab(&["selfcheck", "--target", "c7", "--out", "out"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("PASS criterion 7"));
    let o = lab(&["selfcheck", "--target", "c99"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn invalid_config_names_the_field() {
    let tmp = TempDir::new().unwrap();
    write_config(tmp.path(), "bad.toml", "[problem]\n[run]\nn_min = 50\nn_max = 20\n");
    let o = lab(&["forward", "--config", "bad.toml"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("n_max"), "{}", stderr(&o));

    write_config(tmp.path(), "grid.toml", "[problem]\n[run]\ngrid_size = 8\n");
    let o = lab(&["forward", "--config", "grid.toml"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("grid_size"));
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(lab(&["forward", "--bogus"], tmp.path()).status.code(), Some(2));
    assert_eq!(lab(&["transmogrify"], tmp.path()).status.code(), Some(2));
    assert_eq!(lab(&["forward"], tmp.path()).status.code(), Some(2));
    assert_eq!(lab(&["forward", "--config", "missing.toml"], tmp.path()).status.code(), Some(2));
    write_config(tmp.path(), "pair.toml", PAIR);
    assert_eq!(lab(&["forward", "--config", "pair.toml", "--mode", "sideways"], tmp.path()).status.code(), Some(2));
    assert_eq!(lab(&["forward", "--config", "pair.toml", "--nmax", "20"], tmp.path()).status.code(), Some(2));
}

#[test]
fn nonconvergence_exits_with_three() {
    let tmp = TempDir::new().unwrap();
    // no real eigenvalue near the first index
    write_config(tmp.path(), "neg.toml", "[problem]\nq = { poly = [[0, -400.0]] }\n[run]\nn_min = 1\nn_max = 10\n");
    let o = lab(&["forward", "--config", "neg.toml", "--out", "out"], tmp.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn stability_writes_ratio_columns_and_report() {
    let tmp = TempDir::new().unwrap();
    write_config(tmp.path(), "pair.toml", PAIR);
    let o = lab(&["stability", "--config", "pair.toml", "--nmax", "48", "--out", "out"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(tmp.path().join("out/stability.csv")).unwrap();
    assert!(csv.starts_with("n,S_n,ratio"), "{csv}");
    assert_eq!(csv.lines().count(), 1 + (48 - 16 + 1));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("out/stability_report.json")).unwrap()).unwrap();
    assert_eq!(report["format_version"], 1);
    assert_eq!(report["config"]["n_max"], 48);
    assert!(report["results"]["corrected"]["d0_hat"].as_f64().unwrap() > 0.0);
    let metrics = fs::read_to_string(tmp.path().join("out/metric_report.csv")).unwrap();
    assert!(metrics.starts_with("n,S_n\n"));

    let o = lab(&["stability", "--config", "pair.toml", "--mode", "paper", "--out", "paper"], tmp.path());
    assert_eq!(o.status.code(), Some(0));
    let csv = fs::read_to_string(tmp.path().join("paper/stability.csv")).unwrap();
    assert!(csv.starts_with("n,S_n,ratio\n"));
}

#[test]
fn different_cases_give_unit_distance() {
    let tmp = TempDir::new().unwrap();
    write_config(
        tmp.path(),
        "cases.toml",
        "[problem]\ncase = \"robin\"\n[problem.bar]\ncase = \"dirichlet\"\n[run]\nn_min = 8\nn_max = 32\n",
    );
    let o = lab(&["stability", "--config", "cases.toml", "--out", "out"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("out/stability_report.json")).unwrap()).unwrap();
    assert_eq!(report["results"]["corrected"]["dsigma_hat"], 1.0);
    assert!(report["results"]["corrected"]["d0_hat"].is_null());
}

#[test]
fn studies_needing_a_pair_or_robin_start_reject_other_configs() {
    let tmp = TempDir::new().unwrap();
    write_config(tmp.path(), "single.toml", "[problem]\n[run]\nn_min = 8\nn_max = 24\n");
    assert_eq!(lab(&["stability", "--config", "single.toml"], tmp.path()).status.code(), Some(2));
    write_config(tmp.path(), "dir.toml", "[problem]\ncase = \"dirichlet\"\n[run]\nn_min = 8\nn_max = 24\n");
    assert_eq!(lab(&["recover-h", "--config", "dir.toml"], tmp.path()).status.code(), Some(2));
}

#[test]
fn repeated_and_cached_runs_are_bit_identical() {
    let tmp = TempDir::new().unwrap();
    write_config(tmp.path(), "pair.toml", PAIR);
    for study in ["forward", "nodes", "reconstruct", "recover-h", "stability", "high-order"] {
        let runs: Vec<Vec<(String, Vec<u8>)>> = ["a", "b", "b"]
            .iter()
            .enumerate()
            .map(|(i, dir)| {
                // the third run reuses the second run's cache
                let out = format!("{study}-{dir}-{i}");
                let cache = format!("{study}-{dir}-cache");
                let o = lab(&[study, "--config", "pair.toml", "--out", &out, "--cache", &cache], tmp.path());
                assert_eq!(o.status.code(), Some(0), "{study}: {}", stderr(&o));
                csv_files(&tmp.path().join(out))
            })
            .collect();
        assert!(!runs[0].is_empty(), "{study} wrote no tables");
        assert_eq!(runs[0], runs[1], "{study}: cold runs differ");
        assert_eq!(runs[1], runs[2], "{study}: warm run differs");
    }
}

#[test]
fn reconstruction_csv_has_documented_columns() {
    let tmp = TempDir::new().unwrap();
    write_config(tmp.path(), "pair.toml", PAIR);
    let o = lab(&["reconstruct", "--config", "pair.toml", "--mode", "both", "--out", "out"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(tmp.path().join("out/reconstruction.csv")).unwrap();
    assert!(csv.starts_with("x,value,n,lambda_n,mode\n"));
    assert!(csv.contains(",paper\n") && csv.contains(",corrected\n"));
}

#[test]
fn outputs_are_written_atomically_without_leftovers() {
    let tmp = TempDir::new().unwrap();
    write_config(tmp.path(), "pair.toml", PAIR);
    let o = lab(&["forward", "--config", "pair.toml", "--out", "out"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let names: Vec<String> = fs::read_dir(tmp.path().join("out"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert!(names.iter().all(|n| !n.contains(".tmp")), "{names:?}");
    assert!(names.contains(&"forward.csv".to_string()));
    assert!(names.contains(&"forward_report.json".to_string()));
}

#[test]
fn cache_directory_defaults_to_environment() {
    let tmp = TempDir::new().unwrap();
    write_config(tmp.path(), "pair.toml", PAIR);
    let cache = tmp.path().join("env-cache");
    let o = Command::new(env!("CARGO_BIN_EXE_pencil-lab"))
        .args(["forward", "--config", "pair.toml", "--out", "out"])
        .current_dir(tmp.path())
        .env("PENCIL_CACHE_DIR", &cache)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(fs::read_dir(&cache).unwrap().count() >= 2);
    assert!(!tmp.path().join("out/.cache").exists());
}
