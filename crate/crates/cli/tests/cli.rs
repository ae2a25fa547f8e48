//! End-to-end tests of the `netgrad` binary: every subcommand, every exit
//! code, and the reproducibility contract of the written artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn netgrad() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_netgrad"));
    cmd.env_remove("NETGRAD_OUT_DIR");
    cmd
}

fn base_config() -> String {
    r#"
[problem]
components = [
    { kind = "quadratic", center = [-2.0] },
    { kind = "quadratic", center = [0.0] },
    { kind = "quadratic", center = [2.0] },
]
set = { kind = "box", lower = [-1.0], upper = [1.0] }

[topology]
kind = "fixed"
links = [[0, 1], [1, 2]]

[stepsize]
kind = "harmonic"
a = 1.0
b = 10.0

[engine]
horizon = 60
seed = 11
initial = [[-1.0], [0.0], [1.0]]

[bounds]
x_star = [0.0]
f_star = 8.0
"#
    .to_string()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("study.toml");
    fs::write(&path, text).unwrap();
    path
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn summary_value(dir: &Path) -> serde_json::Value {
    let text = fs::read_to_string(dir.join("run_summary.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn run_zero_noise_quadratic_writes_trace_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), &base_config());
    let out = netgrad()
        .args(["run", "--config"])
        .arg(&config)
        .arg("--out-dir")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));

    let csv = fs::read_to_string(tmp.path().join("run_trace.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "k,stepsize,disagreement,objective_at_average,objective_at_iterate,\
         objective_at_running_avg,displacement,error_norm"
            .replace(' ', "")
    );
    assert_eq!(lines.count(), 60, "one row per transition");

    let summary = summary_value(tmp.path());
    assert_eq!(summary["horizon"], 60);
    assert_eq!(summary["replicas"], 1);
    assert_eq!(summary["num_agents"], 3);
    assert_eq!(summary["agents"].as_array().unwrap().len(), 3);
    assert_eq!(summary["violation_count"], 0);
    assert_eq!(summary["digest"].as_str().unwrap().len(), 16);
    let bounds = &summary["bounds"];
    assert_eq!(bounds["reference"]["f_star"], 8.0);
    assert!(bounds["inputs"]["theta"].as_f64().unwrap() > 1.0);
    let beta = bounds["inputs"]["beta"].as_f64().unwrap();
    assert!(beta > 0.0 && beta < 1.0);
    assert!(bounds["disagreement"].as_f64().unwrap() >= 0.0);
    // Sixty transitions only start the descent; the running averages lag
    // the iterates, so just check the objective left the worst corner
    // (f = 11 at the box edge) and is heading toward f* = 8.
    let tail = summary["tail"]["objective_at_running_avg"]["mean"]
        .as_f64()
        .unwrap();
    assert!(tail < 9.5, "tail objective {tail}");
}

#[test]
fn a_negative_stepsize_exits_one_and_names_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), &base_config());
    let out = netgrad()
        .args(["run", "--config"])
        .arg(&config)
        .args(["--set", "stepsize.a=-1.0", "--out-dir"])
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_of(&out);
    assert!(err.contains("stepsize.a"), "stderr: {err}");
}

#[test]
fn unknown_keys_exit_one_with_the_full_path() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), &base_config());
    let out = netgrad()
        .args(["run", "--config"])
        .arg(&config)
        .args(["--set", "engine.horzon=100", "--out-dir"])
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr_of(&out).contains("engine.horzon"),
        "{}",
        stderr_of(&out)
    );
}

#[test]
fn a_disconnected_window_under_strict_checks_exits_two_and_names_the_window() {
    let tmp = tempfile::tempdir().unwrap();
    // Agent 2 never hears from anyone: every window is disconnected. Under
    // the default warn policy the run still proceeds (with a warning in the
    // summary); the strict abort policy turns it into exit code 2.
    let text = base_config().replace("links = [[0, 1], [1, 2]]", "links = [[0, 1]]");
    let config = write_config(tmp.path(), &text);
    let out = netgrad()
        .args(["run", "--config"])
        .arg(&config)
        .args(["--set", "checks.policy=abort", "--out-dir"])
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr_of(&out));
    let err = stderr_of(&out);
    assert!(err.contains("window start 0"), "stderr: {err}");

    let out = netgrad()
        .args(["run", "--config"])
        .arg(&config)
        .arg("--out-dir")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "warn policy proceeds");
    let summary = summary_value(tmp.path());
    let warnings = summary["warnings"].as_array().unwrap();
    assert!(
        warnings
            .iter()
            .any(|w| w.as_str().unwrap().contains("connectivity")),
        "warnings: {warnings:?}"
    );
}

#[test]
fn summaries_regenerate_byte_identically_up_to_the_wall_clock() {
    let tmp_a = tempfile::tempdir().unwrap();
    let tmp_b = tempfile::tempdir().unwrap();
    let config = write_config(tmp_a.path(), &base_config());
    for dir in [tmp_a.path(), tmp_b.path()] {
        let out = netgrad()
            .args(["run", "--config"])
            .arg(&config)
            .arg("--out-dir")
            .arg(dir)
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    }
    let trace_a = fs::read(tmp_a.path().join("run_trace.csv")).unwrap();
    let trace_b = fs::read(tmp_b.path().join("run_trace.csv")).unwrap();
    assert_eq!(trace_a, trace_b, "traces must be byte-identical");

    let mut sum_a = summary_value(tmp_a.path());
    let mut sum_b = summary_value(tmp_b.path());
    sum_a["wall_clock_seconds"] = 0.into();
    sum_b["wall_clock_seconds"] = 0.into();
    assert_eq!(
        serde_json::to_string(&sum_a).unwrap(),
        serde_json::to_string(&sum_b).unwrap()
    );
}

#[test]
fn the_echoed_config_reproduces_identical_metrics() {
    let tmp_a = tempfile::tempdir().unwrap();
    let tmp_b = tempfile::tempdir().unwrap();
    let config = write_config(tmp_a.path(), &base_config());
    let out = netgrad()
        .args(["run", "--config"])
        .arg(&config)
        .args(["--set", "engine.horizon=40", "--out-dir"])
        .arg(tmp_a.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));

    let sum_a = summary_value(tmp_a.path());
    let echo = sum_a["config"].as_str().unwrap();
    let config_b = tmp_b.path().join("echo.toml");
    fs::write(&config_b, echo).unwrap();
    let out = netgrad()
        .args(["run", "--config"])
        .arg(&config_b)
        .arg("--out-dir")
        .arg(tmp_b.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));

    let sum_b = summary_value(tmp_b.path());
    assert_eq!(sum_a["digest"], sum_b["digest"]);
    assert_eq!(sum_a["tail"], sum_b["tail"]);
    assert_eq!(sum_a["agents"], sum_b["agents"]);
    assert_eq!(
        fs::read(tmp_a.path().join("run_trace.csv")).unwrap(),
        fs::read(tmp_b.path().join("run_trace.csv")).unwrap()
    );
}

#[test]
fn monte_carlo_runs_aggregate_and_compare_the_guarantees() {
    let tmp = tempfile::tempdir().unwrap();
    // A constant stepsize keeps the asymptotic guarantees positive, so the
    // comparisons are scored (a diminishing schedule drives them to zero,
    // which no finite run can match).
    let text = base_config().replace(
        "kind = \"harmonic\"\na = 1.0\nb = 10.0",
        "kind = \"constant\"\nalpha = 0.02",
    ) + r#"
[noise]
kind = "gaussian"
sigma = 0.1
"#;
    let config = write_config(tmp.path(), &text);
    let out = netgrad()
        .args(["run", "--config"])
        .arg(&config)
        .args([
            "--replicas",
            "40",
            "--set",
            "engine.horizon=300",
            "--out-dir",
        ])
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));

    let csv = fs::read_to_string(tmp.path().join("run_trace.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert!(
        header.contains("disagreement_mean,disagreement_se"),
        "{header}"
    );

    let summary = summary_value(tmp.path());
    assert_eq!(summary["replicas"], 40);
    assert!(
        summary["agents"].is_null(),
        "aggregates keep statistics, not states"
    );
    assert!(summary["tail"]["disagreement"]["se"].as_f64().unwrap() >= 0.0);
    let comparisons = summary["bounds"]["comparisons"].as_array().unwrap();
    assert_eq!(comparisons.len(), 3);
    for c in comparisons {
        assert_eq!(c["verdict"], "pass", "comparison failed: {c}");
    }
}

#[test]
fn bounds_reports_certificate_curve_and_stopping_rule() {
    let tmp = tempfile::tempdir().unwrap();
    let text = base_config()
        + r#"
[noise]
kind = "gaussian"
sigma = 0.1
"#;
    let text = text.replace(
        "kind = \"harmonic\"\na = 1.0\nb = 10.0",
        "kind = \"constant\"\nalpha = 0.05",
    );
    let config = write_config(tmp.path(), &text);
    let out = netgrad()
        .args(["bounds", "--config"])
        .arg(&config)
        .args(["--epsilon", "0.25"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));

    let report: serde_json::Value = serde_json::from_str(&stdout_of(&out)).unwrap();
    assert!(report["inputs"]["theta"].as_f64().unwrap() > 1.0);
    let beta = report["inputs"]["beta"].as_f64().unwrap();
    assert!(beta > 0.0 && beta < 1.0);
    assert!(report["disagreement"].as_f64().unwrap() > 0.0);
    assert!(report["function_value"].as_f64().unwrap() > 0.0);
    let samples = report["finite_time"]["samples"].as_array().unwrap();
    assert_eq!(samples.len(), 4);
    // The curve decreases toward the stepsize floor as t grows.
    let first = samples[0]["bound"].as_f64().unwrap();
    let last = samples[3]["bound"].as_f64().unwrap();
    assert!(last < first, "curve should tighten: {first} vs {last}");

    let stopping = &report["stopping"];
    assert!(stopping["iterations"].as_u64().unwrap() >= 1);
    assert!(stopping["stepsize"].as_f64().unwrap() > 0.0);
    assert!(stopping["predicted_bound"].as_f64().unwrap() <= 0.25 + 1e-9);
}

#[test]
fn bounds_with_a_single_agent_degenerates_gracefully() {
    let tmp = tempfile::tempdir().unwrap();
    let text = r#"
[problem]
components = [{ kind = "quadratic", center = [0.5] }]
set = { kind = "box", lower = [-1.0], upper = [1.0] }

[topology]
kind = "fixed"
links = []

[stepsize]
kind = "constant"
alpha = 0.1

[engine]
horizon = 10
seed = 3

[bounds]
x_star = [0.5]
"#;
    let config = write_config(tmp.path(), text);
    let out = netgrad()
        .args(["bounds", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    let report: serde_json::Value = serde_json::from_str(&stdout_of(&out)).unwrap();
    assert!(report["inputs"]["theta"].as_f64().unwrap() >= 1.0);
    let beta = report["inputs"]["beta"].as_f64().unwrap();
    assert!(beta > 0.0 && beta < 1.0);
    assert!(report["disagreement"].as_f64().unwrap() >= 0.0);
}

#[test]
fn bounds_on_an_unbounded_set_with_persistent_bias_explains_the_hypothesis() {
    let tmp = tempfile::tempdir().unwrap();
    let text = r#"
[problem]
components = [
    { kind = "quadratic", center = [-1.0] },
    { kind = "quadratic", center = [1.0] },
]
set = { kind = "all", dim = 1 }

[topology]
kind = "fixed"
links = [[0, 1]]

[noise]
kind = "biased"
bias = [[0.05], [0.05]]
decay = 1.0
sigma = 0.0

[stepsize]
kind = "constant"
alpha = 0.05

[engine]
horizon = 10
seed = 3

[bounds]
x_star = [0.0]
"#;
    let config = write_config(tmp.path(), text);
    let out = netgrad()
        .args(["bounds", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1), "stdout: {}", stdout_of(&out));
    let err = stderr_of(&out);
    assert!(err.contains("bounded"), "stderr: {err}");
}

#[test]
fn sweeping_alpha_shows_the_tail_objective_decreasing() {
    let tmp = tempfile::tempdir().unwrap();
    let text = base_config()
        + r#"
[noise]
kind = "gaussian"
sigma = 0.1
"#;
    let config = write_config(tmp.path(), &text);
    let out = netgrad()
        .args(["sweep", "--config"])
        .arg(&config)
        .args([
            "--param",
            "alpha",
            "--values",
            "0.2,0.1,0.05,0.025",
            "--replicas",
            "16",
            "--set",
            "engine.horizon=2000",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    let table = stdout_of(&out);
    let mut lines = table.lines();
    let header = lines.next().unwrap();
    assert_eq!(
        header,
        "param,value,theta,beta,disagreement_bound,function_value_bound,\
         tail_disagreement,tail_objective"
            .replace(' ', "")
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 4);
    let objective: Vec<f64> = rows.iter().map(|r| r[7].parse().unwrap()).collect();
    let bound: Vec<f64> = rows.iter().map(|r| r[5].parse().unwrap()).collect();
    for i in 1..4 {
        assert!(
            objective[i] < objective[i - 1],
            "tail objective should fall with alpha: {objective:?}"
        );
        assert!(
            bound[i] < bound[i - 1],
            "bound should fall with alpha: {bound:?}"
        );
    }
}

#[test]
fn sweeping_m_matches_fourth_power_scaling_within_ten_percent() {
    let tmp = tempfile::tempdir().unwrap();
    // Fixed weight floor across sizes: the certificate keeps eta from the
    // configured topology while m varies. The whole stepsize section is
    // replaced so the limiting stepsize is positive and the bound column is
    // nonzero.
    let config = write_config(tmp.path(), &base_config());
    let out = netgrad()
        .args(["sweep", "--config"])
        .arg(&config)
        .args([
            "--param",
            "m",
            "--values",
            "4,8,16",
            "--set",
            "stepsize={ kind = \"constant\", alpha = 0.05 }",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    let table = stdout_of(&out);
    let rows: Vec<Vec<String>> = table
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    assert_eq!(rows.len(), 3);
    let bound: Vec<f64> = rows.iter().map(|r| r[5].parse().unwrap()).collect();
    for pair in bound.windows(2) {
        let ratio = pair[1] / pair[0];
        assert!(
            (14.4..=17.6).contains(&ratio),
            "doubling m should scale the bound by about 16, got {ratio}"
        );
    }
}

#[test]
fn sweeping_an_empty_value_list_prints_only_the_header() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), &base_config());
    let out = netgrad()
        .args(["sweep", "--config"])
        .arg(&config)
        .args(["--param", "eta", "--values", ""])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    let table = stdout_of(&out);
    assert_eq!(table.lines().count(), 1, "table: {table}");
    assert!(table.starts_with("param,value,"));
}

#[test]
fn sweeping_an_unknown_parameter_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), &base_config());
    let out = netgrad()
        .args(["sweep", "--config"])
        .arg(&config)
        .args(["--param", "gamma", "--values", "1,2"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr_of(&out).contains("not sweepable"),
        "{}",
        stderr_of(&out)
    );
}

#[test]
fn check_topology_reports_the_certificate_or_the_violation() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), &base_config());
    let out = netgrad()
        .args(["check-topology", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    let text = stdout_of(&out);
    assert!(text.contains("eta ="), "stdout: {text}");
    assert!(text.contains("holds"), "stdout: {text}");

    let broken = base_config().replace("links = [[0, 1], [1, 2]]", "links = [[0, 1]]");
    let config = write_config(tmp.path(), &broken);
    let out = netgrad()
        .args(["check-topology", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr_of(&out).contains("window start 0"),
        "{}",
        stderr_of(&out)
    );
}

#[test]
fn the_out_dir_environment_variable_is_the_default_destination() {
    let tmp = tempfile::tempdir().unwrap();
    let dest = tmp.path().join("results");
    let config = write_config(tmp.path(), &base_config());
    let out = netgrad()
        .args(["run", "--config"])
        .arg(&config)
        .env("NETGRAD_OUT_DIR", &dest)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    assert!(dest.join("run_trace.csv").exists());
    assert!(dest.join("run_summary.json").exists());
}
