use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn ddrci(args: &[&str], dir: &Path) -> Output {
    ddrci_env(args, dir, &[])
}

fn ddrci_env(args: &[&str], dir: &Path, env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ddrci"));
    cmd.args(args).current_dir(dir).env_remove("DDRCI_LP_SOLVER");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("spawn ddrci")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn config(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
        .canonicalize()
        .unwrap()
        .display()
        .to_string()
}

fn value_after(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(key))
        .and_then(|v| v.split_whitespace().next())
        .and_then(|v| v.parse().ok())
        .unwrap_or_else(|| panic!("no `{key}` in output:\n{text}"))
}

fn gen_data(dir: &Path, plant: &str, t: &str, seed: &str, out: &str) -> Output {
    ddrci(
        &["gen-data", "--plant", plant, "--T", t, "--seed", seed, "--out", out],
        dir,
    )
}

#[test]
fn gen_data_reports_full_excitation() {
    let tmp = TempDir::new().unwrap();
    let o = gen_data(tmp.path(), "double-integrator", "100", "1", "traj.csv");
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("rank 6/6 OK"), "{}", stdout(&o));
    let text = std::fs::read_to_string(tmp.path().join("traj.csv")).unwrap();
    assert!(text.starts_with("t,x1,x2,u1,p1,p2\n"));
    assert_eq!(text.lines().count(), 102);
}

#[test]
fn gen_data_is_byte_reproducible() {
    let tmp = TempDir::new().unwrap();
    for (out, seed) in [("a.csv", "3"), ("b.csv", "3"), ("c.csv", "4")] {
        assert!(gen_data(tmp.path(), "van-der-pol", "50", seed, out).status.success());
    }
    let read = |f: &str| std::fs::read(tmp.path().join(f)).unwrap();
    assert_eq!(read("a.csv"), read("b.csv"));
    assert_ne!(read("a.csv"), read("c.csv"));
}

#[test]
fn short_experiment_is_not_exciting() {
    let tmp = TempDir::new().unwrap();
    let o = gen_data(tmp.path(), "double-integrator", "3", "1", "traj.csv");
    assert_eq!(o.status.code(), Some(4));
    assert!(stdout(&o).contains("FAIL"), "{}", stdout(&o));
}

/// Example-2 data at `T = 100`, synthesized and written as `sol.json`.
fn example_two_solution(tmp: &TempDir) -> Output {
    let cfg = config("example2.json");
    assert!(ddrci(
        &["gen-data", "--config", &cfg, "--T", "100", "--seed", "1", "--out", "traj.csv"],
        tmp.path()
    )
    .status
    .success());
    ddrci(
        &["synth", "--config", &cfg, "--data", "traj.csv", "--out", "sol.json"],
        tmp.path(),
    )
}

#[test]
fn synth_then_verify_passes_and_inflation_fails() {
    let tmp = TempDir::new().unwrap();
    let cfg = config("example2.json");
    let o = example_two_solution(&tmp);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let v = value_after(&out, "volume ");
    assert!(v > 1.0 && v < 1.7, "volume {v}");
    assert!(out.contains("wall time"));

    let verify = |sol: &str| {
        ddrci(
            &["verify", "--config", &cfg, "--solution", sol, "--data", "traj.csv"],
            tmp.path(),
        )
    };
    let o = verify("sol.json");
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("PASS"));
    let facet = out
        .lines()
        .find_map(|l| l.split("at facet ").nth(1))
        .and_then(|r| r.split_whitespace().next())
        .and_then(|k| k.parse::<usize>().ok())
        .unwrap();

    let mut json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(tmp.path().join("sol.json")).unwrap()).unwrap();
    let q = &mut json["solution"]["q"][facet];
    *q = serde_json::json!(q.as_f64().unwrap() * 1.1);
    std::fs::write(tmp.path().join("bad.json"), serde_json::to_string(&json).unwrap()).unwrap();
    let o = verify("bad.json");
    assert_eq!(o.status.code(), Some(3));
    assert!(stdout(&o).contains("FAIL"));
    assert!(stderr(&o).contains("negative slack on facets"), "{}", stderr(&o));
}

#[test]
fn synth_output_is_byte_reproducible() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    assert!(example_two_solution(&a).status.success());
    assert!(example_two_solution(&b).status.success());
    let read = |d: &TempDir| std::fs::read(d.path().join("sol.json")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn model_mode_matches_reference_volume_and_verifies() {
    let tmp = TempDir::new().unwrap();
    let cfg = config("example2.json");
    let o = ddrci(
        &["synth", "--config", &cfg, "--mode", "model", "--out", "model.json"],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let v = value_after(&stdout(&o), "volume ");
    assert!((v - 1.62).abs() <= 0.04, "volume {v}");
    let o = ddrci(&["verify", "--config", &cfg, "--solution", "model.json"], tmp.path());
    assert!(o.status.success(), "{}", stdout(&o));
}

#[test]
fn simulate_and_report() {
    let tmp = TempDir::new().unwrap();
    let cfg = config("example2.json");
    assert!(example_two_solution(&tmp).status.success());
    for t in ["20", "50"] {
        let out = format!("sol_{t}.json");
        let o = ddrci(
            &["synth", "--config", &cfg, "--data", "traj.csv", "--T", t, "--out", &out],
            tmp.path(),
        );
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert!(ddrci(
        &["synth", "--config", &cfg, "--mode", "model", "--out", "model.json"],
        tmp.path()
    )
    .status
    .success());

    let o = ddrci(
        &[
            "simulate",
            "--config",
            &cfg,
            "--solution",
            "sol.json",
            "--runs",
            "4",
            "--steps",
            "50",
            "--zero-disturbance",
            "--out-dir",
            "traces",
        ],
        tmp.path(),
    );
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("state violations 0, input violations 0, controller failures 0"));
    let trace = std::fs::read_to_string(tmp.path().join("traces/trace_000.csv")).unwrap();
    assert_eq!(trace.lines().count(), 52);
    assert!(trace.lines().skip(1).all(|l| l.contains(",0,") || l.ends_with(",0,,")));

    let o = ddrci(
        &[
            "report",
            "--config",
            &cfg,
            "model.json",
            "sol.json",
            "sol_50.json",
            "sol_20.json",
            "--traces",
            "traces/trace_000.csv",
            "--out-dir",
            "rep",
        ],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let table = std::fs::read_to_string(tmp.path().join("rep/table.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("quantity,T=20,T=50,T=100,model-based"));
    let volumes: Vec<f64> = lines
        .next()
        .unwrap()
        .split(',')
        .skip(1)
        .map(|v| v.parse().unwrap())
        .collect();
    assert_eq!(volumes.len(), 4);
    assert!(volumes[..3].windows(2).all(|w| w[0] <= w[1] + 1e-9), "{volumes:?}");
    assert!(lines.next().unwrap().starts_with("d_X,"));
    let svg = std::fs::read_to_string(tmp.path().join("rep/sets.svg")).unwrap();
    assert_eq!(svg.matches("<polygon").count(), 5);
    assert_eq!(svg.matches("<polyline").count(), 1);
    assert!(
        svg.contains("viewBox=\"-1.100000 -1.100000 2.200000 2.200000\""),
        "{svg}"
    );
}

#[test]
fn malformed_configs_are_input_errors() {
    let tmp = TempDir::new().unwrap();
    let base = std::fs::read_to_string(config("example1.json")).unwrap();
    let cases = [
        ("schema.json", base.replace("\"schema\": 1", "\"schema\": 2")),
        (
            "unknown.json",
            base.replace("\"schema\": 1,", "\"schema\": 1, \"colour\": \"red\","),
        ),
    ];
    for (name, text) in cases {
        std::fs::write(tmp.path().join(name), text).unwrap();
        let o = ddrci(&["gen-data", "--config", name, "--T", "10"], tmp.path());
        assert_eq!(o.status.code(), Some(4), "{name}: {}", stderr(&o));
    }
    let o = ddrci(&["gen-data", "--T", "10"], tmp.path());
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn solver_comes_from_the_environment() {
    let tmp = TempDir::new().unwrap();
    let args = ["synth", "--plant", "van-der-pol", "--mode", "model", "--out", "m.json"];
    let o = ddrci_env(&args, tmp.path(), &[("DDRCI_LP_SOLVER", "minilp")]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("solver minilp"), "{}", stdout(&o));
    let o = ddrci_env(&args, tmp.path(), &[("DDRCI_LP_SOLVER", "no-such-solver")]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    let o = ddrci(&args, tmp.path());
    assert!(stdout(&o).contains("solver embedded"));
}

#[test]
fn empty_model_set_is_reported_as_infeasible() {
    let tmp = TempDir::new().unwrap();
    assert!(gen_data(tmp.path(), "van-der-pol", "60", "2", "traj.csv")
        .status
        .success());
    let text = std::fs::read_to_string(tmp.path().join("traj.csv")).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut cols: Vec<String> = lines[20].split(',').map(String::from).collect();
    let x1: f64 = cols[1].parse().unwrap();
    cols[1] = format!("{}", x1 + 0.5);
    lines[20] = cols.join(",");
    std::fs::write(tmp.path().join("bad.csv"), lines.join("\n") + "\n").unwrap();
    let o = ddrci(&["synth", "--plant", "van-der-pol", "--data", "bad.csv"], tmp.path());
    assert_eq!(o.status.code(), Some(2), "{}{}", stdout(&o), stderr(&o));
}
