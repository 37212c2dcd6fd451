use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str], config: &Path, out: &Path, threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_chaining-lab"));
    cmd.args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out);
    match threads {
        Some(t) => cmd.env("CHAINING_LAB_THREADS", t),
        None => cmd.env_remove("CHAINING_LAB_THREADS"),
    };
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, body).unwrap();
    path
}

/// Completed runs exit 0 or 2 depending on the verdicts; 1 means the run failed.
fn completed(out: &Output) -> bool {
    matches!(out.status.code(), Some(0) | Some(2))
}

const SMALL_CHAIN: &str = r#"{"seed": 11, "chain": {"p": 8, "n_grid": [16, 32, 64], "reps": 100, "svg": true}}"#;

#[test]
fn chain_with_default_grid_writes_one_row_per_n() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), r#"{"seed": 3}"#);
    let out = run(&["chain"], &config, &dir.path().join("out"), None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("out/chain.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("# chaining-lab v0.1.0 config="));
    assert!(lines[0].ends_with(" seed=3"));
    assert!(lines[1].starts_with("n,p,dudley,dualnorm,mc_sup,ratio"));
    let ns: Vec<&str> = lines[2..].iter().map(|l| l.split(',').next().unwrap()).collect();
    let expected: Vec<String> = (6..=14).map(|k| (1usize << k).to_string()).collect();
    assert_eq!(ns, expected);
    assert!(!text.contains('\r'));
    assert!(dir.path().join("out/chain.svg").exists());
}

#[test]
fn repeated_runs_are_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_CHAIN);
    let mut files = Vec::new();
    for (k, threads) in [None, Some("1"), Some("3")].into_iter().enumerate() {
        let out_dir = dir.path().join(format!("run{k}"));
        let out = run(&["chain"], &config, &out_dir, threads);
        assert!(completed(&out), "{}", String::from_utf8_lossy(&out.stderr));
        files.push((
            std::fs::read(out_dir.join("chain.csv")).unwrap(),
            std::fs::read(out_dir.join("chain_fit.json")).unwrap(),
        ));
    }
    assert_eq!(files[0], files[1]);
    assert_eq!(files[0], files[2]);
}

#[test]
fn seed_flag_overrides_the_config_and_changes_the_output() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_CHAIN);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(completed(&run(&["chain"], &config, &a, None)));
    assert!(completed(&run(&["chain", "--seed", "12"], &config, &b, None)));
    let ta = std::fs::read_to_string(a.join("chain.csv")).unwrap();
    let tb = std::fs::read_to_string(b.join("chain.csv")).unwrap();
    assert!(tb.lines().next().unwrap().ends_with("seed=12"));
    assert_ne!(ta.lines().nth(2), tb.lines().nth(2));
}

#[test]
fn empty_grid_exits_with_a_schema_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), r#"{"seed": 1, "simulate": {"n_grid": []}}"#);
    let out = run(&["simulate"], &config, &dir.path().join("out"), None);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("simulate.n_grid"), "{err}");
}

#[test]
fn schema_violations_name_the_offending_key() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), r#"{"seed": 1, "oracle": {"reps": -3}}"#);
    let out = run(&["oracle"], &config, &dir.path().join("out"), None);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("oracle.reps"));

    let config = write_config(dir.path(), r#"{"seed": 1, "unknown_payload": {}}"#);
    assert_eq!(run(&["solve"], &config, &dir.path().join("out"), None).status.code(), Some(1));
}

#[test]
fn unknown_subcommand_and_bad_thread_count_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), r#"{"seed": 1}"#);
    assert_eq!(run(&["frobnicate"], &config, &dir.path().join("out"), None).status.code(), Some(1));
    assert_eq!(run(&["solve"], &config, &dir.path().join("out"), Some("zero")).status.code(), Some(1));
}

#[test]
fn failed_acceptance_gate_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"{"seed": 1, "scaling": {"n_grid": [32, 128], "p_grid": [4, 64], "reps": 20, "tolerance": 0.0}}"#,
    );
    let out = run(&["scaling"], &config, &dir.path().join("out"), None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL scaling-ratios"));
    for name in ["scaling.csv", "scaling_pairs.csv", "scaling_fit.json", "verdicts.json"] {
        assert!(dir.path().join("out").join(name).exists(), "{name}");
    }
}

#[test]
fn solve_writes_the_solution_json() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), r#"{"seed": 5, "solve": {"n": 60, "p": 30, "loss": {"kind": "huber", "kappa": 1.0}}}"#);
    let out = run(&["solve"], &config, &dir.path().join("out"), None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("out/solve.json")).unwrap()).unwrap();
    assert_eq!(v["theta"].as_array().unwrap().len(), 30);
    for key in ["objective", "kkt", "iterations"] {
        assert!(v.get(key).is_some(), "{key}");
    }
}
