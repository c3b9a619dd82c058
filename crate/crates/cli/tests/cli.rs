use std::path::Path;
use std::process::{Command, Output};

use deterra::env::Dataset;

fn deterra(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_deterra"));
    c.args(args).env_remove("DETERRA_THREADS");
    for (k, v) in envs {
        c.env(k, v);
    }
    c.output().expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("cfg.json");
    std::fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

const SMALL: &str = r#"{
  "seeds": [0],
  "collect": {"tuples": 1000, "episode_len": 20},
  "eval_episodes": 3
}"#;

#[test]
fn collect_is_exact_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = deterra(
            &[
                "--config",
                &cfg,
                "--seed",
                "7",
                "--out",
                out.to_str().unwrap(),
                "collect",
            ],
            &[],
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let ds = Dataset::load(&a.join("dataset.bin")).unwrap();
    assert_eq!(ds.records.len(), 1000);
    let bytes_a = std::fs::read(a.join("dataset.bin")).unwrap();
    let bytes_b = std::fs::read(b.join("dataset.bin")).unwrap();
    assert!(bytes_a == bytes_b, "same seed must give byte-identical datasets");

    let c = dir.path().join("c");
    let o = deterra(
        &["--config", &cfg, "--seed", "8", "--out", c.to_str().unwrap(), "collect"],
        &[],
    );
    assert!(o.status.success());
    assert!(std::fs::read(c.join("dataset.bin")).unwrap() != bytes_a);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let out = out.to_str().unwrap();
    for body in [
        r#"{"bogus": 1}"#,
        "{not json",
        r#"{"schema_version": 99}"#,
        r#"{"collect": {"tuples": 0}}"#,
    ] {
        let cfg = write_config(dir.path(), body);
        let o = deterra(&["--config", &cfg, "--out", out, "collect"], &[]);
        assert_eq!(
            o.status.code(),
            Some(2),
            "{body}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    let o = deterra(&["--config", "/nonexistent/cfg.json", "bench"], &[]);
    assert_eq!(o.status.code(), Some(2));
    let o = deterra(&["bench"], &[("DETERRA_THREADS", "zero")]);
    assert_eq!(o.status.code(), Some(2));
    let o = deterra(&["no-such-verb"], &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_uniform_reports_all_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("o");
    let o = deterra(
        &["--config", &cfg, "--out", out.to_str().unwrap(), "eval", "--uniform"],
        &[("DETERRA_THREADS", "2")],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    for k in ["ee_mean", "ee_std", "viol_mean", "viol_std"] {
        assert!(v[k].as_f64().is_some_and(f64::is_finite), "{k} missing in {v}");
    }
    assert!(out.join("eval_uniform.json").exists());
    assert!(out.join("eval_uniform.json.meta.json").exists());
}

#[test]
fn eval_missing_policy_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = deterra(
        &[
            "--out",
            out.to_str().unwrap(),
            "eval",
            "--policy",
            "/nonexistent/p.json",
        ],
        &[],
    );
    assert!(!o.status.success());
    assert_ne!(o.status.code(), Some(3));
}

#[test]
fn selftest_passes() {
    let o = deterra(&["selftest"], &[]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(0), "{stdout}");
    assert!(!stdout.contains("FAIL"));
}

#[test]
fn bench_prints_the_sweep() {
    let o = deterra(&["bench"], &[]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(text.lines().count(), 7);
}
