use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn hcrv(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hcrv")).args(args).current_dir(cwd).output().expect("spawn hcrv")
}

fn ok_json(out: Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

fn simulate_poisson(dir: &Path, seed: &str) -> Value {
    ok_json(hcrv(
        &["simulate", "--generator", "poisson-groups", "--means", "2,3,4", "--sizes", "10,10,10", "--seed", seed, "--out", "data"],
        dir,
    ))
}

#[test]
fn simulate_reports_k_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let v = simulate_poisson(tmp.path(), "7");
    assert_eq!(v["d"], 3);
    assert_eq!(v["n"], 30);
    assert!(v["k"].as_u64().unwrap() >= 1);
    let first = std::fs::read(tmp.path().join("data/data.json")).unwrap();
    simulate_poisson(tmp.path(), "7");
    assert_eq!(first, std::fs::read(tmp.path().join("data/data.json")).unwrap());
}

#[test]
fn hdp_generator_from_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("sim.json"), r#"{"spec": {"generator": "hdp-crf", "d": 2, "n_per_group": 5}}"#).unwrap();
    let v = ok_json(hcrv(&["simulate", "--config", "sim.json", "--out", "data"], tmp.path()));
    assert_eq!(v["d"], 2);
    assert_eq!(v["n"], 10);
}

#[test]
fn fit_writes_all_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    simulate_poisson(tmp.path(), "1");
    for sampler in ["mh", "mhlog", "exact", "ars", "hdppr", "hdpfixed"] {
        let out = format!("fit_{sampler}");
        let v = ok_json(hcrv(
            &[
                "fit",
                "--data",
                "data/data.json",
                "--alpha",
                "1",
                "--alpha0",
                "1",
                "--sampler",
                sampler,
                "--draws",
                "50",
                "--burnin",
                "10",
                "--trunc-L",
                "50",
                "--out",
                &out,
            ],
            tmp.path(),
        ));
        assert_eq!(v["status"], "ok", "{sampler}");
        assert_eq!(v["draws_written"], 50);
        for f in ["chain.csv", "weights.csv", "diag.json"] {
            let text = std::fs::read_to_string(tmp.path().join(&out).join(f)).unwrap();
            if f.ends_with(".csv") {
                assert!(text.starts_with("# hcrv-schema v1\n"), "{sampler} {f}");
            }
        }
    }
}

#[test]
fn fit_is_reproducible_and_config_overrides_flags() {
    let tmp = tempfile::tempdir().unwrap();
    simulate_poisson(tmp.path(), "2");
    std::fs::write(tmp.path().join("cfg.json"), r#"{"draws": 30, "sampler": "mhlog"}"#).unwrap();
    let run = |out: &str| {
        ok_json(hcrv(
            &["fit", "--data", "data/data.json", "--sigma2", "0.5", "--rho", "0.5", "--draws", "999", "--config", "cfg.json", "--out", out],
            tmp.path(),
        ))
    };
    let a = run("a");
    run("b");
    assert_eq!(a["draws_written"], 30);
    assert_eq!(a["sampler"], "mhlog");
    let read = |d: &str| std::fs::read(tmp.path().join(d).join("chain.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
}

#[test]
fn fit_rejects_missing_parameters() {
    let tmp = tempfile::tempdir().unwrap();
    simulate_poisson(tmp.path(), "3");
    let out = hcrv(&["fit", "--data", "data/data.json", "--out", "x"], tmp.path());
    assert!(!out.status.success());
    let out = hcrv(&["fit", "--data", "data/data.json", "--alpha", "1", "--out", "x"], tmp.path());
    assert!(!out.status.success());
}

#[test]
fn diag_reports_ess_and_ks() {
    let tmp = tempfile::tempdir().unwrap();
    simulate_poisson(tmp.path(), "4");
    for (out, seed) in [("a", "1"), ("b", "2")] {
        ok_json(hcrv(
            &[
                "fit",
                "--data",
                "data/data.json",
                "--alpha",
                "1",
                "--alpha0",
                "1",
                "--draws",
                "200",
                "--seed",
                seed,
                "--trunc-L",
                "20",
                "--out",
                out,
            ],
            tmp.path(),
        ));
    }
    let v = ok_json(hcrv(&["diag", "--chain", "a/chain.csv", "--columns", "alpha_t,lambda", "--against", "b/chain.csv"], tmp.path()));
    let s = v["summaries"].as_array().unwrap();
    assert_eq!(s.len(), 2);
    let ess = s[0]["ess"].as_f64().unwrap();
    assert!(ess > 0.0 && ess <= 200.0);
    let p = v["ks"][0]["p_value"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));
    let bad = hcrv(&["diag", "--chain", "a/chain.csv", "--columns", "nope"], tmp.path());
    assert!(!bad.status.success());
}

#[test]
fn elicit_writes_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let v = ok_json(hcrv(&["elicit", "--model", "hcrv,hdp", "--sigma2", "0.5", "--rho", "0.5", "--out", "g"], tmp.path()));
    let rows = v.as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1]["alpha"], 2.0);
    assert_eq!(rows[1]["alpha0"], 3.0);
    assert_eq!(rows[0]["alpha0"], 3.0);
    let grid = std::fs::read_to_string(tmp.path().join("g/grid.csv")).unwrap();
    assert!(grid.starts_with("# hcrv-schema v1\nsigma2,rho,alpha,alpha0,model\n"));
    assert_eq!(grid.lines().count(), 4);
}

#[test]
fn moments_for_both_models() {
    let tmp = tempfile::tempdir().unwrap();
    let v = ok_json(hcrv(&["moments", "--alpha", "1", "--alpha0", "1"], tmp.path()));
    let var = v["moments"]["variance"].as_f64().unwrap();
    assert!((var - 0.199_543_420_290_399).abs() < 1e-10);
    let v = ok_json(hcrv(&["moments", "--model", "hdp", "--alpha", "2", "--alpha0", "3"], tmp.path()));
    assert!((v["moments"]["sigma2"].as_f64().unwrap() - 0.5).abs() < 1e-12);
    assert!((v["moments"]["correlation"].as_f64().unwrap() - 0.5).abs() < 1e-12);
    let out = hcrv(&["moments", "--alpha", "-1", "--alpha0", "1"], tmp.path());
    assert!(!out.status.success());
}

#[test]
fn bench_writes_records_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(
        tmp.path().join("b.json"),
        r#"{"cells": [{"axis": "obs", "spec": {"generator": "hdp-crf", "d": 2, "n_per_group": 5, "alpha": 5.0, "alpha0": 3.0}}]}"#,
    )
    .unwrap();
    let v = ok_json(hcrv(
        &[
            "bench",
            "--grid",
            "obs",
            "--replicates",
            "2",
            "--samplers",
            "mhlog,exact",
            "--draws",
            "50",
            "--burnin",
            "10",
            "--jobs",
            "2",
            "--config",
            "b.json",
            "--out",
            "bench",
        ],
        tmp.path(),
    ));
    assert_eq!(v["records"], 4);
    assert_eq!(v["failed"], 0);
    let csv = std::fs::read_to_string(tmp.path().join("bench/bench.csv")).unwrap();
    assert!(csv.starts_with("# hcrv-schema v1\n"));
    assert_eq!(csv.lines().count(), 6);
    assert!(tmp.path().join("bench/bench_summary.csv").exists());
}
