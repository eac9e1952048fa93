use std::path::Path;
use std::process::{Command, Output};

fn pflab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pflab"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path) -> String {
    let path = dir.join("config.json");
    let cfg = serde_json::json!({
        "scenario": {
            "train": {"n_samples": 200},
            "val": {"n_samples": 50},
            "test": {"n_samples": 40},
            "ood": {"n_samples": 40}
        },
        "train": {
            "mlp": {"epochs": 2, "hidden": [16]},
            "pimp": {"epochs": 2, "hidden": [16], "pimp_layers": 4}
        },
        "bench": {"seeds": [1], "timing_repeats": 1}
    });
    std::fs::write(&path, cfg.to_string()).unwrap();
    path.to_string_lossy().into_owned()
}

fn stdout_json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn generate_train_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let run = dir.path().join("run");
    let run_s = run.to_str().unwrap();

    let gen = stdout_json(&pflab(&["--config", &cfg, "--out", run_s, "--json", "generate"]));
    assert_eq!(gen.as_array().unwrap().len(), 4);
    assert_eq!(gen[0]["n_samples"], 200);
    assert!(run.join("data/ood/manifest.json").is_file());
    assert!(run.join("config.json").is_file());

    let trained = stdout_json(&pflab(&[
        "--config", &cfg, "--out", run_s, "--json", "train", "--model", "pimp", "--seeds", "3,4",
    ]));
    assert_eq!(trained.as_array().unwrap().len(), 2);
    let ckpt = run.join("checkpoints/pimp/seed-3");
    assert!(ckpt.join("manifest.json").is_file());

    let eval = stdout_json(&pflab(&[
        "--config",
        &cfg,
        "--out",
        run_s,
        "--json",
        "evaluate",
        "--model",
        ckpt.to_str().unwrap(),
        "--split",
        "ood",
    ]));
    assert_eq!(eval["n_samples"], 40);
    assert!(eval["physics"]["p5"].as_f64().is_some());

    let mp = stdout_json(&pflab(&[
        "--config", &cfg, "--out", run_s, "--json", "evaluate", "--model", "mp-opt",
    ]));
    assert_eq!(mp["physics"]["p5"], 0.0);

    let human = pflab(&["--config", &cfg, "--out", run_s, "evaluate", "--model", "dc"]);
    assert!(human.status.success());
    assert!(String::from_utf8_lossy(&human.stdout).contains("P5"));
}

#[test]
fn solve_reports_agreement_and_budget_exhaustion() {
    let res = stdout_json(&pflab(&["--json", "solve", "--disconnect", "2"]));
    assert_eq!(res["mp_converged"], true);
    assert!(res["dc_max_residual"].as_f64().unwrap() < 1e-9);
    assert!(res["max_abs_diff"].as_f64().unwrap() < 1e-4);

    let short = pflab(&["solve", "--layers", "5"]);
    assert!(short.status.success());
    assert!(String::from_utf8_lossy(&short.stderr).contains("did not converge"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    let out = pflab(&["--config", bad.to_str().unwrap(), "solve"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let out = pflab(&["--config", dir.path().join("absent.json").to_str().unwrap(), "solve"]);
    assert_eq!(out.status.code(), Some(2));

    let out = pflab(&[
        "--out",
        dir.path().join("empty").to_str().unwrap(),
        "train",
        "--model",
        "mlp",
    ]);
    assert_eq!(out.status.code(), Some(3));

    let broken = dir.path().join("grid.json");
    std::fs::write(&broken, r#"{"name": "x"}"#).unwrap();
    let out = pflab(&["--grid", broken.to_str().unwrap(), "solve"]);
    assert_ne!(out.status.code(), Some(0));

    let out = pflab(&["solve", "--disconnect", "99"]);
    assert_eq!(out.status.code(), Some(2));

    let out = pflab(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}
