mod common;

use std::path::Path;
use std::process::Command;

use sharpmin::checkpoint::load_checkpoint;
use sharpmin::metrics::read_metrics;
use sharpmin::EXIT_NAN;
use sharpmin_core::optim::{OptimizerConfig, SgdConfig};

fn sharpmin(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_sharpmin"))
        .args(args)
        .env("SHARPMIN_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, cfg: &sharpmin::RunConfig) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, cfg.to_json()).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn train_then_inspect_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::tiny_mlp(20);
    let config = write_config(dir.path(), &cfg);
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap();
    let status = sharpmin(&["train", "--config", &config, "--out", out_s]);
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    assert_eq!(read_metrics(&out.join("metrics.jsonl")).unwrap().len(), 21);
    let ckpt = out.join("checkpoint.bin");
    let ckpt_s = ckpt.to_str().unwrap();

    let hs = sharpmin(&["hessian-stats", "--config", &config, "--checkpoint", ckpt_s]);
    assert!(hs.status.success());
    let report: serde_json::Value = serde_json::from_slice(&hs.stdout).unwrap();
    assert_eq!(report["step"], 20);
    assert!(report["stats"]["trace_ggn"]["estimate"].as_f64().unwrap() > 0.0);

    let diag = sharpmin(&["diagnose", "--config", &config, "--checkpoint", ckpt_s]);
    assert!(diag.status.success());
    let record: serde_json::Value = serde_json::from_slice(&diag.stdout).unwrap();
    let d = &record["decomposition"];
    let sum: f64 = ["tau_logit", "tau_func", "tau_cross"].iter().map(|k| d[k].as_f64().unwrap()).sum();
    assert!((sum - 1.0).abs() < 1e-6);

    let prune = sharpmin(&["prune-eval", "--config", &config, "--checkpoint", ckpt_s, "--sparsities", "0,1"]);
    assert!(prune.status.success());
    let csv = String::from_utf8(prune.stdout).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("sparsity,pruned,eligible,eval_loss\n0,0,"));

    let sweep_out = dir.path().join("sweep");
    let sweep = sharpmin(&[
        "rho-sweep", "--config", &config, "--out", sweep_out.to_str().unwrap(),
        "--rhos", "0,0.1", "--variants", "sam,logit_sam",
    ]);
    assert!(sweep.status.success());
    let table = std::fs::read_to_string(sweep_out.join("sweep.csv")).unwrap();
    assert_eq!(table.lines().count(), 5);
}

#[test]
fn seeds_override_and_reproduce() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &common::tiny_lm(5));
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let o = sharpmin(&["train", "--config", &config, "--out", out.to_str().unwrap(), "--seed", seed]);
        assert!(o.status.success());
        std::fs::read(out.join("metrics.jsonl")).unwrap()
    };
    assert_eq!(run("a", "4"), run("b", "4"));
    assert_ne!(run("a", "4"), run("c", "5"));
}

#[test]
fn diverging_run_exits_with_code_three_and_keeps_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::tiny_mlp(50);
    cfg.optimizer = OptimizerConfig::Sgd(SgdConfig { lr: 1e30 });
    let config = write_config(dir.path(), &cfg);
    let out = dir.path().join("run");
    let o = sharpmin(&["train", "--config", &config, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(EXIT_NAN));
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["status"], "nan");
    let nan_step = summary["nan_step"].as_u64().unwrap();
    let (header, params) = load_checkpoint(&out.join("checkpoint.bin"), &cfg.model, &cfg.model_hash()).unwrap();
    assert_eq!(header.step, nan_step - 1);
    assert_eq!(header.step, summary["steps_completed"].as_u64().unwrap());
    assert!(params.len() == cfg.model.param_count());
    read_metrics(&out.join("metrics.jsonl")).unwrap();
}

#[test]
fn rmt_demo_and_bad_input() {
    let o = sharpmin(&["rmt-demo", "--n", "32", "--trials", "5", "--seed", "1"]);
    assert!(o.status.success());
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["per_trial"].as_array().unwrap().len(), 5);

    assert!(!sharpmin(&["rmt-demo", "--n", "4"]).status.success());
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"model": {"type": "mlp"}, "data": {"kind": "text"}, "extra": 1}"#).unwrap();
    let o = sharpmin(&["train", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("invalid configuration"));
}
