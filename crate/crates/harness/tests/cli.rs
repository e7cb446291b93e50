use std::fs;
use std::process::{Command, Output};

fn synthbias(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_synthbias")).args(args).output().unwrap()
}

fn error_json(out: &Output) -> serde_json::Value {
    assert!(!out.status.success());
    serde_json::from_slice(&out.stderr).unwrap()
}

#[test]
fn generate_then_audit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("gen.json");
    fs::write(&cfg, r#"{"n_per_class": 100, "bias_ratio": 0.9, "test_per_subgroup": 10}"#).unwrap();
    let out = dir.path().join("data");
    let o = synthbias(&["generate", "--config", cfg.to_str().unwrap(), "--seed", "4", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["train.csv", "validation.csv", "test.csv", "synthetic_test.csv", "train_table.csv", "generator.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let table = fs::read_to_string(out.join("train_table.csv")).unwrap();
    assert!(table.starts_with("y,b,g,count"));
    assert!(table.contains("0,0,real,90"));

    let o = synthbias(&["audit", out.join("train_table.csv").to_str().unwrap(), "--theorem-cap", "1"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v[0]["bias_report"]["biased_wrt_b"], true);
    assert_eq!(v[0]["lemma1_holds"], false);
    assert_eq!(v[0]["theorem"]["augmentations_checked"], 16);
    assert_eq!(v[0]["theorem"]["holds"], true);
}

#[test]
fn train_single_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cell.json");
    fs::write(
        &cfg,
        r#"{"generator": {"n_per_class": 200, "bias_ratio": 0.95, "test_per_subgroup": 20},
            "protocol": {"lr_grid": [0.1], "train": {"epochs": 3}, "finetune": {"epochs": 3, "freeze_features": true}, "pretrain": {"epochs": 3}},
            "augmentation": "ASB", "method": "GroupDRO"}"#,
    )
    .unwrap();
    let out = dir.path().join("run");
    let o = synthbias(&["train", "--config", cfg.to_str().unwrap(), "--seed", "9", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 2);
    assert_eq!(v["selected_lr"], 0.1);
    assert!(out.join("model.json").exists() && out.join("rows.csv").exists());
}

#[test]
fn grid_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("grid.json");
    fs::write(
        &cfg,
        r#"{"bias_ratios": [0.95], "augmentations": ["None", "FFR"], "methods": ["ERM"], "seeds": [1, 2],
            "output_dir": "ignored",
            "generator": {"n_per_class": 200, "test_per_subgroup": 20},
            "protocol": {"lr_grid": [0.1], "train": {"epochs": 3}, "finetune": {"epochs": 3, "freeze_features": true}, "pretrain": {"epochs": 3}}}"#,
    )
    .unwrap();
    let out = dir.path().join("grid");
    let args = ["grid", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--workers", "2"];
    let o = synthbias(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["trained"], 4);

    let again = synthbias(&args);
    assert_eq!(error_json(&again)["error"], "manifest_conflict");
    let mut resumed = args.to_vec();
    resumed.push("--resume");
    let o = synthbias(&resumed);
    assert!(o.status.success());
    assert_eq!(serde_json::from_slice::<serde_json::Value>(&o.stdout).unwrap()["skipped"], 4);

    let results = out.join("results.csv");
    let o = synthbias(&["report", results.to_str().unwrap()]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("averaged over seeds"));
    assert!(text.contains("Ordering"));

    let o = synthbias(&["report", results.to_str().unwrap(), "--json"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(!v["aggregates"].as_array().unwrap().is_empty());
}

#[test]
fn failures_emit_json_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "method,WA\nERM,0.5\n").unwrap();
    let v = error_json(&synthbias(&["report", bad.to_str().unwrap()]));
    assert_eq!(v["error"], "schema_mismatch");
    assert!(v["message"].as_str().unwrap().contains("bias_ratio"));

    let empty = dir.path().join("empty.csv");
    fs::write(&empty, "method,augmentation,bias_ratio,seed,scope,WA,BA,probe_acc\n").unwrap();
    assert_eq!(error_json(&synthbias(&["report", empty.to_str().unwrap()]))["error"], "empty_results");

    let v = error_json(&synthbias(&["grid", "--config", dir.path().join("missing.json").to_str().unwrap()]));
    assert_eq!(v["error"], "cli");

    let cfg = dir.path().join("gen.json");
    fs::write(&cfg, r#"{"n_per_class": 100, "bias_ratio": 0.999}"#).unwrap();
    let v = error_json(&synthbias(&["generate", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]));
    assert_eq!(v["error"], "core");
}
