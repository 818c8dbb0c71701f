use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ganmc"));
    c.env_remove("GANMC_OUT_DIR");
    c
}

fn data_file() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/ldw_exp.csv")
}

fn write_config(dir: &Path, extra: serde_json::Value) -> PathBuf {
    let mut cfg = serde_json::json!({
        "seed": 17,
        "data": data_file(),
        "train": {
            "total_steps": 2,
            "n_critic": 1,
            "batch_size": 64,
            "generator_hidden": [8],
            "critic_hidden": [8]
        }
    });
    if let (Some(base), Some(more)) = (cfg.as_object_mut(), extra.as_object()) {
        for (k, v) in more {
            base.insert(k.clone(), v.clone());
        }
    }
    let p = dir.join("config.json");
    std::fs::write(&p, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    p
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "command failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn train(dir: &Path, cfg: &Path, out: &Path) {
    run(bin().current_dir(dir).args(["--config"]).arg(cfg).arg("--out").arg(out).arg("train"));
}

#[test]
fn train_population_simulate_chain() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), serde_json::json!({}));
    let out = dir.path().join("o");
    train(dir.path(), &cfg, &out);
    for f in ["gx.json", "gy.json", "models.json", "train_log_x.csv", "train_log_y.csv"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let log = std::fs::read_to_string(out.join("train_log_x.csv")).unwrap();
    assert!(log.starts_with("# ganmc "));
    assert!(log.contains("seed=17"));
    assert_eq!(log.lines().count(), 1 + 1 + 2);

    run(bin().arg("--config").arg(&cfg).arg("--out").arg(&out).args(["population", "--size", "10", "--models"]).arg(&out));
    assert!(out.join("population.bin").exists());
    run(bin()
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(["simulate", "--estimators", "DIFF,CM-LM", "--reps", "5", "-n", "10", "--population"])
        .arg(out.join("population.bin")));
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert!(lines[0].starts_with("# ganmc "));
    assert!(lines[1].starts_with("estimator,"));
    assert_eq!(lines.len(), 4);
    assert!(lines[2].starts_with("DIFF,"));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["reps"], 5);
    assert_eq!(report["meta"]["seed"], 17);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), serde_json::json!({}));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    train(dir.path(), &cfg, &a);
    train(dir.path(), &cfg, &b);
    for f in ["gx.json", "gy.json", "train_log_y.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    for o in [&a, &b] {
        run(bin().arg("--config").arg(&cfg).arg("--out").arg(o).args(["generate", "-n", "50", "--models"]).arg(&a));
    }
    let ga = std::fs::read(a.join("generated.csv")).unwrap();
    assert_eq!(ga, std::fs::read(b.join("generated.csv")).unwrap());
    let text = String::from_utf8(ga).unwrap();
    assert_eq!(text.lines().nth(1).unwrap(), "black,hispanic,age,married,nodegree,education,re74,re75,re78,treat");
    assert_eq!(text.lines().count(), 52);

    run(bin().arg("--config").arg(&cfg).args(["--seed", "18"]).arg("--out").arg(&b).arg("train"));
    assert_ne!(std::fs::read(a.join("gx.json")).unwrap(), std::fs::read(b.join("gx.json")).unwrap());
}

#[test]
fn saved_model_reloads_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), serde_json::json!({"train": {"total_steps": 1, "n_critic": 1, "batch_size": 64, "generator_hidden": [4], "critic_hidden": [4]}}));
    let out = dir.path().join("o");
    train(dir.path(), &cfg, &out);
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("gy.json")).unwrap()).unwrap();
    let model = ganmc::wgan::GeneratorModel::from_json(&doc["model"].to_string()).unwrap();
    let again = ganmc::wgan::GeneratorModel::from_json(&model.to_json().unwrap()).unwrap();
    assert_eq!(model.net().unwrap(), again.net().unwrap());
    assert_eq!(model.config.total_steps, 1);
    assert_eq!(doc["meta"]["seed"], 17);
}

#[test]
fn configuration_errors_are_enumerated() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        serde_json::json!({"seed": null, "train": {"n_critic": 0, "lambda": -1.0, "dropout_rate": 2.0}, "data": "/nonexistent.csv"}),
    );
    let out = bin().arg("--config").arg(&cfg).arg("train").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    let v = err["error"]["violations"].as_array().unwrap();
    assert!(v.len() >= 5, "{v:?}");
    let text = serde_json::to_string(v).unwrap();
    for needle in ["seed", "data", "n_critic", "lambda", "dropout"] {
        assert!(text.contains(needle), "missing {needle} in {text}");
    }

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"seed": 1, "unknown_key": 3}"#).unwrap();
    let out = bin().arg("--config").arg(&bad).arg("train").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn output_directory_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), serde_json::json!({"output_dir": dir.path().join("from_config")}));
    run(bin().arg("--config").arg(&cfg).arg("train"));
    assert!(dir.path().join("from_config/models.json").exists());
    run(bin().env("GANMC_OUT_DIR", dir.path().join("from_env")).arg("--config").arg(&cfg).arg("train"));
    assert!(dir.path().join("from_env/models.json").exists());
    run(bin()
        .env("GANMC_OUT_DIR", dir.path().join("from_env2"))
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("from_flag"))
        .arg("train"));
    assert!(dir.path().join("from_flag/models.json").exists());
    assert!(!dir.path().join("from_env2").exists());
}

#[test]
fn diagnose_writes_fidelity_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        serde_json::json!({"diagnose": {"real": data_file(), "wasserstein_max_rows": 100, "mvn_samples": 2, "bins": 10}}),
    );
    let out = dir.path().join("o");
    train(dir.path(), &cfg, &out);
    run(bin().arg("--config").arg(&cfg).arg("--out").arg(&out).args(["generate", "-n", "445", "--models"]).arg(&out));
    run(bin().arg("--config").arg(&cfg).arg("--out").arg(&out).arg("diagnose").arg("--generated").arg(out.join("generated.csv")));
    let f: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("fidelity.json")).unwrap()).unwrap();
    let gen = f["w1_generated"].as_f64().unwrap();
    let mvn = f["w1_mvn"].as_f64().unwrap();
    assert!(gen > 0.0 && mvn > 0.0);
    assert!((f["ratio"].as_f64().unwrap() - gen / mvn).abs() < 1e-9);
    assert!(out.join("diagnose/index.json").exists());
}
