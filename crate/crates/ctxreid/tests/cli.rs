//! End-to-end tests of the `ctxreid` binary: subcommand wiring, file
//! formats, exit codes, and the machine-readable error output.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::tempdir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ctxreid"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_world_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("world.json");
    fs::write(
        &path,
        r#"{
            "n_identities": 8,
            "sightings_per_identity": 2,
            "n_unpaired": 3,
            "d_raw": 16,
            "noise_sigma": 0.1,
            "cotravel_prob": 0.5,
            "persons_per_scene": [2, 4],
            "seed": 4
        }"#,
    )
    .unwrap();
    path
}

#[test]
fn gen_cluster_train_eval_chain() {
    let dir = tempdir().unwrap();
    let world_cfg = write_world_config(dir.path());
    let data = dir.path().join("data");

    let out = run(&[
        "gen",
        "--config",
        world_cfg.to_str().unwrap(),
        "--out-dir",
        data.to_str().unwrap(),
    ]);
    assert_success(&out);
    for name in ["embeddings.jsonl", "catalog.json", "labels.json"] {
        assert!(data.join(name).exists(), "missing {name}");
    }

    // Cluster to stdout.
    let out = run(&[
        "cluster",
        "--embeddings",
        data.join("embeddings.jsonl").to_str().unwrap(),
        "--catalog",
        data.join("catalog.json").to_str().unwrap(),
        "--lambda-sim",
        "0.1",
        "--neighbor-mode",
        "masked",
    ]);
    assert_success(&out);
    let parsed: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let labels = parsed["labels"].as_array().unwrap();
    assert_eq!(labels.len(), 19); // 8 * 2 + 3

    // Train with a small config.
    let train_cfg = dir.path().join("train.json");
    fs::write(
        &train_cfg,
        r#"{ "epochs": 2, "iters_per_epoch": 4, "batch_size": 8, "d_out": 8, "seed": 1 }"#,
    )
    .unwrap();
    let run_dir = dir.path().join("run");
    let out = run(&[
        "train",
        "--embeddings",
        data.join("embeddings.jsonl").to_str().unwrap(),
        "--catalog",
        data.join("catalog.json").to_str().unwrap(),
        "--config",
        train_cfg.to_str().unwrap(),
        "--out",
        run_dir.to_str().unwrap(),
    ]);
    assert_success(&out);
    for name in ["encoder.json", "banks.json", "history.jsonl"] {
        assert!(run_dir.join(name).exists(), "missing {name}");
    }
    let history = fs::read_to_string(run_dir.join("history.jsonl")).unwrap();
    assert_eq!(history.lines().count(), 2);

    // Evaluate a tiny handmade retrieval problem: the query is gallery item
    // 0, item 1 is orthogonal noise.
    let queries = dir.path().join("queries.jsonl");
    fs::write(&queries, "{\"id\":0,\"vec\":[1.0,0.0]}\n").unwrap();
    let gallery = dir.path().join("gallery.jsonl");
    fs::write(
        &gallery,
        "{\"id\":0,\"vec\":[1.0,0.0]}\n{\"id\":1,\"vec\":[0.0,1.0]}\n",
    )
    .unwrap();
    let relevance = dir.path().join("relevance.json");
    fs::write(&relevance, r#"[{"query": 0, "relevant": [0]}]"#).unwrap();
    let out = run(&[
        "eval",
        "--queries",
        queries.to_str().unwrap(),
        "--gallery",
        gallery.to_str().unwrap(),
        "--relevance",
        relevance.to_str().unwrap(),
        "--topk",
        "1,2",
    ]);
    assert_success(&out);
    let parsed: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(parsed["map"].as_f64().unwrap(), 1.0);
    assert_eq!(parsed["cmc"]["1"].as_f64().unwrap(), 1.0);
}

#[test]
fn gen_is_deterministic_and_seed_flag_overrides() {
    let dir = tempdir().unwrap();
    let world_cfg = write_world_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    for (out_dir, seed) in [(&a, None), (&b, None), (&c, Some("12"))] {
        let mut args = vec![
            "gen",
            "--config",
            world_cfg.to_str().unwrap(),
            "--out-dir",
            out_dir.to_str().unwrap(),
        ];
        if let Some(s) = seed {
            args.extend(["--seed", s]);
        }
        assert_success(&run(&args));
    }
    let bytes_a = fs::read(a.join("embeddings.jsonl")).unwrap();
    let bytes_b = fs::read(b.join("embeddings.jsonl")).unwrap();
    let bytes_c = fs::read(c.join("embeddings.jsonl")).unwrap();
    assert_eq!(bytes_a, bytes_b);
    assert_ne!(bytes_a, bytes_c); // --seed overrides the config seed
}

#[test]
fn missing_catalog_exits_2_with_error_json_naming_the_path() {
    let dir = tempdir().unwrap();
    let emb = dir.path().join("emb.jsonl");
    fs::write(&emb, "{\"id\":0,\"vec\":[1.0,0.0]}\n{\"id\":1,\"vec\":[0.0,1.0]}\n").unwrap();
    let out = run(&[
        "cluster",
        "--embeddings",
        emb.to_str().unwrap(),
        "--catalog",
        "/no/such/catalog.json",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    let parsed: serde_json::Value = serde_json::from_str(stderr.trim()).unwrap();
    assert_eq!(parsed["error"]["kind"], "file");
    assert!(parsed["error"]["message"]
        .as_str()
        .unwrap()
        .contains("/no/such/catalog.json"));
}

#[test]
fn malformed_config_exits_2() {
    let dir = tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    let out = run(&["gen", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("bad.json"));
}

#[test]
fn negative_lambda_is_rejected() {
    let dir = tempdir().unwrap();
    let world_cfg = write_world_config(dir.path());
    let data = dir.path().join("data");
    assert_success(&run(&[
        "gen",
        "--config",
        world_cfg.to_str().unwrap(),
        "--out-dir",
        data.to_str().unwrap(),
    ]));
    let out = run(&[
        "cluster",
        "--embeddings",
        data.join("embeddings.jsonl").to_str().unwrap(),
        "--catalog",
        data.join("catalog.json").to_str().unwrap(),
        "--lambda-sim=-0.5",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("negative_lambda"));
}

#[test]
fn pipeline_runs_and_replays_byte_identically() {
    let dir = tempdir().unwrap();
    let cfg = dir.path().join("pipeline.json");
    fs::write(
        &cfg,
        r#"{
            "world": {
                "n_identities": 10,
                "sightings_per_identity": 2,
                "n_unpaired": 4,
                "d_raw": 16,
                "noise_sigma": 0.1,
                "cotravel_prob": 0.5,
                "persons_per_scene": [2, 4],
                "seed": 8
            },
            "train": { "epochs": 2, "iters_per_epoch": 4, "batch_size": 8, "d_out": 8, "seed": 2 }
        }"#,
    )
    .unwrap();
    let out_a = dir.path().join("run_a");
    let out = run(&[
        "pipeline",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_a.to_str().unwrap(),
    ]);
    assert_success(&out);

    let out_b = dir.path().join("run_b");
    let out = run(&[
        "pipeline",
        "--config",
        out_a.join("manifest.json").to_str().unwrap(),
        "--out",
        out_b.to_str().unwrap(),
    ]);
    assert_success(&out);

    let bytes_a = fs::read(out_a.join("metrics.json")).unwrap();
    let bytes_b = fs::read(out_b.join("metrics.json")).unwrap();
    assert_eq!(bytes_a, bytes_b);

    let metrics: serde_json::Value = serde_json::from_slice(&bytes_a).unwrap();
    assert!(metrics["clustering"]["f1"].as_f64().unwrap() > 0.0);
    assert!(metrics["trained"]["map"].as_f64().is_some());
}

#[test]
fn threads_flag_does_not_change_results() {
    let dir = tempdir().unwrap();
    let world_cfg = write_world_config(dir.path());
    let data = dir.path().join("data");
    assert_success(&run(&[
        "gen",
        "--config",
        world_cfg.to_str().unwrap(),
        "--out-dir",
        data.to_str().unwrap(),
    ]));
    let mut outputs = Vec::new();
    for threads in ["1", "4"] {
        let out = run(&[
            "--threads",
            threads,
            "cluster",
            "--embeddings",
            data.join("embeddings.jsonl").to_str().unwrap(),
            "--catalog",
            data.join("catalog.json").to_str().unwrap(),
        ]);
        assert_success(&out);
        outputs.push(out.stdout);
    }
    assert_eq!(outputs[0], outputs[1]);
}
