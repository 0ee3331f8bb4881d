mod common;

use std::path::Path;
use std::process::Command;

use common::{honest_reply, write_rubrics, MockServer};

fn itemsel(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_itemsel")).args(args).output().unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn ok(args: &[&str]) {
    let (code, err) = itemsel(args);
    assert_eq!(code, 0, "{args:?}: {err}");
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn synth_then_evaluate_produces_reports() {
    let d = tempfile::tempdir().unwrap();
    let b = d.path().join("b");
    ok(&["synth", "--items", "200", "--models", "40", "--seed", "7", "--out", p(&b)]);
    let out = d.path().join("out");
    let exp = d.path().join("exp.toml");
    std::fs::write(&exp, "methods = [\"random\", \"clustering_scales\", \"scales_pp\"]\npercents = [0.05, 0.1]\nseeds = [0, 1, 2]\n").unwrap();
    ok(&[
        "evaluate",
        "--config", p(&exp),
        "--items", p(&b.join("items.jsonl")),
        "--annotations", p(&b.join("annotations.jsonl")),
        "--perf", p(&b.join("perf.csv")),
        "--order", p(&b.join("order.csv")),
        "--holdout", "10",
        "--out", p(&out),
    ]);
    let mae = std::fs::read_to_string(out.join("mae.csv")).unwrap();
    let lines: Vec<&str> = mae.lines().collect();
    assert_eq!(lines[0], "method,percent,mean,std,n_seeds,diagnostic");
    assert_eq!(lines.len(), 1 + 3 * 2);
    assert!(lines[1].starts_with("random,5,"));
    assert!(out.join("raw.csv").exists() && out.join("coords.csv").exists());
}

#[test]
fn exit_codes() {
    let (code, err) = itemsel(&["frobnicate"]);
    assert_eq!(code, 1);
    assert!(err.contains("Usage"), "{err}");

    let (code, err) = itemsel(&["select", "--percent", "0"]);
    assert_eq!(code, 1);
    assert!(err.contains("--percent"), "{err}");

    let (code, err) = itemsel(&["select", "--bogus"]);
    assert_eq!(code, 1, "{err}");

    let d = tempfile::tempdir().unwrap();
    let missing = d.path().join("nope.json");
    let (code, err) = itemsel(&["select", "--space", p(&missing), "--percent", "5", "--out", p(&d.path().join("s.json"))]);
    assert_eq!(code, 3);
    assert!(err.contains("nope.json"), "{err}");

    let bad = d.path().join("items.jsonl");
    std::fs::write(&bad, "{\"id\":\"a\",\"benchmark\":\"b\"}\n").unwrap();
    let (code, err) = itemsel(&[
        "evaluate", "--items", p(&bad), "--perf", p(&bad), "--out", p(d.path()), "--methods", "random",
    ]);
    assert_eq!(code, 1);
    assert!(err.contains("line 1") && err.contains("text"), "{err}");

    let (code, _) = itemsel(&["synth", "--items", "3", "--models", "40", "--out", p(d.path())]);
    assert_eq!(code, 1);
}

#[test]
fn help_lists_every_flag() {
    for (sub, flags) in [
        ("select", vec!["--space", "--method", "--percent", "--out", "--seed", "--config", "--log-level"]),
        ("evaluate", vec!["--items", "--annotations", "--perf", "--order", "--holdout", "--out"]),
        ("annotate", vec!["--items", "--rubrics", "--endpoint", "--cache", "--max-parallel"]),
    ] {
        let out = Command::new(env!("CARGO_BIN_EXE_itemsel")).args([sub, "--help"]).output().unwrap();
        assert!(out.status.success());
        let text = String::from_utf8_lossy(&out.stdout);
        for f in flags {
            assert!(text.contains(f), "{sub} --help lacks {f}");
        }
    }
}

#[test]
fn embed_select_estimate_chain() {
    let d = tempfile::tempdir().unwrap();
    let b = d.path().join("b");
    ok(&["synth", "--items", "150", "--models", "12", "--seed", "1", "--out", p(&b)]);
    let space = d.path().join("space.json");
    ok(&["embed", "--annotations", p(&b.join("annotations.jsonl")), "--reducer", "pca", "--dim", "3", "--seed", "7", "--out", p(&space)]);
    let subset = d.path().join("subset.json");
    ok(&["select", "--space", p(&space), "--method", "kmeans", "--percent", "10", "--seed", "7", "--out", p(&subset)]);
    let sub: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&subset).unwrap()).unwrap();
    assert_eq!(sub["k"], 15);
    let selected: Vec<String> = sub["selected_item_ids"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()).collect();

    let perf = std::fs::read_to_string(b.join("perf.csv")).unwrap();
    let mut scores = String::from("model_id,item_id,score\n");
    for line in perf.lines().skip(1) {
        let parts: Vec<&str> = line.split(',').collect();
        if parts[0] == "model11" && selected.iter().any(|s| s == parts[1]) {
            scores.push_str(line);
            scores.push('\n');
        }
    }
    let scores_path = d.path().join("scores.csv");
    std::fs::write(&scores_path, scores).unwrap();
    let report = d.path().join("report.json");
    ok(&[
        "estimate", "--subset", p(&subset), "--subset-scores", p(&scores_path),
        "--annotations", p(&b.join("annotations.jsonl")), "--out", p(&report),
    ]);
    let rep: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let r = &rep[0];
    assert_eq!(r["model_id"], "model11");
    for field in ["cluster_estimate", "logistic_estimate", "lambda", "bias_hat", "var_hat", "final_estimate"] {
        assert!(r[field].is_number(), "{field}");
    }

    let irt = d.path().join("irt.json");
    ok(&["irt-fit", "--perf", p(&b.join("perf.csv")), "--dim", "2", "--max-sweeps", "30", "--seed", "7", "--out", p(&irt)]);
    let model_centric = d.path().join("mc.json");
    ok(&["select", "--perf", p(&b.join("perf.csv")), "--source-models", "model00,model01,model02", "--method", "kmedoids", "--percent", "5", "--out", p(&model_centric)]);
}

#[test]
fn config_file_supplies_missing_flags() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("c.toml");
    let b = d.path().join("b");
    std::fs::write(&cfg, format!("seed = 3\n[synth]\nitems = 40\nmodels = 10\nout = \"{}\"\n", p(&b))).unwrap();
    ok(&["--config", p(&cfg), "synth"]);
    let items = std::fs::read_to_string(b.join("items.jsonl")).unwrap();
    assert_eq!(items.lines().count(), 40);
    let b2 = d.path().join("b2");
    ok(&["--config", p(&cfg), "synth", "--items", "25", "--out", p(&b2)]);
    assert_eq!(std::fs::read_to_string(b2.join("items.jsonl")).unwrap().lines().count(), 25);
}

#[test]
fn gnn_train_and_predict() {
    let d = tempfile::tempdir().unwrap();
    let feats = d.path().join("features.csv");
    let labels = d.path().join("labels.jsonl");
    let mut f = String::from("item_id,f0,f1,f2\n");
    let mut l = String::new();
    for i in 0..30 {
        let c = i % 3;
        let v = [(c == 0) as u8 as f64 + 0.01 * i as f64, (c == 1) as u8 as f64, (c == 2) as u8 as f64 + 0.1];
        f.push_str(&format!("x{i},{},{},{}\n", v[0], v[1], v[2]));
        if i < 24 {
            let lv = vec![c as i64 + 1; 16];
            l.push_str(&format!("{{\"item_id\":\"x{i}\",\"levels\":{lv:?}}}\n"));
        }
    }
    std::fs::write(&feats, f).unwrap();
    std::fs::write(&labels, l).unwrap();
    let ckpt = d.path().join("model.bin");
    ok(&[
        "gnn-train", "--features", p(&feats), "--labels", p(&labels), "--out", p(&ckpt),
        "--hidden", "16", "--epochs", "200", "--k-neighbors", "4", "--seed", "2",
        "--report", p(&d.path().join("train.json")),
    ]);
    let pred = d.path().join("pred.jsonl");
    ok(&["gnn-predict", "--features", p(&feats), "--model", p(&ckpt), "--k-neighbors", "4", "--out", p(&pred)]);
    let text = std::fs::read_to_string(&pred).unwrap();
    assert_eq!(text.lines().count(), 30);
    let last: serde_json::Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
    assert_eq!(last["item_id"], "x29");
    assert_eq!(last["levels"][0], 3);
}

#[test]
fn annotate_through_the_cli() {
    let d = tempfile::tempdir().unwrap();
    let server = MockServer::start(honest_reply);
    let rubrics = d.path().join("rubrics");
    write_rubrics(&rubrics);
    let items = d.path().join("items.jsonl");
    std::fs::write(&items, "{\"id\":\"a\",\"benchmark\":\"b\",\"text\":\"first\"}\n{\"id\":\"b\",\"benchmark\":\"b\",\"text\":\"second\"}\n").unwrap();
    let out = d.path().join("ann.jsonl");
    let cache = d.path().join("cache.jsonl");
    let args = [
        "annotate", "--items", p(&items), "--rubrics", p(&rubrics), "--out", p(&out),
        "--endpoint", &server.url, "--cache", p(&cache),
    ];
    ok(&args);
    assert_eq!(server.count(), 32);
    let first = std::fs::read(&out).unwrap();
    ok(&args);
    assert_eq!(server.count(), 32);
    assert_eq!(std::fs::read(&out).unwrap(), first);
}
