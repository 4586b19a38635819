mod common;

use std::fs;

use serde_json::{json, Value};

use common::{bin, code, path_str, run, stderr, stdout, write_config};

fn tiny_model() -> Value {
    json!({"d_model": 8, "n_heads": 2, "n_layers": 1, "d_ff": 16})
}

#[test]
fn gen_data_writes_items_and_rejects_bad_arguments() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c.jsonl");
    let o = run(&["gen-data", "--seed", "3", "--n", "12", "--out", path_str(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 12);

    assert_eq!(code(&run(&["gen-data", "--n", "0", "--out", path_str(&out)])), 1);
    assert_eq!(code(&run(&["gen-data", "--n", "x", "--out", path_str(&out)])), 1);
    let missing = dir.path().join("no/such/dir/c.jsonl");
    assert_eq!(code(&run(&["gen-data", "--n", "3", "--out", path_str(&missing)])), 2);
}

#[test]
fn seed_comes_from_the_environment_unless_a_flag_is_given() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    let gen = |seed_flag: Option<&str>, env: Option<&str>, out: &str| {
        let mut c = bin();
        c.args(["gen-data", "--n", "5", "--out", path_str(&p(out))]);
        if let Some(s) = seed_flag {
            c.args(["--seed", s]);
        }
        if let Some(e) = env {
            c.env("TRIPLET_TAGGER_SEED", e);
        }
        assert!(c.output().unwrap().status.success());
        fs::read(p(out)).unwrap()
    };
    let env9 = gen(None, Some("9"), "a");
    assert_eq!(env9, gen(Some("9"), None, "b"));
    assert_ne!(env9, gen(Some("8"), Some("9"), "c"));
    assert_eq!(gen(Some("8"), Some("9"), "d"), gen(Some("8"), None, "e"));
}

#[test]
fn help_and_version_exit_zero_and_unknown_commands_exit_one() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["--version"])), 0);
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&[])), 1);
}

#[test]
fn train_eval_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let catalog = dir.path().join("c.jsonl");
    assert_eq!(
        code(&run(&[
            "gen-data",
            "--seed",
            "1",
            "--n",
            "40",
            "--out",
            path_str(&catalog)
        ])),
        0
    );
    let config = write_config(
        dir.path(),
        "run",
        &catalog,
        tiny_model(),
        json!({"epochs": 1, "seed": 2}),
    );

    let o = run(&["train", "--config", path_str(&config), "--train.lambda=0.5"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = dir.path().join("run-out");
    for f in ["checkpoint.json", "history.csv", "holdout.jsonl", "manifest.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let manifest: Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["lambda"], json!(0.5));
    assert_eq!(manifest["data"]["n_holdout"], json!(12));
    assert_eq!(
        fs::read_to_string(out.join("holdout.jsonl")).unwrap().lines().count(),
        12
    );
    let history = fs::read_to_string(out.join("history.csv")).unwrap();
    assert_eq!(
        history.lines().next().unwrap(),
        "epoch,step,loss_total,loss_ner,loss_triplet,sigmoid_score"
    );
    assert_eq!(history.lines().count(), 1 + 2);

    let report = dir.path().join("r.json");
    let o = run(&[
        "eval",
        "--checkpoint",
        path_str(&out.join("checkpoint.json")),
        "--data",
        path_str(&out.join("holdout.jsonl")),
        "--out",
        path_str(&report),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).starts_with("Algorithm"));
    let r: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["algorithm"], json!("multitask"));
    assert_eq!(r["counts"]["n_sentences"], json!(12));

    let input = dir.path().join("titles.txt");
    fs::write(&input, "Acme red mug\n\nlamp\n").unwrap();
    let o = run(&[
        "predict",
        "--checkpoint",
        path_str(&out.join("checkpoint.json")),
        "--input",
        path_str(&input),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.starts_with("# id: line-1\nacme\t"), "{text}");
    assert!(text.contains("# id: line-3\nlamp\t"));
}

#[test]
fn config_problems_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let catalog = dir.path().join("c.jsonl");
    fs::write(&catalog, "").unwrap();
    let config = write_config(dir.path(), "run", &catalog, tiny_model(), json!({"epochs": 1}));
    let c = path_str(&config);
    assert_eq!(
        code(&run(&["train", "--config", path_str(&dir.path().join("none.json"))])),
        1
    );
    let o = run(&["train", "--config", c, "--train.learning_rate=0.1"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("learning_rate"));
    assert_eq!(code(&run(&["train", "--config", c, "--train.lr=-1"])), 1);
    assert_eq!(code(&run(&["train", "--config", c, "--train.lr"])), 1);
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{").unwrap();
    assert_eq!(code(&run(&["train", "--config", path_str(&bad)])), 1);
}

#[test]
fn data_problems_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let catalog = dir.path().join("c.jsonl");
    fs::write(
        &catalog,
        r#"{"id": "a", "title_tokens": ["mug"], "title_tags": ["I-ITEM"], "description": ""}"#,
    )
    .unwrap();
    let config = write_config(dir.path(), "run", &catalog, tiny_model(), json!({"epochs": 1}));
    let o = run(&["train", "--config", path_str(&config)]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));

    let missing = write_config(dir.path(), "m", &dir.path().join("gone.jsonl"), tiny_model(), json!({}));
    assert_eq!(code(&run(&["train", "--config", path_str(&missing)])), 2);

    let report = dir.path().join("r.json");
    fs::write(&report, "{\"algorithm\": ").unwrap();
    assert_eq!(code(&run(&["compare", path_str(&report)])), 2);
    assert_eq!(code(&run(&["compare"])), 1);

    let ck = dir.path().join("ck.json");
    fs::write(&ck, "{}").unwrap();
    let o = run(&["eval", "--checkpoint", path_str(&ck), "--data", path_str(&catalog)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn corrupted_backward_rule_fails_grad_check_with_exit_three() {
    let o = run(&["grad-check", "--corrupt", "gelu"]);
    assert_eq!(code(&o), 3);
    let text = stdout(&o);
    let gelu = text.lines().find(|l| l.starts_with("gelu ")).expect("gelu line");
    assert!(gelu.ends_with("FAIL"), "{gelu}");
    assert!(text.lines().any(|l| l.starts_with("softmax") && l.ends_with(" ok")));
    assert_eq!(code(&run(&["grad-check", "--corrupt", "nope"])), 1);
}

#[test]
fn eval_of_a_prediction_file_repairs_stray_inside_tags() {
    let dir = tempfile::tempdir().unwrap();
    let gold = dir.path().join("g.conll");
    let pred = dir.path().join("p.conll");
    fs::write(&gold, "# id: a\nacme\tB-BRAND\nmug\tB-ITEM\n\n").unwrap();
    fs::write(&pred, "# id: a\nacme\tI-BRAND\nmug\tB-ITEM\n\n").unwrap();
    let out = dir.path().join("r.json");
    let o = run(&[
        "eval",
        "--predictions",
        path_str(&pred),
        "--data",
        path_str(&gold),
        "--out",
        path_str(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(r["exact_match"], json!(1.0));
    assert_eq!(r["algorithm"], json!("p"));

    fs::write(&pred, "# id: a\nacme\tB-BRAND\n\n").unwrap();
    assert_eq!(
        code(&run(&[
            "eval",
            "--predictions",
            path_str(&pred),
            "--data",
            path_str(&gold)
        ])),
        2
    );
}
