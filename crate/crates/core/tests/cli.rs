use std::fs;
use std::path::Path;

use pietsp::cli::run;

fn path(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

#[test]
fn gen_train_eval_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("syn.json");
    let out = dir.path().join("ckpt");
    assert_eq!(
        run([
            "pietsp",
            "gen-synthetic",
            "--pattern",
            "periodic",
            "--users",
            "50",
            "--vocab",
            "100",
            "--out",
            &path(&data)
        ]),
        0
    );
    assert_eq!(
        run([
            "pietsp",
            "train",
            "--data",
            &path(&data),
            "--out",
            &path(&out),
            "--seed",
            "7",
            "--epochs",
            "3",
            "--patience",
            "3"
        ]),
        0
    );
    for name in ["best", "last", "history.jsonl", "effective_config.json"] {
        assert!(out.join(name).exists(), "{name} missing");
    }
    assert_eq!(
        fs::read_to_string(out.join("history.jsonl")).unwrap().lines().count(),
        3
    );

    let eval_dir = dir.path().join("eval");
    let best = path(&out.join("best"));
    assert_eq!(
        run([
            "pietsp",
            "eval",
            "--ckpt",
            &best,
            "--data",
            &path(&data),
            "--split",
            "test",
            "--out",
            &path(&eval_dir)
        ]),
        0
    );
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(eval_dir.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["users"], 10);

    let preds = dir.path().join("preds.jsonl");
    assert_eq!(
        run([
            "pietsp",
            "predict",
            "--ckpt",
            &best,
            "--data",
            &path(&data),
            "--k",
            "5",
            "--out",
            &path(&preds)
        ]),
        0
    );
    let lines: Vec<serde_json::Value> = fs::read_to_string(&preds)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 50);
    assert_eq!(lines[0]["items"].as_array().unwrap().len(), 5);
}

#[test]
fn effective_config_reproduces_training() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("syn.json");
    assert_eq!(
        run(["pietsp", "gen-synthetic", "--out", &path(&data), "--seed", "3"]),
        0
    );
    let first = dir.path().join("a");
    assert_eq!(
        run([
            "pietsp",
            "train",
            "--data",
            &path(&data),
            "--out",
            &path(&first),
            "--epochs",
            "2",
            "--patience",
            "2",
            "--dim",
            "8"
        ]),
        0
    );
    let second = dir.path().join("b");
    let cfg = path(&first.join("effective_config.json"));
    assert_eq!(run(["pietsp", "train", "--config", &cfg, "--out", &path(&second)]), 0);
    assert_eq!(
        fs::read(first.join("best")).unwrap(),
        fs::read(second.join("best")).unwrap()
    );
    assert_eq!(
        fs::read(first.join("last")).unwrap(),
        fs::read(second.join("last")).unwrap()
    );
}

#[test]
fn resume_continues_where_training_stopped() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("syn.json");
    assert_eq!(run(["pietsp", "gen-synthetic", "--out", &path(&data)]), 0);
    let straight = dir.path().join("straight");
    let common = ["--data", &path(&data), "--dim", "8", "--patience", "2"];
    let mut args = vec!["pietsp", "train", "--epochs", "4"];
    args.extend(common);
    let s = path(&straight);
    args.extend(["--out", &s]);
    assert_eq!(run(&args), 0);

    let part = dir.path().join("part");
    let p = path(&part);
    let mut args = vec!["pietsp", "train", "--epochs", "4", "--stop-after", "2"];
    args.extend(common);
    args.extend(["--out", &p]);
    assert_eq!(run(&args), 0);
    let last = path(&part.join("last"));
    let mut args = vec!["pietsp", "train", "--epochs", "4", "--resume", &last];
    args.extend(common);
    args.extend(["--out", &p]);
    assert_eq!(run(&args), 0);

    let a: serde_json::Value = serde_json::from_slice(&fs::read(straight.join("last")).unwrap()).unwrap();
    let b: serde_json::Value = serde_json::from_slice(&fs::read(part.join("last")).unwrap()).unwrap();
    assert_eq!(a["params"], b["params"]);
    let lines = |d: &Path| fs::read_to_string(d.join("history.jsonl")).unwrap().lines().count();
    assert_eq!(lines(&part), lines(&straight));
}

#[test]
fn bench_grid_writes_one_report_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench");
    assert_eq!(
        run([
            "pietsp",
            "bench",
            "--grid",
            "N=64,128,256",
            "--runs",
            "2",
            "--batch-size",
            "4",
            "--vocab",
            "512",
            "--out",
            &path(&out)
        ]),
        0
    );
    let reports: Vec<serde_json::Value> =
        serde_json::from_str(&fs::read_to_string(out.join("bench.json")).unwrap()).unwrap();
    assert_eq!(reports.len(), 3);
    assert_eq!(reports[2]["shape"]["n_max"], 256);
}

#[test]
fn convert_writes_corpus_and_vocab() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("dump.tsv");
    fs::write(
        &raw,
        "user_id\torder_id\titem_id\nu1\t1\t30\nu1\t1\t10\nu1\t2\t30\nu2\t5\t10\nu2\t6\t20\nu3\t9\t10\n",
    )
    .unwrap();
    let out = dir.path().join("conv/corpus.json");
    assert_eq!(
        run([
            "pietsp",
            "convert",
            "--data",
            &path(&raw),
            "--out",
            &path(&out),
            "--delimiter",
            "tab"
        ]),
        0
    );
    let corpus: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(corpus["vocab_size"], 3);
    assert_eq!(corpus["users"].as_array().unwrap().len(), 2);
    let vocab: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("conv/vocab.json")).unwrap()).unwrap();
    assert_eq!(vocab["items"], serde_json::json!(["10", "20", "30"]));
}

#[test]
fn module_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = path(&dir.path().join("nope.json"));
    assert_eq!(run(["pietsp", "eval", "--ckpt", &missing, "--data", &missing]), 1);
    let bad = dir.path().join("bad.json");
    fs::write(
        &bad,
        "{\"vocab_size\": 3, \"users\": [{\"user_id\": \"a\", \"sets\": [[0], [7]]}]}",
    )
    .unwrap();
    assert_eq!(
        run(["pietsp", "train", "--data", &path(&bad), "--out", &path(dir.path())]),
        1
    );
    assert_eq!(
        run(["pietsp", "bench", "--grid", "N=9000", "--vocab", "100", "--runs", "1"]),
        1
    );
}
