use std::fs;
use std::path::Path;

use secaps::cli::run_cli_with;

fn run(args: &[&str]) -> (i32, String, String) {
    let argv: Vec<String> = args.iter().map(|a| a.to_string()).collect();
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run_cli_with(&argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL_MODEL: &str = "\
# tiny model for tests
embed_dim = 8
max_len = 12
caps_num = 3
caps_dim = 4
routing_iters = 2
lstm_hidden = 6
fc1_dim = 16
fc2_dim = 8
learning_rate = 0.01
epochs = 3
";

fn synth(dir: &Path) {
    let (code, _, err) = run(&[
        "gen-synth", "--num-classes", "4", "--train-size", "60", "--seed", "5", "--vocab-size", "40",
        "--min-len", "4", "--max-len", "10", "--eval-per-class", "4", "--signature-tokens", "3", "--out", p(dir),
    ]);
    assert_eq!(code, 0, "{err}");
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(&[]).0, 2);
    assert_eq!(run(&["fly"]).0, 2);
    assert_eq!(run(&["gradcheck", "--bogus", "1"]).0, 2);
    assert_eq!(run(&["gradcheck", "--seeds"]).0, 2);
    assert_eq!(run(&["gradcheck", "stray"]).0, 2);
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.cfg");
    fs::write(&cfg, "seeds = 1\nwhat = 2\n").unwrap();
    let (code, _, err) = run(&["gradcheck", "--config", p(&cfg)]);
    assert_eq!(code, 2);
    assert!(err.contains("unknown key `what`"), "{err}");
}

#[test]
fn runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.ckpt");
    let (code, _, err) = run(&["eval", "--checkpoint", p(&missing), "--data-dir", p(dir.path())]);
    assert_eq!(code, 1);
    assert!(err.starts_with("# resolved eval config") && err.contains("error:"), "{err}");
    assert_eq!(run(&["gradcheck", "--seeds", "x"]).0, 1);
    assert_eq!(run(&["gen-synth"]).0, 1);
}

#[test]
fn gen_synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let (code, _, _) = run(&["gen-synth", "--num-classes", "20", "--train-size", "2000", "--seed", "42", "--out", p(d)]);
        assert_eq!(code, 0);
    }
    for split in ["train", "valid", "test"] {
        let name = format!("{split}.jsonl");
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap());
    }
    assert_eq!(fs::read_to_string(a.join("train.jsonl")).unwrap().lines().count(), 2000);
}

#[test]
fn gradcheck_passes() {
    let (code, out, _) = run(&["gradcheck", "--seeds", "3", "--model-seeds", "1"]);
    assert_eq!(code, 0, "{out}");
    assert!(out.lines().all(|l| l.starts_with("PASS")));
    assert!(out.contains("model_attention"));
}

#[test]
fn train_eval_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    synth(&data);
    let cfg = dir.path().join("c.cfg");
    fs::write(&cfg, format!("{SMALL_MODEL}data_dir = {}\nepochs = 5\n", p(&data))).unwrap();
    let ckpt = dir.path().join("m.ckpt");
    let metrics = dir.path().join("m.json");
    let (code, out, err) = run(&[
        "train", "--config", p(&cfg), "--epochs", "3", "--checkpoint", p(&ckpt), "--metrics", p(&metrics),
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(err.contains("epochs = 3"), "flag should override the file:\n{err}");
    assert!(err.contains("epoch   2") && !err.contains("epoch   3"));
    assert!(out.starts_with("best epoch"));

    let logged: serde_json::Value = serde_json::from_str(&fs::read_to_string(&metrics).unwrap()).unwrap();
    assert_eq!(logged["epochs"].as_array().unwrap().len(), 3);
    let (code, out, err) = run(&["eval", "--checkpoint", p(&ckpt), "--data-dir", p(&data), "--split", "test"]);
    assert_eq!(code, 0, "{err}");
    let eval: serde_json::Value = serde_json::from_str(&out).unwrap();
    for key in secaps::train::METRICS_KEYS {
        assert!(eval.get(key).is_some(), "{key}");
    }
    assert!(eval.get("buckets").is_none());
    assert_eq!(eval["accuracy"], logged["test"]["accuracy"]);
    assert_eq!(eval["macro_f1"], logged["test"]["macro_f1"]);

    let (code, out, _) = run(&["eval", "--checkpoint", p(&ckpt), "--data-dir", p(&data), "--split", "valid", "--buckets"]);
    assert_eq!(code, 0);
    let eval: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(eval["buckets"]["assignments"].as_array().unwrap().len(), 4);
    assert_eq!(eval["per_class"][0]["label"], "charge00");

    let input = dir.path().join("in.txt");
    fs::write(&input, "w0000 w0001 w0100\nw0003 never-seen\nw0007\n").unwrap();
    let (code, out, err) = run(&["predict", "--checkpoint", p(&ckpt), "--input", p(&input)]);
    assert_eq!(code, 0, "{err}");
    let labels: Vec<&str> = out.lines().collect();
    assert_eq!(labels.len(), 3);
    assert!(labels.iter().all(|l| l.starts_with("charge")));
    let (again, _, _) = run(&["predict", "--checkpoint", p(&ckpt), "--input", p(&input)]);
    assert_eq!(again, 0);

    fs::write(&input, "w0000\n\nw0001\n").unwrap();
    let (code, _, err) = run(&["predict", "--checkpoint", p(&ckpt), "--input", p(&input)]);
    assert_eq!(code, 1);
    assert!(err.contains("line 2"), "{err}");
}

#[test]
fn sweep_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    synth(&data);
    let cfg = dir.path().join("c.cfg");
    fs::write(&cfg, format!("{SMALL_MODEL}data_dir = {}\nepochs = 1\n", p(&data))).unwrap();
    let (code, out, err) = run(&["sweep", "--config", p(&cfg), "--param", "caps_num", "--range", "2:4:2"]);
    assert_eq!(code, 0, "{err}");
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "param,value,mp,mr,mf");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("caps_num,2,") && lines[2].starts_with("caps_num,4,"));
    for line in &lines[1..] {
        let fields: Vec<f64> = line.split(',').skip(2).map(|f| f.parse().unwrap()).collect();
        assert!(fields.iter().all(|v| (0.0..=1.0).contains(v)));
    }
    let (code, _, _) = run(&["sweep", "--config", p(&cfg), "--param", "fc1_dim", "--values", "2"]);
    assert_eq!(code, 1);
    let out_path = dir.path().join("s.csv");
    let (code, out, _) = run(&["sweep", "--config", p(&cfg), "--param", "caps_dim", "--values", "3", "--out", p(&out_path)]);
    assert_eq!(code, 0);
    assert!(out.is_empty());
    assert_eq!(fs::read_to_string(&out_path).unwrap().lines().count(), 2);
}
