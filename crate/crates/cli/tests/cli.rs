use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pronsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pronsim"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = pronsim(args);
    assert!(
        out.status.success(),
        "{args:?} exited with {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const FAST: &[&str] = &["--epochs", "2", "--negatives", "3", "--hidden", "16", "--phone-dim", "8", "--embed-dim", "16"];

fn gen_small(dir: &Path, extra: &[&str]) {
    let mut args = vec!["gen", "--out", s(dir), "--words", "40", "--variants", "4", "--seed", "3"];
    args.extend_from_slice(extra);
    ok(&args);
}

fn train_small(data: &Path, out: &Path, extra: &[&str]) {
    let mut args = vec!["train", "--data", s(data), "--out", s(out)];
    args.extend_from_slice(FAST);
    args.extend_from_slice(extra);
    ok(&args);
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn gen_train_eval_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, model, eval) = (tmp.path().join("data"), tmp.path().join("model"), tmp.path().join("eval"));
    gen_small(&data, &[]);
    for f in ["inventory.txt", "lexicon.tsv", "rules.tsv", "train.tsv", "dev.tsv", "test.tsv", "manifest.json"] {
        assert!(data.join(f).is_file(), "{f}");
    }
    assert_eq!(json(&data.join("manifest.json"))["seed"], 3);

    train_small(&data, &model, &[]);
    assert!(model.join("model.ckpt").is_file());
    assert_eq!(json(&model.join("train_report.json"))["seed"], 0);
    assert!(fs::read_to_string(model.join("train_report.txt")).unwrap().starts_with("# seed 0\n"));

    let ckpt = model.join("model.ckpt");
    let stdout = ok(&["eval", "--scorer", "rank", "--checkpoint", s(&ckpt), "--data", s(&data), "--out", s(&eval)]);
    assert!(stdout.starts_with("rank: WER@1"), "{stdout}");
    let report = json(&eval.join("eval_report.json"));
    assert_eq!(report["count"], 16);
    assert_eq!(report["seed"], 3);
    assert!(report["wer_at_1"].as_f64().unwrap() >= report["wer_at_2"].as_f64().unwrap());
    assert_eq!(fs::read_to_string(eval.join("predictions.tsv")).unwrap().lines().count(), 16);

    let word = fs::read_to_string(data.join("lexicon.tsv")).unwrap().lines().next().unwrap().split('\t').next().unwrap().to_string();
    let near = ok(&["neighbors", "--word", &word, "--m", "3", "--checkpoint", s(&ckpt), "--data", s(&data)]);
    assert_eq!(near.lines().count(), 3);
    assert!(!near.lines().any(|w| w == word));
    let exact = ["neighbors", "--word", &word, "--theta", "0.5", "--scorer", "exact", "--data", s(&data)];
    assert_eq!(ok(&exact).lines().count(), 0);
    let mut literal = exact.to_vec();
    literal.extend_from_slice(&["--mode", "literal"]);
    assert_eq!(ok(&literal).lines().count(), 39);

    let emb = ok(&["embed", "--checkpoint", s(&ckpt), "--data", s(&data)]);
    assert_eq!(emb.lines().count(), 40);
    assert!(emb.lines().all(|l| l.split('\t').count() == 17));

    let proj = tmp.path().join("proj");
    ok(&["project", "--checkpoint", s(&ckpt), "--data", s(&data), "--out", s(&proj)]);
    assert!(fs::read_to_string(proj.join("projection.svg")).unwrap().contains("<svg"));
    assert_eq!(fs::read_to_string(proj.join("projection.tsv")).unwrap().lines().count(), 40);
}

#[test]
fn binary_model_trains_and_evaluates() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, model) = (tmp.path().join("data"), tmp.path().join("model"));
    gen_small(&data, &[]);
    train_small(&data, &model, &["--arch", "binary", "--encoder", "lstm", "--epochs", "1"]);
    let ckpt = model.join("model.ckpt");
    let stdout = ok(&["eval", "--scorer", "binary", "--checkpoint", s(&ckpt), "--data", s(&data), "--split", "dev"]);
    assert!(stdout.starts_with("binary: WER@1"));
    let out = pronsim(&["eval", "--scorer", "rank", "--checkpoint", s(&ckpt), "--data", s(&data)]);
    assert_eq!(out.status.code(), Some(1), "architecture mismatch is a usage error");
}

#[test]
fn exact_lookup_is_perfect_without_noise() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_small(&data, &["--zero-noise"]);
    let eval = tmp.path().join("eval");
    for split in ["train", "dev", "test"] {
        let stdout = ok(&["eval", "--scorer", "exact", "--data", s(&data), "--split", split, "--out", s(&eval)]);
        assert!(stdout.contains("WER@1 0.00%"), "{stdout}");
        assert_eq!(json(&eval.join("eval_report.json"))["wer_at_1"], 0.0);
    }
}

#[test]
fn sweep_dim_has_one_row_per_size() {
    let mut args = vec!["sweep-dim", "--dims", "40,80,120,150", "--words", "30", "--variants", "3", "--seed", "1"];
    args.extend_from_slice(&["--epochs", "1", "--negatives", "2", "--hidden", "8", "--phone-dim", "4"]);
    let csv = ok(&args);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "# seed 1");
    assert_eq!(lines[1], "embed_dim,test_wer1,test_wer2,dev_wer1,selected_epoch");
    let dims: Vec<&str> = lines[2..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(dims, ["40", "80", "120", "150"]);
}

#[test]
fn sweep_negatives_writes_csv_file() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("neg.csv");
    let mut args = vec!["sweep-negatives", "--values", "1,4", "--words", "30", "--variants", "3", "--out", s(&out)];
    args.extend_from_slice(&["--epochs", "1", "--hidden", "8", "--phone-dim", "4", "--embed-dim", "8"]);
    ok(&args);
    let csv = fs::read_to_string(&out).unwrap();
    assert_eq!(csv.lines().nth(1), Some("negatives,test_wer1,test_wer2,dev_wer1,selected_epoch"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn gradcheck_subset_passes() {
    let stdout = ok(&["gradcheck", "--arch", "rank", "--encoder", "lstm", "--seeds", "2"]);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 2, "{stdout}");
}

#[test]
fn help_exits_zero_for_every_subcommand() {
    let subs = [
        "gen",
        "train",
        "eval",
        "neighbors",
        "embed",
        "project",
        "gradcheck",
        "sweep-negatives",
        "sweep-dim",
    ];
    let top = ok(&["--help"]);
    for sub in subs {
        assert!(top.contains(sub), "{sub}");
        let help = ok(&[sub, "--help"]);
        assert!(help.contains("--config") && help.contains("--jobs"), "{sub}");
    }
    assert!(ok(&["train", "--help"]).contains("--negative-mode"));
    assert!(ok(&["--version"]).starts_with("pronsim "));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(pronsim(&["bogus"]).status.code(), Some(1));
    assert_eq!(pronsim(&["train", "--out", "x", "--nope"]).status.code(), Some(1));
    assert_eq!(pronsim(&["train"]).status.code(), Some(1));
    assert_eq!(pronsim(&[]).status.code(), Some(1));
    assert_eq!(pronsim(&["eval", "--scorer", "rank", "--data", "x"]).status.code(), Some(1));
    assert_eq!(pronsim(&["neighbors", "--word", "w", "--data", "x"]).status.code(), Some(1));
    assert_eq!(pronsim(&["gen", "--out", "x", "--variants", "0"]).status.code(), Some(1));
}

#[test]
fn runtime_failures_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("missing");
    assert_eq!(pronsim(&["eval", "--scorer", "exact", "--data", s(&missing)]).status.code(), Some(2));

    let data = tmp.path().join("data");
    gen_small(&data, &[]);
    let bad = tmp.path().join("bad.ckpt");
    fs::write(&bad, b"not a checkpoint").unwrap();
    let out = pronsim(&["eval", "--scorer", "rank", "--checkpoint", s(&bad), "--data", s(&data)]);
    assert_eq!(out.status.code(), Some(2));
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn fixed_seeds_give_identical_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |tag: &str, jobs: &str| {
        let root = tmp.path().join(tag);
        let (data, model, eval) = (root.join("data"), root.join("model"), root.join("eval"));
        gen_small(&data, &[]);
        train_small(&data, &model, &["--jobs", jobs]);
        let ckpt = model.join("model.ckpt");
        ok(&["eval", "--scorer", "rank", "--checkpoint", s(&ckpt), "--data", s(&data), "--out", s(&eval), "--jobs", jobs]);
        (dir_bytes(&data), dir_bytes(&model), dir_bytes(&eval))
    };
    let a = run("a", "1");
    let b = run("b", "4");
    assert_eq!(a, b);

    let other = tmp.path().join("other");
    ok(&["gen", "--out", s(&other), "--words", "40", "--variants", "4", "--seed", "4"]);
    assert_ne!(dir_bytes(&other), a.0);
}

#[test]
fn config_file_sits_between_flags_and_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let cfg = tmp.path().join("gen.conf");
    fs::write(&cfg, format!("# small task\nout = {}\nwords = 30\nvariants = 5\nseed = 9\n", data.display())).unwrap();
    ok(&["--config", s(&cfg), "gen", "--variants", "2"]);
    let manifest = json(&data.join("manifest.json"));
    assert_eq!(manifest["words"], 30);
    assert_eq!(manifest["seed"], 9);
    assert_eq!(manifest["variants_per_word"], 2);

    fs::write(&cfg, "epochs = 3\n").unwrap();
    assert_eq!(pronsim(&["gen", "--config", s(&cfg), "--out", s(&data)]).status.code(), Some(1));
    assert_eq!(pronsim(&["gen", "--config", s(&tmp.path().join("none")), "--out", s(&data)]).status.code(), Some(1));
}
