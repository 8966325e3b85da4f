use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn toy(file: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/toy").join(file)
}

fn gane(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gane"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn dataset_args() -> Vec<String> {
    vec![
        "--graph".into(),
        toy("graph.txt").display().to_string(),
        "--text".into(),
        toy("data.txt").display().to_string(),
    ]
}

fn run_ok(args: Vec<String>) -> Output {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let out = gane(&refs);
    assert!(
        out.status.success(),
        "{:?}: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn train_toy(out: &Path) {
    let mut args = vec!["train".to_string()];
    args.extend(dataset_args());
    args.extend(
        ["--dim", "4", "--word-dim", "4", "--epochs", "2", "--ratio", "0.7", "--out"]
            .map(String::from),
    );
    args.push(out.display().to_string());
    run_ok(args);
}

fn with_checkpoint(cmd: &str, dir: &Path, extra: &[&str]) -> Vec<String> {
    let mut args = vec![cmd.to_string()];
    args.extend(dataset_args());
    args.extend(["--checkpoint".to_string(), dir.join("model.ckpt").display().to_string()]);
    args.extend(["--out".to_string(), dir.display().to_string()]);
    args.extend(extra.iter().map(|s| s.to_string()));
    args
}

#[test]
fn help_exits_zero() {
    let out = gane(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("eval-link"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(gane(&["train", "--bogus"]).status.code(), Some(1));
    assert_eq!(gane(&[]).status.code(), Some(1));
    let mut args = vec!["train".to_string()];
    args.extend(dataset_args());
    args.extend(["--mode", "gane-ap", "--ngram", "4"].map(String::from));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    assert_eq!(gane(&refs).status.code(), Some(1));
}

#[test]
fn missing_graph_is_a_data_error_naming_the_path() {
    let out = gane(&[
        "train",
        "--graph",
        "/definitely/missing/graph.txt",
        "--text",
        toy("data.txt").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/definitely/missing/graph.txt"));
}

#[test]
fn training_is_reproducible_and_echoes_config() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    train_toy(&a);
    train_toy(&b);
    let ca = fs::read(a.join("model.ckpt")).unwrap();
    assert_eq!(ca, fs::read(b.join("model.ckpt")).unwrap());
    let trace = fs::read_to_string(a.join("loss.csv")).unwrap();
    assert!(trace.contains("# mode = gane-ot"));
    assert!(trace.contains("# batch = 64"));
    assert!(trace.contains("epoch,mean_loss\n0,"));
}

#[test]
fn evaluation_and_export_commands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    train_toy(d);

    run_ok(with_checkpoint("eval-link", d, &["--runs", "2"]));
    let auc = fs::read_to_string(d.join("auc.csv")).unwrap();
    assert_eq!(auc.lines().filter(|l| l.starts_with("auc,")).count(), 2);
    assert!(auc.contains("# ratio = 0.7"));

    run_ok(with_checkpoint("export-embeddings", d, &[]));
    let tsv = fs::read_to_string(d.join("embeddings.tsv")).unwrap();
    let rows: Vec<Vec<&str>> = tsv.lines().map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| r.len() == 5));
    let first = fs::read(d.join("embeddings.tsv")).unwrap();
    run_ok(with_checkpoint("export-embeddings", d, &[]));
    assert_eq!(first, fs::read(d.join("embeddings.tsv")).unwrap());

    run_ok(with_checkpoint("export-attention", d, &["--u", "0", "--v", "1"]));
    let dump = fs::read_to_string(d.join("attention_0_1.txt")).unwrap();
    assert!(dump.contains("plan 7 7"));
    assert!(dump.contains("softmax_baseline 7 7"));

    let out = gane(
        &with_checkpoint("export-attention", d, &["--u", "0", "--v", "99"])
            .iter()
            .map(String::as_str)
            .collect::<Vec<_>>(),
    );
    assert_eq!(out.status.code(), Some(2));

    let mut classify = with_checkpoint("eval-classify", d, &["--runs", "2", "--label-ratios", "0.5"]);
    let out = gane(&classify.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(out.status.code(), Some(1), "labels are required");
    classify.extend(["--labels".to_string(), toy("group.txt").display().to_string()]);
    run_ok(classify);
    let f1 = fs::read_to_string(d.join("macro_f1.csv")).unwrap();
    assert!(f1.contains("label_ratio,run,macro_f1\n0.5,0,"));
}

#[test]
fn single_class_labels_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    train_toy(d);
    let labels = d.join("one.txt");
    fs::write(&labels, (0..5).map(|i| format!("{i}\tsame\n")).collect::<String>()).unwrap();
    let mut args = with_checkpoint("eval-classify", d, &["--runs", "1", "--label-ratios", "0.5"]);
    args.extend(["--labels".to_string(), labels.display().to_string()]);
    let out = gane(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("single class"));
}

#[test]
fn checkpoint_dimension_mismatch_names_tensor() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    train_toy(d);
    let text = d.join("other.txt");
    fs::write(&text, "0\ta\n1\tb\n2\tc\n3\td\n4\te\n5\tf\n").unwrap();
    let out = gane(&[
        "eval-link",
        "--graph",
        toy("graph.txt").to_str().unwrap(),
        "--text",
        text.to_str().unwrap(),
        "--checkpoint",
        d.join("model.ckpt").to_str().unwrap(),
        "--out",
        d.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("word_embeddings") || err.contains("topology"), "{err}");
}

#[test]
fn ablation_rejects_empty_and_even_lengths() {
    let mut args = vec!["ablate-ngram".to_string()];
    args.extend(dataset_args());
    args.extend(["--ratio", "0.7", "--runs", "1", "--epochs", "1", "--dim", "4", "--word-dim", "4"].map(String::from));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    assert_eq!(gane(&refs).status.code(), Some(1));
    let mut even = args.clone();
    even.extend(["--lengths".to_string(), "3,4".to_string()]);
    let refs: Vec<&str> = even.iter().map(String::as_str).collect();
    assert_eq!(gane(&refs).status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let mut ok = args.clone();
    ok.extend(["--lengths", "3", "--out"].map(String::from));
    ok.push(dir.path().display().to_string());
    run_ok(ok);
    let csv = fs::read_to_string(dir.path().join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 2);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "dim = 6\nword_dim = 4\nepochs = 1\nseed = 3\n").unwrap();
    let mut args = vec!["train".to_string()];
    args.extend(dataset_args());
    args.extend(["--config".to_string(), cfg.display().to_string()]);
    args.extend(["--dim", "4", "--out"].map(String::from));
    args.push(dir.path().display().to_string());
    run_ok(args);
    let trace = fs::read_to_string(dir.path().join("loss.csv")).unwrap();
    assert!(trace.contains("# dim = 4\n"));
    assert!(trace.contains("# seed = 3\n"));
}
