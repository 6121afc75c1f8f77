use std::path::Path;
use std::process::{Command, Output};

use vitray::trainer::{load_checkpoint, read_log};
use vitray::vit::{init_params, ModelConfig};
use vitray_cli::plot::roc_panel;

fn vitray(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vitray"))
        .args(args)
        .env_remove("VITRAY_SEED")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = vitray(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, per_class: &str) {
    ok(&["synth", "--out", s(dir), "--per-class", per_class, "--size", "32", "--seed", "42"]);
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    for class in ["Normal", "Abnormal"] {
        let mut names: Vec<_> = std::fs::read_dir(dir.join(class))
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        names.sort();
        for p in names {
            files.push((p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()));
        }
    }
    files
}

#[test]
fn synth_writes_class_directories_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let msg = ok(&["synth", "--out", s(&a), "--per-class", "32", "--size", "32", "--seed", "42"]);
    assert!(msg.contains("64"));
    synth(&b, "32");
    let (ta, tb) = (read_tree(&a), read_tree(&b));
    assert_eq!(ta.len(), 64);
    assert_eq!(std::fs::read_dir(a.join("Normal")).unwrap().count(), 32);
    assert_eq!(ta, tb);

    let bad = vitray(&["synth", "--out", s(&a), "--per-class", "0"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("--per-class"));
}

#[test]
fn help_on_every_subcommand() {
    for sub in ["synth", "train", "eval", "plot"] {
        let out = vitray(&[sub, "--help"]);
        assert_eq!(out.status.code(), Some(0), "{sub}");
        assert!(String::from_utf8_lossy(&out.stdout).contains("Usage"));
    }
    assert_eq!(vitray(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn train_eval_plot_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let run = tmp.path().join("run");
    synth(&data, "16");
    let msg = ok(&["train", "--data", s(&data), "--out", s(&run), "--epochs", "4", "--patience", "2"]);
    assert!(msg.contains("best test accuracy"));
    for f in ["best.ckpt", "train_log.csv", "config.resolved"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let log = read_log(&run.join("train_log.csv")).unwrap();
    assert!(!log.is_empty() && log.len() <= 4);
    let ckpt = load_checkpoint(&run.join("best.ckpt")).unwrap();
    let best = log.iter().find(|r| r.epoch == ckpt.best_epoch).unwrap();
    assert_eq!(best.test_accuracy, (ckpt.best_accuracy * 1e6).round() / 1e6);

    // Scoring the held-out part reproduces the logged best row.
    let ev = tmp.path().join("eval");
    let line = ok(&["eval", "--data", s(&data), "--ckpt", s(&run.join("best.ckpt")), "--out", s(&ev), "--split", "test"]);
    assert!(line.contains("accuracy"));
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(ev.join("metrics.json")).unwrap()).unwrap();
    let obj = m.as_object().unwrap();
    for k in ["accuracy", "precision", "recall", "f1", "auc"] {
        assert!(obj.contains_key(k), "{k}");
    }
    assert!((m["accuracy"].as_f64().unwrap() - best.test_accuracy).abs() <= 5e-7);

    // Purity: a second eval gives the same bytes.
    let ev2 = tmp.path().join("eval2");
    ok(&["eval", "--data", s(&data), "--ckpt", s(&run.join("best.ckpt")), "--out", s(&ev2), "--split", "test"]);
    for f in ["metrics.json", "confusion.csv", "roc.csv"] {
        assert_eq!(std::fs::read(ev.join(f)).unwrap(), std::fs::read(ev2.join(f)).unwrap(), "{f}");
    }

    for (flag, file) in [("--log", run.join("train_log.csv")), ("--roc", ev.join("roc.csv")), ("--cm", ev.join("confusion.csv"))] {
        let out = tmp.path().join(format!("{}.svg", &flag[2..]));
        ok(&["plot", flag, s(&file), "--out", s(&out)]);
        let svg = std::fs::read_to_string(&out).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains(r#"width="800" height="600""#));
    }
}

#[test]
fn zero_learning_rate_keeps_initial_weights() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let run = tmp.path().join("run");
    synth(&data, "4");
    ok(&["train", "--data", s(&data), "--out", s(&run), "--epochs", "2", "--lr", "0", "--seed", "5"]);
    let ckpt = load_checkpoint(&run.join("best.ckpt")).unwrap();
    let init = init_params(&ModelConfig::tiny(), 5).unwrap();
    for ((name, a), b) in ckpt.params.named_tensors().into_iter().zip(init.tensors()) {
        assert!(
            a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()),
            "{name} changed"
        );
    }
}

#[test]
fn eval_rejects_bad_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let run = tmp.path().join("run");
    synth(&data, "2");
    ok(&["train", "--data", s(&data), "--out", s(&run), "--epochs", "1", "--split", "50:50"]);

    let tampered = tmp.path().join("t.ckpt");
    let mut bytes = std::fs::read(run.join("best.ckpt")).unwrap();
    bytes[0] ^= 0xFF;
    std::fs::write(&tampered, bytes).unwrap();
    let out = vitray(&["eval", "--data", s(&data), "--ckpt", s(&tampered), "--out", s(&tmp.path().join("e"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad magic"));

    let paper_cfg = tmp.path().join("paper.cfg");
    std::fs::write(&paper_cfg, "preset=paper\n").unwrap();
    let out = vitray(&[
        "eval", "--data", s(&data), "--ckpt", s(&run.join("best.ckpt")), "--out", s(&tmp.path().join("e")),
        "--config", s(&paper_cfg),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("patch_embed.weight"));
}

#[test]
fn train_dry_run_and_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let cfg = tmp.path().join("my.cfg");
    std::fs::write(&cfg, "# overrides\npreset=paper\nbatch_size=16\npatience=3\n").unwrap();
    let text = ok(&["train", "--config", s(&cfg), "--out", s(&run), "--batch-size", "8", "--dry-run"]);
    let resolved = std::fs::read_to_string(run.join("config.resolved")).unwrap();
    assert_eq!(text, resolved);
    for line in ["num_patches=196", "batch_size=8", "patience=3", "preset=paper"] {
        assert!(resolved.lines().any(|l| l == line), "{line}");
    }

    let out = Command::new(env!("CARGO_BIN_EXE_vitray"))
        .args(["train", "--out", s(&run), "--dry-run", "--seed", "3"])
        .env("VITRAY_SEED", "77")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(std::fs::read_to_string(run.join("config.resolved")).unwrap().contains("\nseed=77\n"));

    assert_eq!(vitray(&["train", "--out", s(&run), "--set", "bogus=1", "--dry-run"]).status.code(), Some(2));
    assert_eq!(vitray(&["train", "--out", s(&run), "--preset", "huge", "--dry-run"]).status.code(), Some(2));
    assert_eq!(vitray(&["train", "--out", s(&run)]).status.code(), Some(2));
    let missing = vitray(&["train", "--data", s(&tmp.path().join("nowhere")), "--out", s(&run)]);
    assert_eq!(missing.status.code(), Some(1));
}

fn polylines(svg: &str) -> Vec<Vec<(f64, f64)>> {
    svg.lines()
        .filter(|l| l.starts_with("<polyline"))
        .map(|l| {
            let pts = l.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
            pts.split(' ')
                .map(|p| {
                    let (x, y) = p.split_once(',').unwrap();
                    (x.parse().unwrap(), y.parse().unwrap())
                })
                .collect()
        })
        .collect()
}

#[test]
fn plot_log_roc_and_schema_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let log = tmp.path().join("log.csv");
    let mut text = String::from("epoch,train_loss,train_acc,test_loss,test_acc\n");
    for e in 1..=50 {
        let f = e as f64 / 50.0;
        text.push_str(&format!("{e},{:.6},{:.6},{:.6},{:.6}\n", 1.0 - 0.9 * f, f, 1.1 - 0.8 * f, 0.9 * f));
    }
    std::fs::write(&log, &text).unwrap();
    let out = tmp.path().join("log.svg");
    ok(&["plot", "--log", s(&log), "--out", s(&out)]);
    let svg = std::fs::read_to_string(&out).unwrap();
    let lines = polylines(&svg);
    assert_eq!(lines.len(), 4);
    assert!(lines.iter().all(|l| l.len() == 50));
    // Two panels side by side, two curves in each.
    let left = lines.iter().filter(|l| l[0].0 < 400.0).count();
    assert_eq!(left, 2);
    let again = tmp.path().join("again.svg");
    ok(&["plot", "--log", s(&log), "--out", s(&again)]);
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&again).unwrap());

    let roc = tmp.path().join("roc.csv");
    std::fs::write(&roc, "threshold,fpr,tpr\ninf,0,0\n0.5,1,1\n").unwrap();
    ok(&["plot", "--roc", s(&roc), "--out", s(&out)]);
    let lines = polylines(&std::fs::read_to_string(&out).unwrap());
    assert_eq!(lines.len(), 1);
    let p = roc_panel();
    assert_eq!(lines[0], vec![p.map(0.0, 0.0), p.map(1.0, 1.0)]);

    let empty = tmp.path().join("empty.csv");
    std::fs::write(&empty, "threshold,fpr,tpr\n").unwrap();
    assert_eq!(vitray(&["plot", "--roc", s(&empty), "--out", s(&out)]).status.code(), Some(2));

    std::fs::write(&log, text.replacen("test_acc", "test_accuracy", 1)).unwrap();
    let bad = vitray(&["plot", "--log", s(&log), "--out", s(&out)]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("test_accuracy"));

    assert_eq!(vitray(&["plot", "--out", s(&out)]).status.code(), Some(2));
    assert_eq!(vitray(&["plot", "--roc", s(&tmp.path().join("missing.csv")), "--out", s(&out)]).status.code(), Some(1));
}
