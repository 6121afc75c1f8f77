//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Run with `cargo test -p vitray-cli --test acceptance`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use vitray::dataio::{
    extract_channel, generate_synthetic, normalize, replicate_channels, GrayImage, ImageTensor,
};
use vitray::metrics::{
    auc_pairwise_oracle, f1_score, percent, roc, summary, ConfusionMatrix,
};
use vitray::rng::{below, from_seed, Rng};
use vitray::tensor::{Graph, Tensor};
use vitray::trainer::{
    cross_entropy, decode_checkpoint, encode_checkpoint, evaluate, load_checkpoint, run_loop,
    save_checkpoint, train_epoch, Checkpoint, CheckpointError, EpochRecord, EpochRunner,
    OptimizerState, TrainConfig,
};
use vitray::vit::{
    attention_block, classify, embed, ffn_block, forward, init_params, patchify, ModelConfig,
    ParamVars, ViTParams,
};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn unit(r: &mut Rng) -> f64 {
    below(r, 1 << 53) as f64 / (1u64 << 53) as f64
}

// ---------------------------------------------------------------- 1

const FD_STEP: f64 = 1e-5;
const GRAD_REL_TOL: f64 = 1e-4;
const GRAD_BUDGET: Duration = Duration::from_secs(300);

/// Where a parameter first enters the network; evaluation restarts there
/// from cached activations.
#[derive(Debug, Clone, Copy)]
enum Entry {
    Embed,
    Attention(usize),
    Ffn(usize),
    Head,
}

fn entry_of(name: &str) -> Entry {
    if let Some(rest) = name.strip_prefix("layers.") {
        let (l, field) = rest.split_once('.').unwrap();
        let l: usize = l.parse().unwrap();
        if field.starts_with("ln2") || field.starts_with("ffn") {
            Entry::Ffn(l)
        } else {
            Entry::Attention(l)
        }
    } else if name.starts_with("final_norm") || name.starts_with("head") {
        Entry::Head
    } else {
        Entry::Embed
    }
}

struct Cache {
    patches: Tensor,
    layer_in: Vec<Tensor>,
    layer_mid: Vec<Tensor>,
    encoded: Tensor,
}

fn patch_matrix(cfg: &ModelConfig, images: &[&ImageTensor]) -> Tensor {
    let mut data = Vec::new();
    for img in images {
        data.extend(patchify(img, cfg.patch_size).unwrap().into_data());
    }
    Tensor::new(vec![images.len() * cfg.num_patches(), cfg.patch_dim()], data).unwrap()
}

/// Loss of the model restarted at `entry`.
fn loss_from(params: &ViTParams, cache: &Cache, entry: Entry, labels: &[usize]) -> f64 {
    let cfg = params.config();
    let mut g = Graph::new();
    let pv = ParamVars::register(&mut g, params, false).unwrap();
    let batch = labels.len();
    let mut w = Vec::new();
    let (mut z, first, skip_attention) = match entry {
        Entry::Embed => {
            let p = g.input(cache.patches.clone()).unwrap();
            (embed(&mut g, &pv, cfg, p).unwrap(), 0, false)
        }
        Entry::Attention(l) => (g.input(cache.layer_in[l].clone()).unwrap(), l, false),
        Entry::Ffn(l) => (g.input(cache.layer_mid[l].clone()).unwrap(), l, true),
        Entry::Head => (g.input(cache.encoded.clone()).unwrap(), cfg.num_layers, false),
    };
    for l in first..cfg.num_layers {
        if !(skip_attention && l == first) {
            z = attention_block(&mut g, z, &pv.layers[l], cfg, batch, &mut w).unwrap();
        }
        z = ffn_block(&mut g, z, &pv.layers[l]).unwrap();
    }
    let (_, probs) = classify(&mut g, &pv, cfg, z, batch).unwrap();
    let loss = cross_entropy(&mut g, probs, labels).unwrap();
    g.value(loss).item()
}

struct SeedReport {
    elements: usize,
    max_rel: f64,
    roundoff: usize,
    failures: Vec<String>,
}

fn gradcheck_seed(seed: u64) -> Result<SeedReport, String> {
    let cfg = ModelConfig::tiny();
    let params = init_params(&cfg, seed).unwrap();
    let ds = generate_synthetic(1, cfg.image_size, cfg.image_size, seed).unwrap();
    let images = [ds.image(0), ds.image(1)];
    let labels = [ds.label(0), ds.label(1)];

    // Analytic gradients, caching the activations at each entry point.
    let mut g = Graph::new();
    let pv = ParamVars::register(&mut g, &params, true).unwrap();
    let patches = patch_matrix(&cfg, &images);
    let p = g.input(patches.clone()).unwrap();
    let mut z = embed(&mut g, &pv, &cfg, p).unwrap();
    let (mut layer_in, mut layer_mid, mut w) = (Vec::new(), Vec::new(), Vec::new());
    for lv in &pv.layers {
        layer_in.push(g.value(z).clone());
        z = attention_block(&mut g, z, lv, &cfg, 2, &mut w).unwrap();
        layer_mid.push(g.value(z).clone());
        z = ffn_block(&mut g, z, lv).unwrap();
    }
    let encoded = g.value(z).clone();
    let (_, probs) = classify(&mut g, &pv, &cfg, z, 2).unwrap();
    let loss = cross_entropy(&mut g, probs, &labels).unwrap();
    let base = g.value(loss).item();
    g.backward(loss).unwrap();
    let grads: Vec<Tensor> = pv
        .vars()
        .iter()
        .map(|&v| g.grad(v).unwrap_or_else(|| Tensor::zeros(g.shape(v))))
        .collect();
    let cache = Cache {
        patches,
        layer_in,
        layer_mid,
        encoded,
    };

    // The restarted evaluations must reproduce the plain forward exactly.
    let mut g2 = Graph::new();
    let pv2 = ParamVars::register(&mut g2, &params, false).unwrap();
    let f = forward(&mut g2, &pv2, &cfg, &images).unwrap();
    let l2 = cross_entropy(&mut g2, f.probs, &labels).unwrap();
    ensure(g2.value(l2).item().to_bits() == base.to_bits(), || {
        format!("seed {seed}: staged loss {base} differs from forward")
    })?;
    let l = cfg.num_layers;
    for entry in [Entry::Embed, Entry::Attention(0), Entry::Ffn(0), Entry::Attention(l - 1), Entry::Ffn(l - 1), Entry::Head] {
        let v = loss_from(&params, &cache, entry, &labels);
        ensure(v.to_bits() == base.to_bits(), || {
            format!("seed {seed}: restart at {entry:?} gives {v}, expected {base}")
        })?;
    }

    let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
    let mut work = params.clone();
    let mut report = SeedReport {
        elements: 0,
        max_rel: 0.0,
        roundoff: 0,
        failures: Vec::new(),
    };
    for (t, name) in names.iter().enumerate() {
        let entry = entry_of(name);
        for j in 0..grads[t].numel() {
            let orig = work.tensors()[t].data()[j];
            work.tensors_mut()[t].data_mut()[j] = orig + FD_STEP;
            let plus = loss_from(&work, &cache, entry, &labels);
            work.tensors_mut()[t].data_mut()[j] = orig - FD_STEP;
            let minus = loss_from(&work, &cache, entry, &labels);
            work.tensors_mut()[t].data_mut()[j] = orig;

            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let analytic = grads[t].data()[j];
            let diff = (analytic - numeric).abs();
            let rel = diff / analytic.abs().max(numeric.abs()).max(1e-8);
            // Cancellation error of the central difference itself.
            let roundoff = 8.0 * f64::EPSILON * plus.abs().max(minus.abs()) / FD_STEP;
            report.elements += 1;
            if rel < GRAD_REL_TOL {
                report.max_rel = report.max_rel.max(rel);
            } else if diff < roundoff {
                report.roundoff += 1;
            } else if report.failures.len() < 5 {
                report.failures.push(format!(
                    "seed {seed} {name}[{j}]: analytic {analytic:e} vs numeric {numeric:e} (rel {rel:.2e})"
                ));
            } else {
                report.failures.push(String::new());
            }
        }
    }
    Ok(report)
}

fn c1_gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let (mut elements, mut max_rel, mut roundoff, mut failures) = (0, 0.0f64, 0, Vec::new());
    for seed in [11, 23, 47] {
        let r = gradcheck_seed(seed)?;
        elements += r.elements;
        max_rel = max_rel.max(r.max_rel);
        roundoff += r.roundoff;
        failures.extend(r.failures);
    }
    let took = start.elapsed();
    let detail = format!(
        "{elements} elements over 3 seeds, max rel err {max_rel:.2e}, {roundoff} within FD roundoff, {:.1}s",
        took.as_secs_f64()
    );
    ensure(failures.is_empty(), || {
        let shown: Vec<_> = failures.iter().filter(|f| !f.is_empty()).cloned().collect();
        format!("{} mismatches; {}; {detail}", failures.len(), shown.join("; "))
    })?;
    ensure(took < GRAD_BUDGET, || format!("over the {}s budget: {detail}", GRAD_BUDGET.as_secs()))?;
    Ok(detail)
}

// ---------------------------------------------------------------- 2

fn c2_overfit_surrogate() -> Outcome {
    let start = Instant::now();
    let cfg = ModelConfig::tiny();
    let ds = generate_synthetic(32, 32, 32, 42).unwrap();
    let held_out = generate_synthetic(16, 32, 32, 43).unwrap();
    let tc = TrainConfig {
        batch_size: 32,
        learning_rate: 1e-4,
        seed: 42,
        ..TrainConfig::default()
    };
    let mut params = init_params(&cfg, tc.seed).unwrap();
    let mut opt = OptimizerState::zeros_like(params.tensors());
    let all: Vec<usize> = (0..ds.len()).collect();
    let mut reached = None;
    for epoch in 1..=200 {
        train_epoch(&mut params, &mut opt, &ds, &all, &tc, epoch).unwrap();
        if evaluate(&params, &ds, &all, &tc).unwrap().accuracy == 1.0 {
            reached = Some(epoch);
            break;
        }
    }
    let epoch = reached.ok_or("train accuracy below 1.0 after 200 epochs")?;
    let held: Vec<usize> = (0..held_out.len()).collect();
    let acc = evaluate(&params, &held_out, &held, &tc).unwrap().accuracy;
    let took = start.elapsed();
    let detail = format!(
        "train acc 1.0 at epoch {epoch}, held-out acc {acc:.4} on 32 fresh samples, {:.1}s",
        took.as_secs_f64()
    );
    ensure(acc >= 0.95, || detail.clone())?;
    ensure(took < Duration::from_secs(600), || format!("over budget: {detail}"))?;
    Ok(detail)
}

// ---------------------------------------------------------------- 3

fn c3_auc_oracle() -> Outcome {
    let mut r = from_seed(2024);
    let (mut tied_sets, mut worst) = (0, 0.0f64);
    for set in 0..1000 {
        let n = 2 + below(&mut r, 499);
        let mut labels: Vec<usize> = (0..n).map(|_| below(&mut r, 2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let force_ties = set % 5 == 0;
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                if force_ties {
                    below(&mut r, 6) as f64 / 5.0
                } else {
                    unit(&mut r)
                }
            })
            .collect();
        let mut sorted = scores.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            tied_sets += 1;
        }
        let a = roc(&scores, &labels).unwrap().auc;
        let b = auc_pairwise_oracle(&scores, &labels).unwrap();
        worst = worst.max((a - b).abs());
        ensure((a - b).abs() <= 1e-12, || format!("set {set}: trapezoid {a} vs pairwise {b}"))?;
    }
    ensure(tied_sets >= 100, || format!("only {tied_sets} sets had ties"))?;
    let a = roc(&[0.9, 0.8, 0.7, 0.6], &[1, 1, 0, 1]).unwrap().auc;
    ensure(a == 2.0 / 3.0, || format!("hand case gave {a}"))?;
    Ok(format!(
        "1000 sets ({tied_sets} with ties), max |trapezoid - pairwise| {worst:.1e}, hand case = 2/3 exactly"
    ))
}

// ---------------------------------------------------------------- 4

fn c4_f1_consistency() -> Outcome {
    let (f1, undefined) = f1_score(1.0, 0.9927);
    ensure(!undefined && (f1 - 0.99634).abs() <= 5e-5, || format!("f1 {f1}"))?;
    // The same profile as counts: 9927 of 10000 positives found, no false alarms.
    let cm = ConfusionMatrix {
        tp: 9927,
        fp: 0,
        fn_: 73,
        tn: 5000,
        positive_class: 1,
    };
    let s = summary(&cm).unwrap();
    ensure(s.precision == 1.0 && (s.recall - 0.9927).abs() < 1e-15, || format!("{s:?}"))?;
    ensure((s.f1 - 0.99634).abs() <= 5e-5, || format!("summary f1 {}", s.f1))?;
    ensure(percent(s.f1) == "99.63", || format!("rendered {}", percent(s.f1)))?;
    Ok(format!("f1 = {f1:.6}, rendered {}%", percent(f1)))
}

// ---------------------------------------------------------------- 5

struct Injected(Vec<f64>);

impl EpochRunner for Injected {
    fn run_epoch(&mut self, epoch: usize) -> vitray::trainer::Result<EpochRecord> {
        Ok(EpochRecord {
            epoch,
            train_loss: 0.0,
            train_accuracy: 0.0,
            test_loss: 0.0,
            test_accuracy: self.0[epoch - 1],
        })
    }
    fn on_improvement(&mut self, _: &EpochRecord) -> vitray::trainer::Result<()> {
        Ok(())
    }
}

/// Counter logic written out directly: returns (stop epoch, best epoch).
fn reference_stop(acc: &[f64], patience: usize) -> (usize, usize) {
    let (mut best, mut best_epoch, mut counter) = (f64::NEG_INFINITY, 0, 0);
    for (i, &a) in acc.iter().enumerate() {
        if a > best {
            best = a;
            best_epoch = i + 1;
            counter = 0;
        } else {
            counter += 1;
        }
        if counter >= patience {
            return (i + 1, best_epoch);
        }
    }
    (acc.len(), best_epoch)
}

fn c5_early_stopping() -> Outcome {
    let mut r = from_seed(77);
    let mut early = 0;
    for case in 0..10_000 {
        let len = 1 + below(&mut r, 100);
        let patience = 1 + below(&mut r, 10);
        let levels = 2 + below(&mut r, 20);
        let acc: Vec<f64> = (0..len).map(|_| below(&mut r, levels) as f64 / levels as f64).collect();
        let s = run_loop(&mut Injected(acc.clone()), len, patience).unwrap();
        let want = reference_stop(&acc, patience);
        ensure((s.stop_epoch, s.best_epoch) == want, || {
            format!("case {case}: loop ({}, {}) vs reference {want:?} for patience {patience}, {acc:?}", s.stop_epoch, s.best_epoch)
        })?;
        if s.stop_epoch < len {
            early += 1;
        }
    }
    let s = run_loop(&mut Injected(vec![0.6, 0.7, 0.7, 0.7]), 4, 2).unwrap();
    ensure((s.stop_epoch, s.best_epoch) == (4, 2), || format!("hand case {s:?}"))?;
    Ok(format!("10000 sequences agree ({early} stopped early)"))
}

// ---------------------------------------------------------------- 6

fn c6_replication_lossless() -> Outcome {
    let mut r = from_seed(6);
    for case in 0..100 {
        let (h, w) = (1 + below(&mut r, 64), 1 + below(&mut r, 64));
        let px: Vec<u8> = (0..h * w).map(|_| below(&mut r, 256) as u8).collect();
        let t = normalize(&GrayImage::new(h, w, px).unwrap());
        let rep = replicate_channels(&t).unwrap();
        ensure(rep.shape() == (3, h, w), || format!("case {case}: shape {:?}", rep.shape()))?;
        for c in 0..3 {
            let back = extract_channel(&rep, c).unwrap();
            let same = back.values().iter().zip(t.values()).all(|(a, b)| a.to_bits() == b.to_bits());
            ensure(same && back.shape() == t.shape(), || format!("case {case}: channel {c} differs"))?;
        }
        let planes_equal = rep.plane(0) == rep.plane(1) && rep.plane(1) == rep.plane(2);
        ensure(planes_equal, || format!("case {case}: channels not identical"))?;
    }
    Ok("100 random images, every channel bitwise equal to the source".into())
}

// ---------------------------------------------------------------- 7

fn random_image(cfg: &ModelConfig, r: &mut Rng) -> ImageTensor {
    let n = 3 * cfg.image_size * cfg.image_size;
    ImageTensor::new(3, cfg.image_size, cfg.image_size, (0..n).map(|_| unit(r)).collect()).unwrap()
}

fn max_row_error(g: &Graph, vars: &[vitray::tensor::Var]) -> f64 {
    let mut worst = 0.0f64;
    for &v in vars {
        let t = g.value(v);
        let rows = t.shape()[0];
        for i in 0..rows {
            worst = worst.max((t.row(i).iter().sum::<f64>() - 1.0).abs());
        }
    }
    worst
}

fn c7_normalization() -> Outcome {
    let mut r = from_seed(7);
    let mut parts = Vec::new();
    for (name, batch, seeds) in [("tiny", 3, 5u64), ("paper", 1, 1)] {
        let cfg = ModelConfig::preset(name).unwrap();
        let mut worst = 0.0f64;
        for seed in 0..seeds {
            let params = init_params(&cfg, 100 + seed).unwrap();
            let imgs: Vec<ImageTensor> = (0..batch).map(|_| random_image(&cfg, &mut r)).collect();
            let mut g = Graph::new();
            let pv = ParamVars::register(&mut g, &params, false).unwrap();
            drop(params);
            let f = forward(&mut g, &pv, &cfg, &imgs.iter().collect::<Vec<_>>()).unwrap();
            let expected = cfg.num_layers * cfg.num_heads * batch;
            ensure(f.attention.len() == expected, || format!("{name}: {} attention maps", f.attention.len()))?;
            worst = worst.max(max_row_error(&g, &f.attention));
            worst = worst.max(max_row_error(&g, &[f.probs]));
        }
        ensure(worst <= 1e-10, || format!("{name}: row sum off by {worst:e}"))?;
        parts.push(format!("{name} max |row sum - 1| {worst:.1e}"));
    }
    Ok(parts.join(", "))
}

// ---------------------------------------------------------------- 8

fn vitray(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_vitray"))
        .args(args)
        .env_remove("VITRAY_SEED")
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn c8_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = tmp.path().join("data");
    vitray(&["synth", "--out", p(&data), "--per-class", "16", "--size", "32", "--seed", "42"])?;
    let mut logs = Vec::new();
    let mut ckpts = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        vitray(&["train", "--data", p(&data), "--out", p(&out), "--preset", "tiny", "--epochs", "6", "--seed", "42"])?;
        logs.push(std::fs::read(out.join("train_log.csv")).map_err(|e| e.to_string())?);
        ckpts.push(std::fs::read(out.join("best.ckpt")).map_err(|e| e.to_string())?);
    }
    ensure(logs[0] == logs[1], || "train_log.csv differs between runs".into())?;
    ensure(ckpts[0] == ckpts[1], || "best.ckpt differs between runs".into())?;
    let rows = String::from_utf8_lossy(&logs[0]).lines().count() - 1;
    Ok(format!("2 runs: {rows}-row logs and {}-byte checkpoints identical", ckpts[0].len()))
}

// ---------------------------------------------------------------- 9

fn c9_checkpoint_round_trip() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let ckpt = Checkpoint {
        params: init_params(&ModelConfig::tiny(), 9).unwrap(),
        best_accuracy: 0.9375,
        best_epoch: 12,
    };
    let (a, b) = (tmp.path().join("a.ckpt"), tmp.path().join("b.ckpt"));
    save_checkpoint(&ckpt, &a).map_err(|e| e.to_string())?;
    let loaded = load_checkpoint(&a).map_err(|e| e.to_string())?;
    save_checkpoint(&loaded, &b).map_err(|e| e.to_string())?;
    let (ba, bb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    ensure(ba == bb, || "save-load-save bytes differ".into())?;
    ensure(loaded == ckpt, || "loaded checkpoint differs".into())?;

    let mut bad = ba.clone();
    bad[0] ^= 0x20;
    match decode_checkpoint(&bad) {
        Err(e @ CheckpointError::BadMagic(_)) if e.to_string().contains("bad magic") => {}
        other => return Err(format!("flipped magic gave {other:?}")),
    }
    let cuts = [5, 12, ba.len() / 3, ba.len() / 2, ba.len() - 8, ba.len() - 1];
    for cut in cuts {
        match decode_checkpoint(&ba[..cut]) {
            Err(CheckpointError::Corrupt(_)) => {}
            other => return Err(format!("truncated at {cut} gave {:?}", other.map(|_| ()))),
        }
    }
    ensure(encode_checkpoint(&loaded) == ba, || "re-encoding differs".into())?;
    Ok(format!("{} bytes identical after save-load-save; bad magic and {} truncations rejected", ba.len(), cuts.len()))
}

// ---------------------------------------------------------------- 10

fn c10_paper_config() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    vitray(&["train", "--preset", "paper", "--out", p(tmp.path()), "--dry-run"])?;
    let text = std::fs::read_to_string(tmp.path().join("config.resolved")).map_err(|e| e.to_string())?;
    let want = [
        ("num_patches", "196"),
        ("seq_len", "197"),
        ("head_dim", "64"),
        ("batch_size", "32"),
        ("learning_rate", "0.0001"),
        ("split", "80:20"),
        ("image_size", "224"),
        ("patch_size", "16"),
        ("embed_dim", "768"),
        ("num_layers", "12"),
        ("num_heads", "12"),
        ("ffn_dim", "3072"),
    ];
    for (k, v) in want {
        let line = format!("{k}={v}");
        ensure(text.lines().any(|l| l == line), || format!("`{line}` missing from config.resolved"))?;
    }
    Ok("N=196, seq 197, d_k=64, B=32, lr=0.0001, split 80:20".into())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient fidelity", c1_gradient_fidelity),
        ("desk-scale overfit surrogate", c2_overfit_surrogate),
        ("AUC oracle equivalence", c3_auc_oracle),
        ("F1 consistency", c4_f1_consistency),
        ("early-stopping state machine", c5_early_stopping),
        ("replication losslessness", c6_replication_lossless),
        ("normalization invariants", c7_normalization),
        ("training determinism", c8_determinism),
        ("checkpoint round trip", c9_checkpoint_round_trip),
        ("paper-preset configuration", c10_paper_config),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|s| s.parse().ok());
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = i + 1;
        if only.is_some_and(|o| o != id) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|e| Err(format!("panicked: {:?}", e.downcast_ref::<String>().map(String::as_str).or(e.downcast_ref::<&str>().copied()))));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  C{id:<2} {name}: {detail} [{secs:.1}s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL  C{id:<2} {name}: {why} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
