//! End-to-end tests of the `lgmr` binary: exit codes, determinism of
//! gen-data, and the full generate/train/eval/predict/dump pipeline on a
//! tiny configuration.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn lgmr() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lgmr"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = lgmr().args(args).output().expect("spawn lgmr");
    assert!(
        out.status.success(),
        "lgmr {:?} failed\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn tree_digest(dir: &Path) -> Vec<(PathBuf, u64, u64)> {
    // (relative path, byte length, FNV hash) for every file, sorted
    fn walk(base: &Path, dir: &Path, out: &mut Vec<(PathBuf, u64, u64)>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                let bytes = std::fs::read(&p).unwrap();
                let mut h = 1469598103934665603u64;
                for b in &bytes {
                    h ^= *b as u64;
                    h = h.wrapping_mul(1099511628211);
                }
                out.push((
                    p.strip_prefix(base).unwrap().to_path_buf(),
                    bytes.len() as u64,
                    h,
                ));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}

#[test]
fn unknown_command_exits_2() {
    let out = lgmr().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = lgmr().args(["flops", "--no-such-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn schema_errors_exit_3() {
    let out = lgmr()
        .args(["eval", "--checkpoint", "/nonexistent.ckpt", "--data", "/nonexistent"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));

    // unknown config key
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "model.no_such_knob=1\n").unwrap();
    let out = lgmr()
        .args([
            "gen-data",
            "--out",
            dir.path().join("x").to_str().unwrap(),
            "--config",
            cfg.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn gen_data_is_byte_identical_for_same_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let common = [
        "--count",
        "3",
        "--seed",
        "7",
        "--set",
        "synth.t=16",
        "--set",
        "synth.n=2",
        "--set",
        "synth.video_dim=8",
        "--set",
        "synth.text_dim=6",
    ];
    run_ok(&[&["gen-data", "--out", a.to_str().unwrap()], &common[..]].concat());
    run_ok(&[&["gen-data", "--out", b.to_str().unwrap()], &common[..]].concat());
    let da = tree_digest(&a);
    let db = tree_digest(&b);
    assert!(!da.is_empty());
    assert_eq!(da, db, "same seed must produce byte-identical trees");

    // different seed differs
    let c = dir.path().join("c");
    let mut args: Vec<&str> = vec!["gen-data", "--out", c.to_str().unwrap()];
    args.extend_from_slice(&common);
    let pos = args.iter().position(|s| *s == "7").unwrap();
    args[pos] = "8";
    run_ok(&args);
    assert_ne!(da, tree_digest(&c));
}

#[test]
fn flops_reports_ratio_below_one() {
    let out = run_ok(&["flops", "--t", "1000", "--m", "25"]);
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    let line = text
        .lines()
        .find(|l| l.starts_with("1000"))
        .expect("row for T=1000");
    let ratio: f64 = line.split('|').next_back().unwrap().trim().parse().unwrap();
    assert!(ratio < 1.0, "ratio {ratio} must be below 1");
    assert!(text.contains("cheaper at every requested T"));
}

#[test]
fn pipeline_gen_train_eval_predict_dump() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    run_ok(&[
        "gen-data",
        "--out",
        data.to_str().unwrap(),
        "--count",
        "4",
        "--seed",
        "3",
        "--set",
        "synth.t=12",
        "--set",
        "synth.n=2",
        "--set",
        "synth.video_dim=8",
        "--set",
        "synth.text_dim=6",
        "--set",
        "synth.tokens_per_paragraph=3",
    ]);

    let ckpt_dir = dir.path().join("run");
    let model_sets = [
        "--set",
        "model.hidden_dim=16",
        "--set",
        "model.heads=2",
        "--set",
        "model.ffn_dim=32",
        "--set",
        "model.window_len=5",
        "--set",
        "model.subparagraph_count=2",
        "--set",
        "model.encoder_layers=1",
        "--set",
        "model.decoder_layers=1",
        "--set",
        "model.batch_size=2",
    ];
    let out = run_ok(&[
        &[
            "train",
            "--data",
            data.to_str().unwrap(),
            "--out",
            ckpt_dir.to_str().unwrap(),
            "--seed",
            "1",
            "--epochs",
            "2",
        ],
        &model_sets[..],
    ]
    .concat());
    let stdout = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(stdout.contains("final loss"));
    assert!(ckpt_dir.join("metrics.jsonl").exists());
    assert!(ckpt_dir.join("model_final.lgmrparams").exists());

    // metrics log is line-delimited JSON with the expected fields
    let log = std::fs::read_to_string(ckpt_dir.join("metrics.jsonl")).unwrap();
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for key in ["step", "epoch", "l1", "giou", "att", "total"] {
            assert!(v.get(key).is_some(), "metrics line missing {key}");
        }
    }

    let ckpt = ckpt_dir.join("checkpoint_epoch0002.lgmrckpt");
    assert!(ckpt.exists());

    // eval runs and writes a report
    let report_path = dir.path().join("report.json");
    let out = run_ok(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        report_path.to_str().unwrap(),
    ]);
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(text.contains("mIoU"), "table header expected");
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(&report_path).unwrap()).unwrap();
    assert!(report["miou"].as_f64().unwrap() >= 0.0);
    assert_eq!(report["per_query_iou"].as_array().unwrap().len(), 8);

    // eval is idempotent
    let again = run_ok(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        report_path.to_str().unwrap(),
    ]);
    assert_eq!(out.stdout, again.stdout);

    // predict prints one line per paragraph with seconds
    let ann = data.join("annotations/sample_00000.json");
    let out = run_ok(&[
        "predict",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--annotation",
        ann.to_str().unwrap(),
    ]);
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    let rows: Vec<&str> = text.lines().filter(|l| l.starts_with("paragraph")).collect();
    assert_eq!(rows.len(), 2);
    for row in rows {
        let cols: Vec<&str> = row.split('\t').collect();
        let start: f64 = cols[1].parse().unwrap();
        let end: f64 = cols[2].parse().unwrap();
        assert!(start >= 0.0 && end <= 12.0 + 1e-9 && start <= end);
    }

    // dump-attention writes a layers x N x T tensor
    let attn_path = dir.path().join("attn.lgmrfeat");
    run_ok(&[
        "dump-attention",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--annotation",
        ann.to_str().unwrap(),
        "--out",
        attn_path.to_str().unwrap(),
    ]);
    let tensor = lgmr_core::featfile::read_feat_file(&attn_path).unwrap();
    assert_eq!(tensor.dims, vec![1, 2, 12]);
    // every row of every layer map sums to 1
    for row in tensor.data.chunks(12) {
        let s: f64 = row.iter().map(|&v| v as f64).sum();
        assert!((s - 1.0).abs() < 1e-5, "attention row sums to {s}");
    }

    // random baseline prints an estimate
    let out = run_ok(&[
        "random-baseline",
        "--data",
        data.to_str().unwrap(),
        "--trials",
        "50",
        "--seed",
        "11",
    ]);
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(text.contains("random-baseline mIoU"));

    // resume training for one more epoch from the checkpoint
    let resumed_dir = dir.path().join("resumed");
    let out = run_ok(&[
        &[
            "train",
            "--data",
            data.to_str().unwrap(),
            "--out",
            resumed_dir.to_str().unwrap(),
            "--resume",
            ckpt.to_str().unwrap(),
            "--epochs",
            "3",
        ],
        &model_sets[..],
    ]
    .concat());
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(text.contains("resuming at epoch 2"));
    assert!(resumed_dir.join("checkpoint_epoch0003.lgmrckpt").exists());
}

#[test]
fn train_seed_determinism_via_cli() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    run_ok(&[
        "gen-data",
        "--out",
        data.to_str().unwrap(),
        "--count",
        "3",
        "--seed",
        "5",
        "--set",
        "synth.t=10",
        "--set",
        "synth.n=2",
        "--set",
        "synth.video_dim=6",
        "--set",
        "synth.text_dim=5",
    ]);
    let run_once = |out_dir: &Path| -> String {
        let out = run_ok(&[
            "train",
            "--data",
            data.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "--seed",
            "9",
            "--epochs",
            "2",
            "--set",
            "model.hidden_dim=8",
            "--set",
            "model.heads=2",
            "--set",
            "model.ffn_dim=16",
            "--set",
            "model.window_len=4",
            "--set",
            "model.subparagraph_count=2",
            "--set",
            "model.encoder_layers=1",
            "--set",
            "model.decoder_layers=1",
            "--set",
            "model.batch_size=2",
        ]);
        String::from_utf8_lossy(&out.stdout)
            .lines()
            .find(|l| l.contains("final loss"))
            .unwrap()
            .to_string()
    };
    let a = run_once(&dir.path().join("r1"));
    let b = run_once(&dir.path().join("r2"));
    assert_eq!(a, b, "identical seeds must give identical final losses");
}
