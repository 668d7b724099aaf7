//! Drives the `bipn` binary end to end on a tiny configuration.

use std::path::Path;
use std::process::{Command, Output};

const TINY: &[&str] = &[
    "--precision",
    "f64",
    "--scales",
    "1",
    "--frames",
    "2",
    "--resolution",
    "16",
    "--enc_channels",
    "4,4,4",
    "--dec_channels",
    "4,4,4",
    "--disc_channels",
    "4,4,4",
    "--n_shapes",
    "1",
    "--size_min",
    "2",
    "--size_max",
    "3",
    "--batch_size",
    "2",
    "--eval_clips",
    "3",
];

fn bipn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bipn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = bipn(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_eval_resume_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let mut args = vec![
        "train",
        "--iterations",
        "2",
        "--eval_every",
        "1",
        "--output_dir",
        path(&run),
    ];
    args.extend_from_slice(TINY);
    ok(&args);
    for f in [
        "config.txt",
        "train_log.tsv",
        "eval_log.tsv",
        "checkpoint.ckpt",
    ] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let log = std::fs::read_to_string(run.join("train_log.tsv")).unwrap();
    assert_eq!(log.lines().count(), 3);

    let ckpt = run.join("checkpoint.ckpt");
    let eval = ok(&["eval", "--checkpoint", path(&ckpt)]);
    assert!(eval.contains("sharpdiff="), "{eval}");

    ok(&["train", "--resume", path(&ckpt), "--iterations", "3"]);
    let log = std::fs::read_to_string(run.join("train_log.tsv")).unwrap();
    assert_eq!(
        log.lines().count(),
        4,
        "resumed run appends one line:\n{log}"
    );
}

#[test]
fn gen_data_then_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("clips");
    let mut args = vec!["gen-data", "--out", path(&data), "--count", "2"];
    args.extend_from_slice(TINY);
    ok(&args);
    let clips = std::fs::read_dir(&data)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().is_dir())
        .count();
    assert_eq!(clips, 2);
    let mut args = vec!["baseline", "--data", path(&data)];
    args.extend_from_slice(TINY);
    let out = ok(&args);
    assert!(out.contains("sharpdiff="), "{out}");
}

#[test]
fn sample_requires_noise() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("det");
    let mut args = vec!["train", "--iterations", "1", "--output_dir", path(&run)];
    args.extend_from_slice(TINY);
    ok(&args);
    let out = bipn(&["sample", "--checkpoint", path(&run.join("checkpoint.ckpt"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error["));

    let run = dir.path().join("mm");
    let mut args = vec![
        "train",
        "--iterations",
        "1",
        "--mode",
        "multimodal",
        "--noise",
        "true",
        "--output_dir",
        path(&run),
    ];
    args.extend_from_slice(TINY);
    ok(&args);
    let samples = dir.path().join("samples");
    let out = ok(&[
        "sample",
        "--checkpoint",
        path(&run.join("checkpoint.ckpt")),
        "--seeds",
        "4,4,5",
        "--out",
        path(&samples),
    ]);
    assert!(
        out.contains("0\t1\t0.000000e0"),
        "identical seeds give zero difference:\n{out}"
    );
}

#[test]
fn bad_input_reports_an_error() {
    let out = bipn(&["train", "--batch_size", "0"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error["));
    let out = bipn(&["eval", "--checkpoint", "/nonexistent/ckpt"]);
    assert!(!out.status.success());
}

#[test]
fn gradcheck_passes() {
    let out = ok(&["gradcheck"]);
    assert!(out.contains("bipn_single_scale"), "{out}");
}
