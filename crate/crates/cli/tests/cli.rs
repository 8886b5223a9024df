use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn wsail(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wsail"))
        .args(args)
        .current_dir(cwd)
        .env("WSAIL_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = wsail(args, cwd);
    assert!(out.status.success(), "wsail {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

const SMALL: &str = "\
[nmf]
components = 4
iterations = 15

[model]
hidden = 16
embedding = 8
lr = 1e-3
epochs = 2

[proposals]
tsp = true
ncp = true
";

fn small_corpus(dir: &Path) {
    fs::write(dir.join("small.ini"), SMALL).unwrap();
    ok(
        &[
            "--config",
            "small.ini",
            "synth",
            "--out",
            "corpus",
            "--classes",
            "3",
            "--train",
            "6",
            "--test",
            "3",
            "--seconds",
            "2",
            "--noise-scenes",
            "2",
        ],
        dir,
    );
}

#[test]
fn help_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(wsail(&["--help"], dir.path()).status.code(), Some(0));
    assert_eq!(wsail(&["--version"], dir.path()).status.code(), Some(0));
    assert_eq!(wsail(&["train", "--bogus"], dir.path()).status.code(), Some(1));
    assert_eq!(wsail(&[], dir.path()).status.code(), Some(1));

    fs::write(dir.path().join("bad.ini"), "[nmf]\nrank = 3\n").unwrap();
    let out = wsail(&["--config", "bad.ini", "nmf-inspect", "--input", "x.wav"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown config entry"));
}

#[test]
fn missing_checkpoint_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = wsail(&["classify", "--checkpoint", "nope.ckpt", "a.wav"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("missing checkpoint"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
}

#[test]
fn missing_manifest_audio_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("m.jsonl"), r#"{"id":"a","audio":"gone.wav","labels":["x"],"split":"train"}"#).unwrap();
    let out = wsail(&["train", "--manifest", "m.jsonl", "--out", "run"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn full_pipeline_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    small_corpus(dir);
    assert!(dir.join("corpus/manifest.jsonl").is_file());
    assert!(dir.join("corpus/config.ini").is_file());

    let log_a = ok(&["--config", "small.ini", "train", "--manifest", "corpus/manifest.jsonl", "--out", "run-a"], dir);
    ok(&["--config", "small.ini", "train", "--manifest", "corpus/manifest.jsonl", "--out", "run-b"], dir);
    assert_eq!(log_a.lines().count(), 4);
    for file in ["loss.tsv", "model.ckpt", "config.ini"] {
        assert_eq!(
            fs::read(dir.join("run-a").join(file)).unwrap(),
            fs::read(dir.join("run-b").join(file)).unwrap(),
            "{file}"
        );
    }
    // Re-running from the snapshot reproduces the run.
    ok(&["--config", "run-a/config.ini", "train", "--manifest", "corpus/manifest.jsonl", "--out", "run-c"], dir);
    assert_eq!(fs::read(dir.join("run-a/model.ckpt")).unwrap(), fs::read(dir.join("run-c/model.ckpt")).unwrap());

    ok(
        &["classify", "--checkpoint", "run-a/model.ckpt", "--manifest", "corpus/manifest.jsonl", "--out", "pred.jsonl"],
        dir,
    );
    let preds = fs::read_to_string(dir.join("pred.jsonl")).unwrap();
    assert_eq!(preds.lines().count(), 3);
    assert!(preds.lines().all(|l| l.contains("\"scores\":[")));
    let single = ok(&["classify", "--checkpoint", "run-a/model.ckpt", "corpus/audio/test-0000.wav"], dir);
    assert_eq!(single.lines().count(), 1);

    let table = ok(
        &[
            "eval-cls",
            "--checkpoint",
            "run-a/model.ckpt",
            "run-b/model.ckpt",
            "--manifest",
            "corpus/manifest.jsonl",
            "--out",
            "cls",
        ],
        dir,
    );
    assert!(table.contains("(a) A (NCP, TSP)") && table.contains("ensemble (a) + (b)"));

    let noisy = ok(
        &[
            "eval-noisy",
            "--checkpoint",
            "run-a/model.ckpt",
            "--manifest",
            "corpus/manifest.jsonl",
            "--snr",
            "inf,0,-10,-20",
            "--out",
            "noisy",
        ],
        dir,
    );
    let rows: Vec<&str> = noisy.lines().collect();
    assert_eq!(rows.len(), 5);
    assert!(rows[1].starts_with("clean") && rows[2].starts_with("0 dB") && rows[4].starts_with("-20 dB"));
    assert_eq!(fs::read_to_string(dir.join("noisy/records-0.jsonl")).unwrap().lines().count(), 12);

    let sdr_a = ok(
        &["eval-sdr", "--checkpoint", "run-a/model.ckpt", "--manifest", "corpus/manifest.jsonl", "--out", "sdr-a"],
        dir,
    );
    assert!(sdr_a.contains("Label known") && sdr_a.contains("Label unknown"));
    for row in ["mixture", "soft", "tau=0.1", "tau=0.2"] {
        assert!(sdr_a.lines().any(|l| l.starts_with(row)), "{row} missing from\n{sdr_a}");
    }
    ok(&["eval-sdr", "--checkpoint", "run-a/model.ckpt", "--manifest", "corpus/manifest.jsonl", "--out", "sdr-b"], dir);
    assert_eq!(fs::read(dir.join("sdr-a/records.jsonl")).unwrap(), fs::read(dir.join("sdr-b/records.jsonl")).unwrap());

    let alpha = ok(
        &[
            "enhance",
            "--checkpoint",
            "run-a/model.ckpt",
            "--input",
            "corpus/audio/test-0001.wav",
            "--out",
            "enh",
            "--mode",
            "label-known",
            "--label",
            "class01",
            "--tau",
            "0.1",
        ],
        dir,
    );
    assert!(alpha.starts_with("class class01 (label-known), mask tau=0.1"));
    assert_eq!(alpha.lines().count(), 2 + 4);
    assert!(dir.join("enh/source.wav").is_file() && dir.join("enh/noise.wav").is_file());
    let out = wsail(
        &[
            "enhance",
            "--checkpoint",
            "run-a/model.ckpt",
            "--input",
            "corpus/audio/test-0001.wav",
            "--out",
            "enh2",
            "--mode",
            "label-known",
        ],
        dir,
    );
    assert_eq!(out.status.code(), Some(1));

    let inspect =
        ok(&["nmf-inspect", "--input", "corpus/audio/test-0002.wav", "--components", "3", "--iterations", "10"], dir);
    let lines: Vec<&str> = inspect.lines().collect();
    assert_eq!(lines.len(), 2 + 3);
    let share: f64 = lines[2..].iter().map(|l| l.split('\t').nth(1).unwrap().parse::<f64>().unwrap()).sum();
    assert!((share - 1.0).abs() < 1e-4);
}

#[test]
fn tsp_checkpoint_cannot_enhance() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    small_corpus(dir);
    ok(
        &[
            "--config",
            "small.ini",
            "--proposals",
            "tsp",
            "train",
            "--manifest",
            "corpus/manifest.jsonl",
            "--out",
            "run",
        ],
        dir,
    );
    let out = wsail(
        &["enhance", "--checkpoint", "run/model.ckpt", "--input", "corpus/audio/test-0000.wav", "--out", "e"],
        dir,
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn visual_stream_trains_and_classifies() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("small.ini"), SMALL).unwrap();
    ok(
        &[
            "--config",
            "small.ini",
            "synth",
            "--out",
            "corpus",
            "--classes",
            "2",
            "--train",
            "4",
            "--test",
            "2",
            "--seconds",
            "2",
            "--noise-scenes",
            "1",
            "--visual-dim",
            "6",
        ],
        dir,
    );
    ok(&["--config", "small.ini", "train", "--manifest", "corpus/manifest.jsonl", "--out", "run", "--visual"], dir);
    ok(&["classify", "--checkpoint", "run/model.ckpt", "--manifest", "corpus/manifest.jsonl", "--out", "p.jsonl"], dir);
    assert_eq!(fs::read_to_string(dir.join("p.jsonl")).unwrap().lines().count(), 2);
}
