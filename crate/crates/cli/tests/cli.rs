use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use minvae_core::io::{read_checkpoint, read_wav, write_checkpoint, Manifest};

const BIN: &str = env!("CARGO_BIN_EXE_minvae");

fn minvae(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn ok(args: &[&str]) -> Output {
    let out = minvae(args);
    assert_eq!(
        code(&out),
        0,
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &[&str] = &[
    "--n_utterances",
    "4",
    "--frames_per_utterance",
    "20",
    "--freq_bins",
    "16",
    "--latent",
    "3",
    "--visual",
    "3",
    "--n_test",
    "2",
    "--snr_levels",
    "-5,0",
];

fn synth(dir: &Path) -> PathBuf {
    let corpus = dir.join("corpus");
    let mut args = vec!["synth", "--out", s(&corpus)];
    args.extend_from_slice(SMALL);
    ok(&args);
    corpus
}

fn train(corpus: &Path, out: &Path, epochs: &str, resume: Option<&Path>) -> Output {
    let mut args = vec![
        "train",
        "--corpus",
        s(corpus),
        "--out",
        s(out),
        "--epochs",
        epochs,
        "--latent",
        "3",
        "--hidden",
        "8",
        "--batch_size",
        "16",
        "--learning_rate",
        "1e-3",
    ];
    if let Some(c) = resume {
        args.extend_from_slice(&["--checkpoint", s(c)]);
    }
    minvae(&args)
}

fn enhance(ckpt: &Path, corpus: &Path, out: &Path, extra: &[&str]) -> Output {
    let input = corpus.join("utt0003.snr0.noisy.wav");
    let visual = corpus.join("utt0003.visual.arr");
    let mut args = vec![
        "enhance",
        "--checkpoint",
        s(ckpt),
        "--input",
        s(&input),
        "--visual_features",
        s(&visual),
        "--out",
        s(out),
        "--vem_iters",
        "3",
    ];
    args.extend_from_slice(extra);
    minvae(&args)
}

#[test]
fn synth_writes_a_verified_reproducible_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(dir.path());
    let manifest = Manifest::read(&corpus.join("manifest.tsv")).unwrap();
    // 4 truth arrays, 6 files per utterance, 2 per test mixture.
    assert_eq!(manifest.entries.len(), 4 + 4 * 6 + 2 * 2 * 2);
    for e in &manifest.entries {
        manifest.load(&corpus, e).unwrap();
    }

    let again = dir.path().join("again");
    let mut args = vec!["synth", "--out", s(&again)];
    args.extend_from_slice(SMALL);
    ok(&args);
    for e in &manifest.entries {
        assert_eq!(
            fs::read(corpus.join(&e.path)).unwrap(),
            fs::read(again.join(&e.path)).unwrap(),
            "{}",
            e.path
        );
    }
}

#[test]
fn tampered_corpus_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(dir.path());
    let path = corpus.join("utt0000.visual.arr");
    let mut bytes = fs::read(&path).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    fs::write(&path, bytes).unwrap();
    let out = train(&corpus, &dir.path().join("run"), "1", None);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));

    let manifest = corpus.join("manifest.tsv");
    let text = fs::read_to_string(&manifest)
        .unwrap()
        .replacen("train", "test", 1);
    fs::write(&manifest, text).unwrap();
    assert_eq!(code(&train(&corpus, &dir.path().join("run"), "1", None)), 2);
}

#[test]
fn training_checkpoint_round_trips_and_resumes_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(dir.path());
    let whole = dir.path().join("whole");
    assert_eq!(code(&train(&corpus, &whole, "3", None)), 0);
    let ckpt = whole.join("model.ckpt");
    let model = read_checkpoint(&ckpt).unwrap();
    let copy = dir.path().join("copy.ckpt");
    write_checkpoint(&copy, &model).unwrap();
    assert_eq!(fs::read(&ckpt).unwrap(), fs::read(&copy).unwrap());

    let first = dir.path().join("first");
    assert_eq!(code(&train(&corpus, &first, "1", None)), 0);
    let second = dir.path().join("second");
    assert_eq!(
        code(&train(
            &corpus,
            &second,
            "3",
            Some(&first.join("model.ckpt"))
        )),
        0
    );
    assert_eq!(
        fs::read(&ckpt).unwrap(),
        fs::read(second.join("model.ckpt")).unwrap()
    );
    assert_eq!(
        fs::read_to_string(whole.join("train_log.tsv")).unwrap(),
        fs::read_to_string(second.join("train_log.tsv")).unwrap()
    );
    assert_eq!(
        fs::read_to_string(whole.join("train_log.tsv"))
            .unwrap()
            .lines()
            .count(),
        4
    );
}

#[test]
fn unknown_variant_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = minvae(&[
        "train",
        "--variant",
        "b-vae",
        "--corpus",
        "/nonexistent",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn missing_corpus_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = minvae(&[
        "train",
        "--corpus",
        "/nonexistent/corpus",
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(code(&out), 3);
}

#[test]
fn enhancement_is_deterministic_and_keeps_duration() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(dir.path());
    let run = dir.path().join("run");
    assert_eq!(code(&train(&corpus, &run, "1", None)), 0);
    let ckpt = run.join("model.ckpt");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&enhance(&ckpt, &corpus, &a, &[])), 0);
    assert_eq!(code(&enhance(&ckpt, &corpus, &b, &[])), 0);
    for f in ["enhanced.wav", "diagnostics.tsv"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let input = read_wav(&corpus.join("utt0003.snr0.noisy.wav")).unwrap();
    let output = read_wav(&a.join("enhanced.wav")).unwrap();
    assert_eq!(input.len(), output.len());
    assert_eq!(
        fs::read_to_string(a.join("diagnostics.tsv"))
            .unwrap()
            .lines()
            .count(),
        4
    );

    let mismatch = enhance(
        &ckpt,
        &corpus,
        &dir.path().join("c"),
        &["--variant", "a-vae"],
    );
    assert_eq!(code(&mismatch), 2);
    let no_features = minvae(&[
        "enhance",
        "--checkpoint",
        s(&ckpt),
        "--input",
        s(&corpus.join("utt0003.snr0.noisy.wav")),
        "--out",
        s(&dir.path().join("d")),
    ]);
    assert_eq!(code(&no_features), 2);
    assert!(!dir.path().join("d").exists());
}

#[test]
fn eval_reports_every_method_and_snr() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(dir.path());
    let run = dir.path().join("run");
    assert_eq!(code(&train(&corpus, &run, "1", None)), 0);
    let out = dir.path().join("eval");
    ok(&[
        "eval",
        "--checkpoint",
        s(&run.join("model.ckpt")),
        "--corpus",
        s(&corpus),
        "--out",
        s(&out),
        "--vem_iters",
        "2",
    ]);
    let summary = fs::read_to_string(out.join("summary.tsv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 3 * 2);
    for method in ["bypass", "oracle-wiener"] {
        assert!(summary.lines().any(|l| l.starts_with(method)), "{summary}");
    }
    let scores = fs::read_to_string(out.join("scores.tsv")).unwrap();
    assert_eq!(
        scores.lines().next().unwrap(),
        "utterance_id\tsnr_db\tin_sisdr\tout_sisdr\tdelta"
    );
    assert_eq!(scores.lines().count(), 1 + 2 * 2);
}

#[test]
fn gradcheck_passes_detects_sabotage_and_needs_a_suite() {
    let out = ok(&["gradcheck"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(
        !text.is_empty() && text.lines().all(|l| l.starts_with("PASS")),
        "{text}"
    );
    assert_eq!(code(&minvae(&["gradcheck", "--sabotage", "true"])), 4);
    assert_eq!(code(&minvae(&["gradcheck", "--suites", ""])), 2);
}

#[test]
fn unknown_keys_abort_before_side_effects() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "seed = 3\nepoch = 4\n").unwrap();
    let out_dir = dir.path().join("never");
    let out = minvae(&["synth", "--config", s(&cfg), "--out", s(&out_dir)]);
    assert_eq!(code(&out), 2);
    assert!(!out_dir.exists());
    assert_eq!(
        code(&minvae(&["synth", "--epoch", "4", "--out", s(&out_dir)])),
        2
    );
    assert!(!out_dir.exists());
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(
        &cfg,
        "n_utterances = 3\nn_test = 1\nframes_per_utterance = 10\nfreq_bins = 16\nlatent = 2\nvisual = 2\n",
    )
    .unwrap();
    let out_dir = dir.path().join("c");
    ok(&[
        "synth",
        "--config",
        s(&cfg),
        "--n_utterances",
        "2",
        "--out",
        s(&out_dir),
    ]);
    let manifest = Manifest::read(&out_dir.join("manifest.tsv")).unwrap();
    assert_eq!(
        manifest
            .entries
            .iter()
            .filter(|e| e.kind == "spectrogram")
            .count(),
        2
    );
}
