//! End-to-end CLI behavior at tiny scale: the three-task pipeline, task-order
//! enforcement, seed reproducibility, label sources, and exit codes.

use flngen_core::synthetic;
use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};
use tempfile::tempdir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_flngen"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("spawn flngen");
    assert!(
        out.status.success(),
        "command {:?} failed with {:?}\nstdout: {}\nstderr: {}",
        args,
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn exit_code(args: &[&str]) -> i32 {
    bin().args(args).output().expect("spawn flngen").status.code().unwrap_or(-1)
}

struct Pipeline {
    #[allow(dead_code)]
    root: tempfile::TempDir,
    midi: PathBuf,
    corpus: PathBuf,
    run: PathBuf,
}

/// Preprocess a small synthetic corpus and train all three tasks at toy
/// settings, shared by several tests.
fn tiny_pipeline() -> &'static Pipeline {
    use std::sync::OnceLock;
    static PIPE: OnceLock<Pipeline> = OnceLock::new();
    PIPE.get_or_init(|| {
        let root = tempdir().unwrap();
        let midi = root.path().join("midi");
        let corpus = root.path().join("corpus");
        let run = root.path().join("run");
        synthetic::write_corpus(&midi, 12, 2025).unwrap();

        run_ok(&[
            "preprocess",
            "--midi-dir",
            midi.to_str().unwrap(),
            "--out",
            corpus.to_str().unwrap(),
            "--set",
            "preprocess.min_count=5",
        ]);

        let tiny = [
            "--set", "lcvae.latent_dim=12",
            "--set", "lcvae.intermediate_dim=16",
            "--set", "lcvae.batch_size=16",
            "--set", "lcvae.epochs=2",
            "--set", "gvae.latent_dim=16",
            "--set", "gvae.intermediate_dim=16",
            "--set", "gvae.batch_size=6",
            "--set", "gvae.epochs=2",
            "--set", "flnseq.hidden_dim=16",
            "--set", "flnseq.latent_dim=8",
            "--set", "flnseq.epochs=3",
            "--set", "gan.batch_size=2",
            "--set", "gan.steps=3",
            "--set", "gan.critic_steps_per_gen=2",
            "--set", "gan.conv_channels=8,6",
        ];

        let mut args = vec![
            "train", "lcvae",
            "--data", corpus.to_str().unwrap(),
            "--out", run.to_str().unwrap(),
            "--seed", "7",
        ];
        args.extend_from_slice(&tiny);
        run_ok(&args);

        let lcvae = run.join("lcvae.ckpt");
        let mut args = vec![
            "train", "hcvae",
            "--data", corpus.to_str().unwrap(),
            "--out", run.to_str().unwrap(),
            "--lcvae", lcvae.to_str().unwrap(),
            "--seed", "7",
        ];
        args.extend_from_slice(&tiny);
        run_ok(&args);

        let hcvae = run.join("hcvae.ckpt");
        let mut args = vec![
            "train", "hcgan",
            "--data", corpus.to_str().unwrap(),
            "--out", run.to_str().unwrap(),
            "--lcvae", lcvae.to_str().unwrap(),
            "--hcvae", hcvae.to_str().unwrap(),
            "--seed", "7",
        ];
        args.extend_from_slice(&tiny);
        run_ok(&args);

        Pipeline { root, midi, corpus, run }
    })
}

#[test]
fn preprocess_writes_stores_and_manifest() {
    let p = tiny_pipeline();
    for f in [
        "dictionary.txt",
        "phrases.msw",
        "phrase_labels.msw",
        "songs.msw",
        "song_labels.msw",
        "manifest.txt",
    ] {
        assert!(p.corpus.join(f).exists(), "missing {f}");
    }
    let manifest = fs::read_to_string(p.corpus.join("manifest.txt")).unwrap();
    assert!(manifest.contains("files_scanned\t12"));
    assert!(manifest.contains("files_failed\t0"));
    assert!(manifest.contains("songs_kept\t12"));
}

#[test]
fn preprocess_is_deterministic_across_reruns() {
    let p = tiny_pipeline();
    let dir2 = tempdir().unwrap();
    run_ok(&[
        "preprocess",
        "--midi-dir",
        p.midi.to_str().unwrap(),
        "--out",
        dir2.path().to_str().unwrap(),
        "--set",
        "preprocess.min_count=5",
    ]);
    for f in ["dictionary.txt", "phrases.msw", "songs.msw", "manifest.txt"] {
        let a = fs::read(p.corpus.join(f)).unwrap();
        let b = fs::read(dir2.path().join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between reruns");
    }
}

#[test]
fn preprocess_empty_dir_is_data_error() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("out");
    let code = exit_code(&[
        "preprocess",
        "--midi-dir",
        dir.path().to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 2);
}

#[test]
fn preprocess_continues_past_bad_files_with_nonzero_exit() {
    let dir = tempdir().unwrap();
    let midi = dir.path().join("midi");
    synthetic::write_corpus(&midi, 3, 77).unwrap();
    fs::write(midi.join("broken.mid"), b"MThd garbage").unwrap();
    let out = dir.path().join("out");
    let code = exit_code(&[
        "preprocess",
        "--midi-dir",
        midi.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--set",
        "preprocess.min_count=1",
    ]);
    assert_eq!(code, 2, "parse failures surface in the exit code");
    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("files_failed\t1"));
    assert!(manifest.contains("broken.mid"));
    // the good files were still processed
    assert!(manifest.contains("songs_kept\t3"));
}

#[test]
fn train_without_seed_is_usage_error() {
    let p = tiny_pipeline();
    let out = tempdir().unwrap();
    let code = exit_code(&[
        "train",
        "lcvae",
        "--data",
        p.corpus.to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
    ]);
    assert_eq!(code, 1);
}

#[test]
fn task_order_is_enforced() {
    let p = tiny_pipeline();
    let out = tempdir().unwrap();
    // hcvae without --lcvae
    let code = exit_code(&[
        "train", "hcvae",
        "--data", p.corpus.to_str().unwrap(),
        "--out", out.path().to_str().unwrap(),
        "--seed", "7",
    ]);
    assert_eq!(code, 2);

    // hcgan without --hcvae
    let lcvae = p.run.join("lcvae.ckpt");
    let code = exit_code(&[
        "train", "hcgan",
        "--data", p.corpus.to_str().unwrap(),
        "--out", out.path().to_str().unwrap(),
        "--lcvae", lcvae.to_str().unwrap(),
        "--seed", "7",
    ]);
    assert_eq!(code, 2);

    // hcvae pointed at a wrong-kind checkpoint
    let hcvae = p.run.join("hcvae.ckpt");
    let code = exit_code(&[
        "train", "hcvae",
        "--data", p.corpus.to_str().unwrap(),
        "--out", out.path().to_str().unwrap(),
        "--lcvae", hcvae.to_str().unwrap(),
        "--seed", "7",
    ]);
    assert_eq!(code, 2);
}

#[test]
fn training_logs_have_the_pinned_format() {
    let p = tiny_pipeline();
    let log = fs::read_to_string(p.run.join("train_log.tsv")).unwrap();
    for line in log.lines() {
        let fields: Vec<&str> = line.split('\t').collect();
        assert_eq!(fields.len(), 5, "hcgan log is step/w/gp/critic/gen: {line}");
        fields[0].parse::<usize>().unwrap();
        for f in &fields[1..] {
            f.parse::<f64>().unwrap();
        }
    }
}

#[test]
fn generate_writes_songs_and_labels_reproducibly() {
    let p = tiny_pipeline();
    let hcvae = p.run.join("hcvae.ckpt");
    let lcvae = p.run.join("lcvae.ckpt");
    let out1 = tempdir().unwrap();
    let out2 = tempdir().unwrap();
    for out in [&out1, &out2] {
        run_ok(&[
            "generate",
            "--checkpoint", hcvae.to_str().unwrap(),
            "--lcvae", lcvae.to_str().unwrap(),
            "--fln-source", "dataset-sample",
            "--data", p.corpus.to_str().unwrap(),
            "-n", "3",
            "--seed", "99",
            "--out", out.path().to_str().unwrap(),
        ]);
    }
    for i in 0..3 {
        let mid = format!("gen_{i:03}.mid");
        let lab = format!("gen_{i:03}.labels");
        let a = fs::read(out1.path().join(&mid)).unwrap();
        let b = fs::read(out2.path().join(&mid)).unwrap();
        assert_eq!(a, b, "{mid} not byte-identical under the same seed");
        let la = fs::read(out1.path().join(&lab)).unwrap();
        let lb = fs::read(out2.path().join(&lab)).unwrap();
        assert_eq!(la, lb);
        let labels = String::from_utf8(la).unwrap();
        assert_eq!(labels.trim().split_whitespace().count(), 17);
    }
}

#[test]
fn generate_from_model_source_and_from_file() {
    let p = tiny_pipeline();
    let hcvae = p.run.join("hcvae.ckpt");
    let lcvae = p.run.join("lcvae.ckpt");

    let out = tempdir().unwrap();
    run_ok(&[
        "generate",
        "--checkpoint", hcvae.to_str().unwrap(),
        "--lcvae", lcvae.to_str().unwrap(),
        "--fln-source", "model",
        "-n", "2",
        "--seed", "5",
        "--out", out.path().to_str().unwrap(),
    ]);
    assert!(out.path().join("gen_001.mid").exists());

    // labels from a file
    let label_file = out.path().join("labels.txt");
    let line: Vec<String> = (0..17).map(|i| (i % 3).to_string()).collect();
    fs::write(&label_file, format!("{}\n", line.join(" "))).unwrap();
    let out2 = tempdir().unwrap();
    run_ok(&[
        "generate",
        "--checkpoint", hcvae.to_str().unwrap(),
        "--lcvae", lcvae.to_str().unwrap(),
        "--fln-source", &format!("file={}", label_file.display()),
        "-n", "1",
        "--seed", "5",
        "--out", out2.path().to_str().unwrap(),
    ]);
    let used = fs::read_to_string(out2.path().join("gen_000.labels")).unwrap();
    assert_eq!(used.trim(), line.join(" "));

    // malformed label file is a data error
    fs::write(&label_file, "1 2 3\n").unwrap();
    let code = exit_code(&[
        "generate",
        "--checkpoint", hcvae.to_str().unwrap(),
        "--lcvae", lcvae.to_str().unwrap(),
        "--fln-source", &format!("file={}", label_file.display()),
        "-n", "1",
        "--seed", "5",
        "--out", out2.path().to_str().unwrap(),
    ]);
    assert_eq!(code, 2);
}

#[test]
fn generate_from_hcgan_checkpoint_works() {
    let p = tiny_pipeline();
    let hcgan = p.run.join("hcgan.ckpt");
    let lcvae = p.run.join("lcvae.ckpt");
    let out = tempdir().unwrap();
    run_ok(&[
        "generate",
        "--checkpoint", hcgan.to_str().unwrap(),
        "--lcvae", lcvae.to_str().unwrap(),
        "--fln-source", "dataset-sample",
        "--data", p.corpus.to_str().unwrap(),
        "-n", "1",
        "--seed", "11",
        "--out", out.path().to_str().unwrap(),
    ]);
    assert!(out.path().join("gen_000.mid").exists());
}

#[test]
fn evaluate_corpus_and_midi_dir() {
    let p = tiny_pipeline();
    let out = tempdir().unwrap();
    run_ok(&[
        "evaluate",
        "--corpus", p.corpus.to_str().unwrap(),
        "--out", out.path().to_str().unwrap(),
    ]);
    let kv = fs::read_to_string(out.path().join("report.kv")).unwrap();
    assert!(kv.contains("eb_percent = "));
    assert!(kv.contains("qn_percent = "));
    assert!(kv.contains("bar_steps = 25"));
    let per_song = fs::read_to_string(out.path().join("report_per_song.tsv")).unwrap();
    assert_eq!(per_song.lines().count(), 13, "header + 12 songs");

    // identical rerun -> identical reports
    let out2 = tempdir().unwrap();
    run_ok(&[
        "evaluate",
        "--corpus", p.corpus.to_str().unwrap(),
        "--out", out2.path().to_str().unwrap(),
    ]);
    assert_eq!(
        fs::read(out.path().join("report.kv")).unwrap(),
        fs::read(out2.path().join("report.kv")).unwrap()
    );

    // MIDI-dir input path
    let out3 = tempdir().unwrap();
    run_ok(&[
        "evaluate",
        "--input", p.midi.to_str().unwrap(),
        "--out", out3.path().to_str().unwrap(),
    ]);
    assert!(out3.path().join("report.txt").exists());

    // empty input -> error, never a division by zero
    let empty = tempdir().unwrap();
    let code = exit_code(&[
        "evaluate",
        "--input", empty.path().to_str().unwrap(),
        "--out", out3.path().to_str().unwrap(),
    ]);
    assert_eq!(code, 2);
}

#[test]
fn evaluate_scores_fln_accuracy_of_labeled_generations() {
    let p = tiny_pipeline();
    let hcvae = p.run.join("hcvae.ckpt");
    let lcvae = p.run.join("lcvae.ckpt");
    let gen_dir = tempdir().unwrap();
    run_ok(&[
        "generate",
        "--checkpoint", hcvae.to_str().unwrap(),
        "--lcvae", lcvae.to_str().unwrap(),
        "--fln-source", "dataset-sample",
        "--data", p.corpus.to_str().unwrap(),
        "-n", "2",
        "--seed", "3",
        "--out", gen_dir.path().to_str().unwrap(),
    ]);
    let out = tempdir().unwrap();
    let dict = p.corpus.join("dictionary.txt");
    run_ok(&[
        "evaluate",
        "--input", gen_dir.path().to_str().unwrap(),
        "--dict", dict.to_str().unwrap(),
        "--out", out.path().to_str().unwrap(),
    ]);
    let kv = fs::read_to_string(out.path().join("report.kv")).unwrap();
    assert!(
        kv.contains("fln_accuracy_percent = "),
        "labeled generations must get an FLN accuracy row:\n{kv}"
    );
}

#[test]
fn inspect_latent_prints_per_dimension_differences() {
    let p = tiny_pipeline();
    let lcvae = p.run.join("lcvae.ckpt");
    let out = bin()
        .args([
            "inspect-latent",
            "--lcvae", lcvae.to_str().unwrap(),
            "--data", p.corpus.to_str().unwrap(),
            "--song", "0",
            "--phrase-a", "0",
            "--phrase-b", "1",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("dim\t|diff|"));
    assert!(text.contains("max\t"));
    // synthetic songs repeat the opening phrase: identical grids, zero diff
    assert!(text.contains("max\t0.000000000"));
}

#[test]
fn unknown_config_key_is_usage_error() {
    let code = exit_code(&[
        "preprocess",
        "--midi-dir", "/nonexistent",
        "--out", "/tmp/x",
        "--set", "bogus.key=1",
    ]);
    assert_eq!(code, 1);
}

