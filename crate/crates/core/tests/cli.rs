use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use melseq::audio::{read_mspc, wav_read};
use melseq::autodiff::Tensor;
use melseq::eval::{decode_pgm, generate_synthetic_corpus, synthetic_train_config};
use melseq::train::{load_checkpoint, LogRecord, TrainConfig};

fn melseq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_melseq"))
        .args(args)
        .env_remove("MELSEQ_CACHE")
        .output()
        .unwrap()
}

fn text(o: &Output) -> String {
    format!(
        "{}{}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    )
}

fn small_config(dir: &Path) -> String {
    let cfg = TrainConfig {
        d: 12,
        batch_size: 2,
        checkpoint_every: 3,
        ..synthetic_train_config()
    };
    let path = dir.join("small.conf");
    fs::write(&path, cfg.to_text()).unwrap();
    path.to_string_lossy().into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn missing_corpus_exits_2_naming_path() {
    let o = melseq(&["train", "--corpus", "/no/such/corpus", "--max-steps", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("/no/such/corpus"), "{}", text(&o));
}

#[test]
fn train_overfit_run_writes_checkpoints_and_parsable_log() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    generate_synthetic_corpus(&corpus, 5, 3).unwrap();
    let conf = small_config(dir.path());
    let out = dir.path().join("run");
    let o = melseq(&[
        "train",
        "--config",
        &conf,
        "--corpus",
        p(&corpus),
        "--out",
        p(&out),
        "--max-utts",
        "1",
        "--max-steps",
        "6",
    ]);
    assert!(o.status.success(), "{}", text(&o));
    let log = fs::read_to_string(out.join("train.log")).unwrap();
    let recs: Vec<LogRecord> = log.lines().map(|l| l.parse().unwrap()).collect();
    assert_eq!(recs.len(), 6);
    assert!(recs.iter().all(|r| r.attn.is_some()));
    for name in [
        "step_0000003.msqk",
        "step_0000006.msqk",
        "final.msqk",
        "final.align.pgm",
    ] {
        assert!(out.join(name).exists(), "{name}");
    }
    assert_eq!(load_checkpoint(out.join("final.msqk")).unwrap().step, 6);
    // feature cache defaults to the corpus directory
    assert!(corpus.join(".melseq_cache").is_dir());

    let resumed = melseq(&[
        "train",
        "--corpus",
        p(&corpus),
        "--out",
        p(&out),
        "--max-utts",
        "1",
        "--resume",
        p(&out.join("step_0000003.msqk")),
        "--max-steps",
        "6",
    ]);
    assert!(resumed.status.success(), "{}", text(&resumed));
    let log = fs::read_to_string(out.join("train.log")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines.len(), 9);
    assert_eq!(lines[3..6], lines[6..9]);
}

#[test]
fn no_guided_logs_zero_attn_and_cache_env_is_honoured() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    generate_synthetic_corpus(&corpus, 3, 4).unwrap();
    let conf = small_config(dir.path());
    let out = dir.path().join("run");
    let cache = dir.path().join("elsewhere");
    let o = Command::new(env!("CARGO_BIN_EXE_melseq"))
        .args([
            "train",
            "--config",
            &conf,
            "--corpus",
            p(&corpus),
            "--out",
            p(&out),
            "--no-guided",
            "--max-steps",
            "2",
        ])
        .env("MELSEQ_CACHE", &cache)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", text(&o));
    let log = fs::read_to_string(out.join("train.log")).unwrap();
    for line in log.lines() {
        assert_eq!(line.parse::<LogRecord>().unwrap().attn, Some(0.0), "{line}");
    }
    assert!(cache.read_dir().unwrap().count() > 0);
    assert!(!corpus.join(".melseq_cache").exists());
}

#[test]
fn synth_outputs_and_error_codes() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    generate_synthetic_corpus(&corpus, 2, 5).unwrap();
    let conf = small_config(dir.path());
    let run = dir.path().join("run");
    let o = melseq(&[
        "train",
        "--config",
        &conf,
        "--corpus",
        p(&corpus),
        "--out",
        p(&run),
        "--max-steps",
        "1",
    ]);
    assert!(o.status.success(), "{}", text(&o));
    let ckpt = run.join("final.msqk");

    let out = dir.path().join("synth");
    let o = melseq(&[
        "synth",
        "--checkpoint",
        p(&ckpt),
        "--text",
        "abc dd",
        "--out",
        p(&out),
        "--max-steps",
        "8",
    ]);
    assert!(o.status.success(), "{}", text(&o));
    let wav = wav_read(out.join("synth.wav")).unwrap();
    assert_eq!(wav.sample_rate, 8000);
    let mel = read_mspc(out.join("synth.mel.mspc")).unwrap();
    assert_eq!(mel.shape()[0], 32);
    assert!(decode_pgm(&fs::read(out.join("synth.align.pgm")).unwrap(), "t").is_ok());

    let o = melseq(&[
        "synth",
        "--checkpoint",
        p(&ckpt),
        "--text",
        "  ",
        "--out",
        p(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));

    let mut bytes = fs::read(&ckpt).unwrap();
    bytes.truncate(bytes.len() / 2);
    let broken = dir.path().join("broken.msqk");
    fs::write(&broken, bytes).unwrap();
    let o = melseq(&[
        "synth",
        "--checkpoint",
        p(&broken),
        "--text",
        "abc",
        "--out",
        p(&out),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", text(&o));
    let o = melseq(&[
        "synth",
        "--checkpoint",
        "/no/ckpt.msqk",
        "--text",
        "abc",
        "--out",
        p(&out),
    ]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn plot_attention_from_file_and_directory() {
    let dir = tempfile::tempdir().unwrap();
    let a = Tensor::eye(5);
    let file = dir.path().join("x.align.mspc");
    melseq::audio::write_mspc(&file, &a).unwrap();
    let img = dir.path().join("a.pgm");
    let o = melseq(&["plot-attention", p(&file), "--out", p(&img)]);
    assert!(o.status.success(), "{}", text(&o));
    let (w, h, px) = decode_pgm(&fs::read(&img).unwrap(), "t").unwrap();
    assert_eq!((w, h), (5, 5));
    assert_eq!(px.iter().filter(|&&v| v == 255).count(), 5);

    let img2 = dir.path().join("b.pgm");
    let o = melseq(&["plot-attention", p(dir.path()), "--out", p(&img2)]);
    assert!(o.status.success(), "{}", text(&o));
    assert_eq!(fs::read(&img).unwrap(), fs::read(&img2).unwrap());

    let junk = dir.path().join("junk.mspc");
    fs::write(&junk, b"not a spectrogram").unwrap();
    let o = melseq(&["plot-attention", p(&junk), "--out", p(&img)]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn mos_stats_report_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("r.csv");
    fs::write(&good, "sample_id,rater_id,rating\ns1,a,3\ns1,b,5\n").unwrap();
    let o = melseq(&["mos-stats", p(&good)]);
    assert!(o.status.success());
    assert!(text(&o).contains("MOS 4.000 ± 1.960"), "{}", text(&o));

    let empty = dir.path().join("e.csv");
    fs::write(&empty, "").unwrap();
    assert_eq!(melseq(&["mos-stats", p(&empty)]).status.code(), Some(2));

    let bad = dir.path().join("b.csv");
    fs::write(&bad, "s1,a,3\ns1,b,9\n").unwrap();
    let o = melseq(&["mos-stats", p(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("line 2"));
}

#[test]
fn gradcheck_passes_repeats_and_catches_fault() {
    let a = melseq(&["gradcheck", "--seed", "4"]);
    assert!(a.status.success(), "{}", text(&a));
    let b = melseq(&["gradcheck", "--seed", "4"]);
    assert_eq!(a.stdout, b.stdout);

    let f = melseq(&["gradcheck", "--seed", "4", "--inject-fault"]);
    assert_eq!(f.status.code(), Some(1));
    assert!(text(&f).contains("tanh"), "{}", text(&f));
}

#[test]
fn align_experiment_reports_both_arms() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    generate_synthetic_corpus(&corpus, 4, 6).unwrap();
    let conf = small_config(dir.path());
    let out = dir.path().join("exp");
    let o = melseq(&[
        "align-experiment",
        "--corpus",
        p(&corpus),
        "--config",
        &conf,
        "--steps",
        "5",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", text(&o));
    let report = fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(report.contains("guided") && report.contains("unguided") && report.contains("ratio"));
    let unguided = fs::read_to_string(out.join("unguided.log")).unwrap();
    assert!(!unguided.is_empty() && !unguided.contains("attn="));
    assert!(fs::read_to_string(out.join("guided.log"))
        .unwrap()
        .contains("attn="));
    assert!(out.join("guided.align.pgm").exists() && out.join("unguided.align.pgm").exists());
}

#[test]
fn params_table_sums_to_total() {
    let o = melseq(&["params"]);
    assert!(o.status.success());
    let out = String::from_utf8(o.stdout).unwrap();
    let mut sum = 0usize;
    let mut total = 0usize;
    for line in out.lines() {
        let last: usize = line.split_whitespace().last().unwrap().parse().unwrap();
        if line.starts_with("total") {
            total = last;
        } else {
            sum += last;
        }
    }
    assert_eq!(sum, total);
    assert!((3_400_000..=5_600_000).contains(&total));
}
