//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) and exits nonzero if any
//! criterion fails. Set `MELSEQ_LJSPEECH=<dir>` to additionally run the
//! alignment comparison on the 100 shortest LJSpeech utterances.

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use melseq::audio::{griffin_lim_traced, stft, DspConfig, Waveform};
use melseq::autodiff::{Tape, Tensor};
use melseq::data::{make_batch, CharVocab, Corpus, CorpusOptions, Utterance};
use melseq::eval::{
    align_experiment, generate_synthetic_corpus, gradcheck_report, synthetic_train_config,
    MosReport,
};
use melseq::model::{guided_mask, Model, ModelConfig};
use melseq::synth::{SynthOptions, Synthesizer};
use melseq::train::{teacher_forcing_ratio, TrainConfig, Trainer};

const GRADCHECK_SEEDS: u64 = 10;
const GRADCHECK_TOL: f64 = 1e-4;
const GRADCHECK_BUDGET: Duration = Duration::from_secs(120);
const MASK_TOL: f64 = 1e-12;
const SYNTHETIC_PAIRS: usize = 200;
/// Step budget for the synthetic alignment comparison.
const SYNTHETIC_ALIGN_BUDGET: u64 = 3000;
const SYNTHETIC_ALIGN_DEADLINE: Duration = Duration::from_secs(30 * 60);
const LJSPEECH_ALIGN_BUDGET: u64 = 10_000;
const REQUIRED_SPEEDUP: f64 = 2.0;
const OVERFIT_STEPS: usize = 500;
const OVERFIT_RATIO: f64 = 0.10;
const RECON_MSE: f64 = 0.01;
const FORCED_TEXTS: usize = 10;
const GL_ITERS: usize = 60;
const GL_SNR_DB: f64 = 10.0;
const GL_BUDGET: Duration = Duration::from_secs(10);
const PARAM_RANGE: (usize, usize) = (3_400_000, 5_600_000);
const DETERMINISM_STEPS: usize = 100;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

type Check = fn(&Path) -> Result<Outcome, String>;

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn c1_gradient_integrity(_: &Path) -> Result<Outcome, String> {
    let start = Instant::now();
    let mut worst = (String::new(), 0.0f64, 0u64);
    for seed in 0..GRADCHECK_SEEDS {
        let rep = gradcheck_report(seed, false).map_err(err)?;
        let (name, e) = rep.worst();
        if e > worst.1 || e.is_nan() {
            worst = (name.to_string(), e, seed);
        }
    }
    let elapsed = start.elapsed();
    Ok(outcome(
        worst.1 < GRADCHECK_TOL && elapsed < GRADCHECK_BUDGET,
        format!(
            "{GRADCHECK_SEEDS} seeds, worst {} {:.2e} (seed {}), {:.1}s",
            worst.0,
            worst.1,
            worst.2,
            elapsed.as_secs_f64()
        ),
    ))
}

fn c2_guided_mask(_: &Path) -> Result<Outcome, String> {
    let g = 0.2;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (n, t) = (37, 91);
    let w = guided_mask(n, t, g);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (i, j) = (rng.random_range(0..n), rng.random_range(0..t));
        let x = i as f64 / n as f64 - j as f64 / t as f64;
        let expect = 1.0 - (-(x * x) / (2.0 * g * g)).exp();
        worst = worst.max((w.get2(i, j) - expect).abs());
    }
    let square = guided_mask(100, 100, g);
    let diag_zero = (0..100).all(|k| square.get2(k, k) == 0.0);
    let rect = guided_mask(50, 100, g);
    let rect_zero = (0..50).all(|k| rect.get2(k, 2 * k) == 0.0);
    // n/N - t/T = 2/10 - 0/10 = 0.2
    let at_offset = guided_mask(10, 10, g).get2(2, 0);
    let offset_err = (at_offset - (1.0 - (-0.5f64).exp())).abs();
    Ok(outcome(
        worst < MASK_TOL && diag_zero && rect_zero && offset_err < MASK_TOL,
        format!(
            "20 cells max err {worst:.1e}, diagonal zero {}, W(0.2) err {offset_err:.1e}",
            diag_zero && rect_zero
        ),
    ))
}

fn load(dir: &Path, cfg: &TrainConfig, max_utts: Option<usize>) -> Result<Corpus, String> {
    let mut opts = CorpusOptions::new(cfg.dsp_config());
    opts.max_utts = max_utts;
    Corpus::load(dir, &opts).map_err(err)
}

fn c3_alignment_speedup(work: &Path) -> Result<Outcome, String> {
    let start = Instant::now();
    let dir = work.join("synthetic");
    generate_synthetic_corpus(&dir, SYNTHETIC_PAIRS, 0).map_err(err)?;
    let cfg = synthetic_train_config();
    let corpus = load(&dir, &cfg, None)?;
    let exp = align_experiment(&cfg, &corpus.utterances, SYNTHETIC_ALIGN_BUDGET).map_err(err)?;
    let elapsed = start.elapsed();
    let ratio = exp.ratio();
    let mut pass =
        ratio.is_some_and(|r| r >= REQUIRED_SPEEDUP) && elapsed < SYNTHETIC_ALIGN_DEADLINE;
    let show =
        |s: Option<u64>| s.map_or_else(|| format!(">{SYNTHETIC_ALIGN_BUDGET}"), |s| s.to_string());
    let mut detail = format!(
        "synthetic {SYNTHETIC_PAIRS} pairs: guided {} / unguided {} steps, ratio {}{}, {:.0}s",
        show(exp.guided.steps_to_threshold),
        show(exp.unguided.steps_to_threshold),
        if exp.ratio_is_lower_bound() { ">=" } else { "" },
        ratio.map_or("n/a".into(), |r| format!("{r:.2}")),
        elapsed.as_secs_f64()
    );
    match std::env::var_os("MELSEQ_LJSPEECH") {
        Some(lj) => {
            let cfg = TrainConfig {
                batch_size: 8,
                ..TrainConfig::default()
            };
            let corpus = load(Path::new(&lj), &cfg, Some(100))?;
            let exp =
                align_experiment(&cfg, &corpus.utterances, LJSPEECH_ALIGN_BUDGET).map_err(err)?;
            let r = exp.ratio();
            pass &= r.is_some_and(|r| r >= REQUIRED_SPEEDUP);
            detail += &format!(
                "; LJSpeech-100 ratio {}",
                r.map_or("n/a".into(), |r| format!("{r:.2}"))
            );
        }
        None => detail += "; LJSpeech subset not run (MELSEQ_LJSPEECH unset)",
    }
    Ok(outcome(pass, detail))
}

/// Masked mel MSE of a `[B × T·n_mels]` frame-major prediction, computed
/// directly against each utterance's `[n_mels × frames]` target.
fn mel_mse(pred: &Tensor, utts: &[&Utterance], t_max: usize) -> f64 {
    let (mut sum, mut count) = (0.0, 0usize);
    for (b, u) in utts.iter().enumerate() {
        let (mels, frames) = (u.mel.shape()[0], u.mel.shape()[1]);
        for f in 0..frames {
            for m in 0..mels {
                let p = pred.data()[b * t_max * mels + f * mels + m];
                sum += (p - u.mel.get2(m, f)).powi(2);
                count += 1;
            }
        }
    }
    sum / count as f64
}

fn overfit_trainer(work: &Path) -> Result<(Trainer, Vec<Utterance>, Vec<f64>), String> {
    let dir = work.join("overfit");
    generate_synthetic_corpus(&dir, 20, 7).map_err(err)?;
    let cfg = TrainConfig {
        max_steps: OVERFIT_STEPS,
        ..synthetic_train_config()
    };
    let corpus = load(&dir, &cfg, Some(1))?.utterances;
    let mut trainer = Trainer::new(cfg).map_err(err)?;
    let mut curve = Vec::new();
    trainer
        .run(&corpus, None, |r| {
            curve.push(r.mel);
            Ok(())
        })
        .map_err(err)?;
    Ok((trainer, corpus, curve))
}

fn c4_overfit(work: &Path) -> Result<Outcome, String> {
    let (trainer, corpus, curve) = overfit_trainer(work)?;
    let (first, last) = (curve[0], *curve.last().unwrap());
    let utt = &corpus[0];
    let batch = make_batch(&[utt], trainer.config.r).map_err(err)?;
    let tape = Tape::new();
    let p = trainer.model.bind(&tape, false);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let fwd = trainer
        .model
        .forward_teacher_forced(&tape, &p, &batch, 1.0, &mut rng)
        .map_err(err)?;
    let recon = mel_mse(&fwd.mel.value(), &[utt], batch.max_frames());
    Ok(outcome(
        last < OVERFIT_RATIO * first && recon < RECON_MSE,
        format!(
            "{} ({} frames): step-1 mel {first:.4} -> step-{OVERFIT_STEPS} {last:.2e} ({:.2}%), teacher-forced MSE {recon:.2e}",
            utt.id,
            utt.frames(),
            100.0 * last / first
        ),
    ))
}

fn random_texts(n: usize, seed: u64) -> Vec<String> {
    let letters: Vec<char> = "abcdefghijklmnopqrstuvwxyz ,.".chars().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.random_range(5..40);
            let s: String = (0..len)
                .map(|_| letters[rng.random_range(0..letters.len())])
                .collect();
            format!("x{s}")
        })
        .collect()
}

fn c5_forced_attention(_: &Path) -> Result<Outcome, String> {
    let cfg = TrainConfig::default();
    let mut model = Model::new(cfg.model_config(), 5).map_err(err)?;
    // keep decoding to the step cap so every text yields a long roll-out
    let stop = model
        .params
        .find("decoder.stop_head.bias")
        .ok_or("no stop bias")?;
    model.params.get_mut(stop).data_mut().fill(-10.0);
    let synth = Synthesizer::new(cfg, model).map_err(err)?;
    let opts = SynthOptions {
        griffin_lim_iters: Some(1),
        ..SynthOptions::default()
    };
    let texts = random_texts(FORCED_TEXTS, 55);
    let (mut steps, mut violations, mut forced, mut bad_cols) = (0, 0, 0, 0);
    for r in synth.batch_synthesize(&texts, &opts) {
        let r = r.map_err(err)?;
        let mut prev = 0usize;
        for (t, &n) in r.positions.iter().enumerate() {
            if n < prev || n - prev > 3 {
                violations += 1;
            }
            prev = n;
            let col: f64 = (0..r.alignment.shape()[0])
                .map(|i| r.alignment.get2(i, t))
                .sum();
            if (col - 1.0).abs() > 1e-9 {
                bad_cols += 1;
            }
        }
        steps += r.steps();
        forced += r.forced_steps;
    }
    Ok(outcome(
        violations == 0 && bad_cols == 0 && steps > 0,
        format!(
            "{FORCED_TEXTS} texts, {steps} steps, {forced} forced, {violations} band violations, {bad_cols} non-distribution columns"
        ),
    ))
}

fn c6_griffin_lim(_: &Path) -> Result<Outcome, String> {
    let start = Instant::now();
    let dsp = DspConfig::default();
    let sr = dsp.sample_rate as f64;
    let sine = Waveform::new(
        (0..dsp.sample_rate as usize)
            .map(|i| 0.5 * (std::f64::consts::TAU * 440.0 * i as f64 / sr).sin())
            .collect(),
        dsp.sample_rate,
    );
    let target = stft(&sine, &dsp).map_err(err)?;
    let trace = griffin_lim_traced(&target, GL_ITERS, &dsp).map_err(err)?;
    let elapsed = start.elapsed();
    let rebuilt = stft(&trace.waveform, &dsp).map_err(err)?;
    let frames = target.shape()[1].min(rebuilt.shape()[1]);
    let (mut signal, mut noise) = (0.0, 0.0);
    for k in 0..target.shape()[0] {
        for t in 0..frames {
            let (a, b) = (target.get2(k, t), rebuilt.get2(k, t));
            signal += a * a;
            noise += (a - b) * (a - b);
        }
    }
    let snr = 10.0 * (signal / noise).log10();
    let checkpoints: Vec<f64> = (1..=GL_ITERS / 10)
        .map(|k| trace.errors[10 * k - 1])
        .collect();
    let monotone = checkpoints.windows(2).all(|w| w[1] <= w[0]);
    Ok(outcome(
        snr >= GL_SNR_DB && monotone && elapsed < GL_BUDGET,
        format!(
            "SNR {snr:.1} dB, convergence at 10-iteration checkpoints {:?}, {:.2}s",
            checkpoints
                .iter()
                .map(|e| format!("{e:.3}"))
                .collect::<Vec<_>>(),
            elapsed.as_secs_f64()
        ),
    ))
}

fn c7_parameter_count(_: &Path) -> Result<Outcome, String> {
    let cfg = ModelConfig::default();
    let model = Model::new(cfg.clone(), 0).map_err(err)?;
    for (name, shape, n) in model.param_table() {
        println!("    {name:<36} {:<12} {n}", format!("{shape:?}"));
    }
    let total = model.num_params();
    let (v, d, m, bins, r) = (
        CharVocab::default().len(),
        cfg.d,
        cfg.n_mels,
        cfg.n_bins,
        cfg.r,
    );
    let linear = |i: usize, o: usize| i * o + o;
    let gru = |i: usize, h: usize| 3 * h * i + 3 * h * h + 6 * h;
    let expect = v * d
        + 2 * gru(d, d)
        + 2 * linear(2 * d, d)
        + linear(m * r, d)
        + linear(d, d)
        + gru(2 * d, d)
        + linear(2 * d, d)
        + gru(2 * d, d)
        + linear(d, m * r)
        + linear(d, d)
        + linear(d, m * r)
        + linear(d, bins * r)
        + linear(d, 1);
    Ok(outcome(
        (PARAM_RANGE.0..=PARAM_RANGE.1).contains(&total) && total == expect,
        format!(
            "total {total} (closed form {expect}), range [{}, {}]",
            PARAM_RANGE.0, PARAM_RANGE.1
        ),
    ))
}

fn c8_schedule(_: &Path) -> Result<Outcome, String> {
    let cfg = TrainConfig::default();
    let (a, b) = (
        teacher_forcing_ratio(0, &cfg),
        teacher_forcing_ratio(300, &cfg),
    );
    Ok(outcome(
        a == 1.0 && b == 0.2,
        format!("tf(0) = {a:?}, tf(300) = {b:?}"),
    ))
}

fn c9_mos(_: &Path) -> Result<Outcome, String> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    // hand-computed: [4,4,4]; [3,5] -> s = sqrt(2), 1.96*sqrt(2)/sqrt(2);
    // [3,4,4,5,2,3,4,3] -> mean 3.5, s^2 = 6/7, 1.96*sqrt(6/7)/sqrt(8) = 0.6416
    let cases = [
        ("ratings_constant.csv", 4.0, 0.0, "4.000 ± 0.000"),
        ("ratings_pair.csv", 4.0, 1.96, "4.000 ± 1.960"),
        (
            "ratings_table.csv",
            3.5,
            1.96 * (6.0f64 / 7.0).sqrt() / 8f64.sqrt(),
            "3.500 ± 0.642",
        ),
    ];
    let mut ok = true;
    let mut shown = Vec::new();
    for (file, mean, hw, text) in cases {
        let rep = MosReport::load(fixtures.join(file)).map_err(err)?;
        let s = rep.overall;
        ok &= (s.mean - mean).abs() < 5e-4
            && (s.half_width - hw).abs() < 5e-4
            && s.to_string() == text;
        shown.push(s.to_string());
    }
    let rejected = MosReport::load(fixtures.join("ratings_out_of_range.csv"))
        .err()
        .is_some_and(|e| e.to_string().contains("line 3"));
    Ok(outcome(
        ok && rejected,
        format!(
            "{}; out-of-range row rejected: {rejected}",
            shown.join(", ")
        ),
    ))
}

fn c10_determinism(work: &Path) -> Result<Outcome, String> {
    let dir = work.join("determinism");
    generate_synthetic_corpus(&dir, 24, 10).map_err(err)?;
    let cfg = TrainConfig {
        max_steps: DETERMINISM_STEPS,
        seed: 17,
        ..synthetic_train_config()
    };
    let corpus = load(&dir, &cfg, None)?.utterances;
    let train = || -> Result<(Vec<String>, Trainer), String> {
        let mut t = Trainer::new(cfg.clone()).map_err(err)?;
        let mut lines = Vec::new();
        t.run(&corpus, None, |r| {
            lines.push(r.to_string());
            Ok(())
        })
        .map_err(err)?;
        Ok((lines, t))
    };
    let (a, ta) = train()?;
    let (b, tb) = train()?;
    let logs_equal = a == b && ta.model.params == tb.model.params;
    let synth = Synthesizer::new(cfg.clone(), ta.model).map_err(err)?;
    let opts = SynthOptions {
        seed: 9,
        max_steps: 40,
        ..SynthOptions::default()
    };
    let w1 = synth.synthesize("abc def", &opts).map_err(err)?.waveform;
    let w2 = synth.synthesize("abc def", &opts).map_err(err)?.waveform;
    let bits = |w: &Waveform| w.samples.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let waves_equal = bits(&w1) == bits(&w2) && !w1.is_empty();
    Ok(outcome(
        logs_equal && waves_equal,
        format!(
            "{} log lines identical: {logs_equal}; {} waveform samples bit-identical: {waves_equal}",
            a.len(),
            w1.len()
        ),
    ))
}

fn main() -> ExitCode {
    let checks: [(&str, Check); 10] = [
        ("gradient integrity", c1_gradient_integrity),
        ("guided mask closed form", c2_guided_mask),
        ("guided alignment speedup", c3_alignment_speedup),
        ("single-utterance overfit", c4_overfit),
        ("forced incremental attention", c5_forced_attention),
        ("Griffin-Lim reconstruction", c6_griffin_lim),
        ("parameter count", c7_parameter_count),
        ("teacher-forcing schedule endpoints", c8_schedule),
        ("MOS statistics", c9_mos),
        ("determinism", c10_determinism),
    ];
    let work = tempfile::tempdir().expect("temp dir");
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let start = Instant::now();
        let o = check(work.path()).unwrap_or_else(|e| outcome(false, format!("error: {e}")));
        failed += !o.pass as usize;
        println!(
            "criterion {:>2} {}: {} ({}) [{:.1}s]",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            name,
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        println!("all criteria passed");
        ExitCode::SUCCESS
    }
}
