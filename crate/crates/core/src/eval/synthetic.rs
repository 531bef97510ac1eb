//! A tone-per-character corpus with known, strictly monotonic alignment.
//!
//! Each letter sounds for a fixed duration as a two-partial tone at a
//! letter-specific pitch; spaces are short silences. Files follow the
//! LJSpeech layout (`metadata.csv` plus `wavs/<id>.wav`).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{wav_write, Waveform};
use crate::error::{Error, Result};
use crate::train::TrainConfig;

pub const SYNTHETIC_SAMPLE_RATE: u32 = 8000;
const LETTERS: &str = "abcdefghijklmnop";
const CHAR_SECS: f64 = 0.05;
const SPACE_SECS: f64 = 0.03;

/// Training settings matched to the synthetic audio.
pub fn synthetic_train_config() -> TrainConfig {
    TrainConfig {
        sample_rate: SYNTHETIC_SAMPLE_RATE,
        n_fft: 256,
        win_length: 256,
        hop_length: 80,
        n_mels: 32,
        fmax: 4000.0,
        griffin_lim_iters: 30,
        d: 64,
        r: 5,
        batch_size: 8,
        lr: 1e-3,
        checkpoint_every: 0,
        ..TrainConfig::default()
    }
}

fn letter_hz(c: char) -> f64 {
    let k = LETTERS.find(c).unwrap_or(0) as f64;
    250.0 * 2f64.powf(k / 6.0)
}

/// Renders `text` (letters from `a..=p` and spaces).
pub fn render_text(text: &str, rng: &mut impl Rng) -> Result<Waveform> {
    let sr = SYNTHETIC_SAMPLE_RATE as f64;
    let mut samples = Vec::new();
    for c in text.chars() {
        if c == ' ' {
            samples.extend(std::iter::repeat_n(0.0, (SPACE_SECS * sr) as usize));
            continue;
        }
        if !LETTERS.contains(c) {
            return Err(Error::Input(format!(
                "synthetic corpus cannot render {c:?}"
            )));
        }
        let n = (CHAR_SECS * sr) as usize;
        let f = letter_hz(c);
        let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let ramp = n / 10;
        for i in 0..n {
            let t = i as f64 / sr;
            let env = if i < ramp {
                i as f64 / ramp as f64
            } else if i >= n - ramp {
                (n - i) as f64 / ramp as f64
            } else {
                1.0
            };
            let w = std::f64::consts::TAU * f * t + phase;
            let x = 0.5 * w.sin() + 0.2 * (2.0 * w).sin() + 0.01 * rng.random_range(-1.0..1.0);
            samples.push(0.6 * env * x);
        }
    }
    Ok(Waveform::new(samples, SYNTHETIC_SAMPLE_RATE))
}

fn random_text(rng: &mut impl Rng) -> String {
    let letters: Vec<char> = LETTERS.chars().collect();
    let words = rng.random_range(1..=3);
    (0..words)
        .map(|_| {
            let len = rng.random_range(2..=4);
            (0..len)
                .map(|_| letters[rng.random_range(0..letters.len())])
                .collect::<String>()
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Writes `n` utterances under `dir`; the same `seed` gives identical files.
pub fn generate_synthetic_corpus(dir: impl AsRef<Path>, n: usize, seed: u64) -> Result<()> {
    let dir = dir.as_ref();
    let wavs = dir.join("wavs");
    fs::create_dir_all(&wavs).map_err(|e| Error::io(&wavs, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut meta = String::new();
    for i in 0..n {
        let id = format!("SYN-{i:04}");
        let text = random_text(&mut rng);
        let wave = render_text(&text, &mut rng)?;
        wav_write(wavs.join(format!("{id}.wav")), &wave)?;
        writeln!(meta, "{id}|{text}|{text}").unwrap();
    }
    let path = dir.join("metadata.csv");
    fs::write(&path, meta).map_err(|e| Error::io(&path, e))
}
