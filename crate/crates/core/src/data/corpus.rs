//! LJSpeech-layout corpora: `metadata.csv` plus `wavs/<id>.wav`.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::text::{encode_text, normalize_text, CharVocab};
use crate::audio::{
    decode_wav, normalize_linear, read_mspc, stft, to_mel, wav_info, write_mspc, DspConfig,
    MelFilterbank, MelSpectrogram,
};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// One `<text, audio>` training pair with precomputed targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub raw_text: String,
    pub char_ids: Vec<usize>,
    /// `[n_mels × T]`, normalized to `[0, 1]`.
    pub mel: MelSpectrogram,
    /// `[n_bins × T]` normalized log magnitudes.
    pub linear: Tensor,
}

impl Utterance {
    pub fn frames(&self) -> usize {
        self.mel.shape()[1]
    }
}

/// Parses pipe-delimited metadata. Returns the entries and the number of
/// malformed lines skipped.
///
/// `id|raw|normalized` yields the third field; `id|text` falls back to the second.
pub fn parse_metadata(text: &str) -> (Vec<(String, String)>, usize) {
    let mut entries = Vec::new();
    let mut skipped = 0;
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('|').collect();
        let id = fields[0].trim();
        let text = match fields.len() {
            2 => fields[1],
            n if n >= 3 => fields[2],
            _ => "",
        };
        if id.is_empty() || text.trim().is_empty() {
            skipped += 1;
            continue;
        }
        entries.push((id.to_string(), text.to_string()));
    }
    (entries, skipped)
}

pub fn load_metadata(corpus_dir: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    let path = corpus_dir.as_ref().join("metadata.csv");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let (entries, skipped) = parse_metadata(&text);
    if skipped > 0 {
        warn!("{}: skipped {skipped} malformed line(s)", path.display());
    }
    if entries.is_empty() {
        return Err(Error::Corpus(format!(
            "{} has no valid lines",
            path.display()
        )));
    }
    Ok(entries)
}

#[derive(Clone, Debug)]
pub struct CorpusOptions {
    pub dsp: DspConfig,
    /// Feature cache directory; `None` disables caching.
    pub cache_dir: Option<PathBuf>,
    /// Keep only the `k` shortest utterances (by sample count).
    pub max_utts: Option<usize>,
}

impl CorpusOptions {
    pub fn new(dsp: DspConfig) -> Self {
        Self {
            dsp,
            cache_dir: None,
            max_utts: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub utterances: Vec<Utterance>,
    pub vocab: CharVocab,
}

/// Rounds through `f32` so fresh and cached features are bit-identical.
fn as_f32_precision(t: Tensor) -> Tensor {
    t.map(|v| v as f32 as f64)
}

/// Mel and linear targets for one waveform.
pub fn extract_features(
    wav_bytes: &[u8],
    origin: &str,
    dsp: &DspConfig,
    fb: &MelFilterbank,
) -> Result<(Tensor, Tensor)> {
    let w = decode_wav(wav_bytes, origin)?;
    if w.sample_rate != dsp.sample_rate {
        return Err(Error::Format {
            path: origin.to_string(),
            field: "sample_rate",
            detail: format!("{} (expected {})", w.sample_rate, dsp.sample_rate),
        });
    }
    let lin = stft(&w, dsp)?;
    let mel = to_mel(&lin, fb, dsp)?;
    Ok((
        as_f32_precision(mel),
        as_f32_precision(normalize_linear(&lin, dsp)),
    ))
}

fn cache_key(wav_bytes: &[u8], dsp: &DspConfig) -> String {
    let mut h = Sha256::new();
    h.update(wav_bytes);
    h.update(dsp.fingerprint().as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn cached_features(
    id: &str,
    wav_path: &Path,
    opts: &CorpusOptions,
    fb: &MelFilterbank,
) -> Result<(Tensor, Tensor)> {
    let bytes = fs::read(wav_path).map_err(|e| Error::io(wav_path, e))?;
    let origin = wav_path.display().to_string();
    let Some(cache) = &opts.cache_dir else {
        return extract_features(&bytes, &origin, &opts.dsp, fb);
    };
    let key = cache_key(&bytes, &opts.dsp);
    let key_path = cache.join(format!("{id}.key"));
    let mel_path = cache.join(format!("{id}.mel.mspc"));
    let lin_path = cache.join(format!("{id}.lin.mspc"));
    if fs::read_to_string(&key_path).ok().as_deref() == Some(key.as_str()) {
        if let (Ok(mel), Ok(lin)) = (read_mspc(&mel_path), read_mspc(&lin_path)) {
            return Ok((mel, lin));
        }
    }
    let (mel, lin) = extract_features(&bytes, &origin, &opts.dsp, fb)?;
    write_mspc(&mel_path, &mel)?;
    write_mspc(&lin_path, &lin)?;
    fs::write(&key_path, &key).map_err(|e| Error::io(&key_path, e))?;
    Ok((mel, lin))
}

impl Corpus {
    pub fn load(dir: impl AsRef<Path>, opts: &CorpusOptions) -> Result<Self> {
        let dir = dir.as_ref();
        if !dir.is_dir() {
            return Err(Error::io(
                dir,
                std::io::Error::new(std::io::ErrorKind::NotFound, "corpus directory not found"),
            ));
        }
        let vocab = CharVocab::default();
        let mut entries: Vec<(String, String, PathBuf, usize)> = Vec::new();
        for (id, text) in load_metadata(dir)? {
            let wav = dir.join("wavs").join(format!("{id}.wav"));
            let info = match wav_info(&wav) {
                Ok(i) => i,
                Err(e) => {
                    warn!("skipping {id}: {e}");
                    continue;
                }
            };
            entries.push((id, text, wav, info.num_samples));
        }
        if let Some(k) = opts.max_utts {
            entries.sort_by(|a, b| a.3.cmp(&b.3).then_with(|| a.0.cmp(&b.0)));
            entries.truncate(k);
        }
        if let Some(cache) = &opts.cache_dir {
            fs::create_dir_all(cache).map_err(|e| Error::io(cache, e))?;
        }
        let fb = MelFilterbank::from_config(&opts.dsp)?;
        let built: Vec<Option<Utterance>> = entries
            .par_iter()
            .map(|(id, text, wav, _)| -> Result<Option<Utterance>> {
                let normalized = match normalize_text(text) {
                    Ok(n) => n,
                    Err(_) => {
                        warn!("skipping {id}: empty text after normalization");
                        return Ok(None);
                    }
                };
                let char_ids = encode_text(&normalized, &vocab)?;
                let (mel, linear) = cached_features(id, wav, opts, &fb)?;
                Ok(Some(Utterance {
                    id: id.clone(),
                    raw_text: text.clone(),
                    char_ids,
                    mel,
                    linear,
                }))
            })
            .collect::<Result<_>>()?;
        let utterances: Vec<Utterance> = built.into_iter().flatten().collect();
        if utterances.is_empty() {
            return Err(Error::Corpus(format!(
                "{}: no usable utterances",
                dir.display()
            )));
        }
        info!(
            "loaded {} utterances from {}",
            utterances.len(),
            dir.display()
        );
        Ok(Self { utterances, vocab })
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metadata_fields() {
        let (e, skipped) =
            parse_metadata("LJ001-0001|text a|text b\nLJ2|only two\nbroken\n|x|y\n\n");
        assert_eq!(
            e,
            vec![
                ("LJ001-0001".to_string(), "text b".to_string()),
                ("LJ2".to_string(), "only two".to_string())
            ]
        );
        assert_eq!(skipped, 2);
    }

    #[test]
    fn thirteen_thousand_lines() {
        let text: String = (0..13_100)
            .map(|i| format!("LJ{i:05}|raw {i}|norm {i}\n"))
            .collect();
        assert_eq!(parse_metadata(&text).0.len(), 13_100);
    }

    #[test]
    fn missing_metadata_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_metadata(dir.path()), Err(Error::Io { .. })));
        fs::write(dir.path().join("metadata.csv"), "bad\n").unwrap();
        assert!(matches!(load_metadata(dir.path()), Err(Error::Corpus(_))));
    }
}
