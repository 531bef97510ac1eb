//! Python bindings for melseq.
//!
//! Arrays cross the boundary as nested lists of floats; row `i` of a
//! spectrogram is frequency channel `i`.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyIOError, PyValueError};
use pyo3::prelude::*;

use melseq::audio::{self, DspConfig, Waveform};
use melseq::autodiff::Tensor;
use melseq::data::{normalize_text as normalize, Corpus, CorpusOptions};
use melseq::eval::{self, MosReport};
use melseq::model::{guided_mask as mask, Model};
use melseq::synth::{SynthOptions, SynthesisResult, Synthesizer as CoreSynthesizer};
use melseq::train::{load_checkpoint, LogRecord, TrainConfig, Trainer};
use melseq::Error;

create_exception!(melseq_py, CheckpointError, PyException);

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Checksum(_) | Error::Version { .. } | Error::Format { .. } => {
            CheckpointError::new_err(e.to_string())
        }
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    match t.dims2() {
        Ok((r, _)) => (0..r).map(|i| t.row_slice(i).to_vec()).collect(),
        Err(_) => vec![t.data().to_vec()],
    }
}

fn tensor(rows: Vec<Vec<f64>>) -> PyResult<Tensor> {
    Tensor::from_rows(&rows).map_err(to_py)
}

fn parse_config(text: Option<&str>) -> PyResult<TrainConfig> {
    match text {
        Some(t) => TrainConfig::parse(t).map_err(to_py),
        None => Ok(TrainConfig::default()),
    }
}

/// Output of one synthesis call.
#[pyclass(module = "melseq_py", frozen)]
struct Synthesis {
    inner: SynthesisResult,
}

#[pymethods]
impl Synthesis {
    #[getter]
    fn text(&self) -> &str {
        &self.inner.text
    }

    #[getter]
    fn waveform(&self) -> Vec<f64> {
        self.inner.waveform.samples.clone()
    }

    #[getter]
    fn sample_rate(&self) -> u32 {
        self.inner.waveform.sample_rate
    }

    /// `n_mels` rows of frame values.
    #[getter]
    fn mel(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.mel)
    }

    /// One row per character, one column per decoder step.
    #[getter]
    fn alignment(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.alignment)
    }

    #[getter]
    fn positions(&self) -> Vec<usize> {
        self.inner.positions.clone()
    }

    #[getter]
    fn forced_steps(&self) -> usize {
        self.inner.forced_steps
    }

    /// `None` when the step cap was reached before the stop token fired.
    #[getter]
    fn stop_step(&self) -> Option<usize> {
        self.inner.stop_step
    }

    /// Writes `.wav`, `.mel.mspc`, `.align.mspc` and `.align.pgm` files.
    fn write(&self, dir: PathBuf, stem: &str) -> PyResult<Vec<PathBuf>> {
        self.inner.write_outputs(&dir, stem).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "Synthesis(text={:?}, steps={}, forced={}, stop_step={}, samples={})",
            self.inner.text,
            self.inner.steps(),
            self.inner.forced_steps,
            self.inner
                .stop_step
                .map_or_else(|| "None".to_string(), |s| s.to_string()),
            self.inner.waveform.len()
        )
    }
}

#[pyclass(module = "melseq_py", frozen)]
struct Synthesizer {
    inner: CoreSynthesizer,
}

#[pymethods]
impl Synthesizer {
    /// Loads a trained model from a `.msqk` checkpoint.
    #[new]
    fn new(checkpoint: PathBuf) -> PyResult<Self> {
        let ckpt = load_checkpoint(&checkpoint).map_err(to_py)?;
        let inner = CoreSynthesizer::from_checkpoint(&ckpt).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Untrained model with the given config text (defaults when omitted).
    #[staticmethod]
    #[pyo3(signature = (config=None))]
    fn untrained(config: Option<&str>) -> PyResult<Self> {
        let cfg = parse_config(config)?;
        let model = Model::new(cfg.model_config(), cfg.seed).map_err(to_py)?;
        let inner = CoreSynthesizer::new(cfg, model).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.inner.model.num_params()
    }

    #[getter]
    fn config(&self) -> String {
        self.inner.config.to_text()
    }

    #[allow(clippy::too_many_arguments)]
    #[pyo3(signature = (text, max_steps=200, seed=0, forced_incremental=true, prenet_dropout=true, griffin_lim_iters=None))]
    fn synthesize(
        &self,
        py: Python<'_>,
        text: &str,
        max_steps: usize,
        seed: u64,
        forced_incremental: bool,
        prenet_dropout: bool,
        griffin_lim_iters: Option<usize>,
    ) -> PyResult<Synthesis> {
        let opts = SynthOptions {
            max_steps,
            seed,
            forced_incremental,
            prenet_dropout,
            griffin_lim_iters,
            ..SynthOptions::default()
        };
        let inner = py
            .detach(|| self.inner.synthesize(text, &opts))
            .map_err(to_py)?;
        Ok(Synthesis { inner })
    }

    /// Synthesizes every text in parallel; same results as one call each.
    #[pyo3(signature = (texts, max_steps=200, seed=0))]
    fn synthesize_batch(
        &self,
        py: Python<'_>,
        texts: Vec<String>,
        max_steps: usize,
        seed: u64,
    ) -> PyResult<Vec<Synthesis>> {
        let opts = SynthOptions {
            max_steps,
            seed,
            ..SynthOptions::default()
        };
        py.detach(|| self.inner.batch_synthesize(&texts, &opts))
            .into_iter()
            .map(|r| r.map(|inner| Synthesis { inner }).map_err(to_py))
            .collect()
    }
}

/// Default training config as `key = value` text.
#[pyfunction]
fn default_config() -> String {
    TrainConfig::default().to_text()
}

/// Trains on an LJSpeech-layout corpus, writing checkpoints into `out_dir`.
/// Returns one dict per optimizer step.
#[pyfunction]
#[pyo3(signature = (corpus_dir, out_dir, config=None, max_steps=None, max_utts=None))]
fn train(
    py: Python<'_>,
    corpus_dir: PathBuf,
    out_dir: PathBuf,
    config: Option<&str>,
    max_steps: Option<usize>,
    max_utts: Option<usize>,
) -> PyResult<Vec<Py<PyAny>>> {
    let mut cfg = parse_config(config)?;
    if let Some(m) = max_steps {
        cfg.max_steps = m;
    }
    let records: Vec<LogRecord> = py
        .detach(|| -> melseq::Result<Vec<LogRecord>> {
            let mut opts = CorpusOptions::new(cfg.dsp_config());
            opts.cache_dir = Some(corpus_dir.join(".melseq_cache"));
            opts.max_utts = max_utts;
            let corpus = Corpus::load(&corpus_dir, &opts)?;
            std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
            let mut trainer = Trainer::new(cfg)?;
            let mut log = Vec::new();
            trainer.run(&corpus.utterances, Some(&out_dir), |r| {
                log.push(r.clone());
                Ok(())
            })?;
            Ok(log)
        })
        .map_err(to_py)?;
    records
        .into_iter()
        .map(|r| {
            let d = pyo3::types::PyDict::new(py);
            d.set_item("step", r.step)?;
            d.set_item("mel", r.mel)?;
            d.set_item("lin", r.lin)?;
            d.set_item("stop", r.stop)?;
            d.set_item("attn", r.attn)?;
            d.set_item("diag", r.diag)?;
            d.set_item("tf", r.tf)?;
            Ok(d.into_any().unbind())
        })
        .collect()
}

/// Writes a small tone-per-letter corpus in LJSpeech layout.
#[pyfunction]
#[pyo3(signature = (dir, n=200, seed=0))]
fn make_synthetic_corpus(dir: PathBuf, n: usize, seed: u64) -> PyResult<()> {
    eval::generate_synthetic_corpus(dir, n, seed).map_err(to_py)
}

/// Training config matched to [`make_synthetic_corpus`] audio.
#[pyfunction]
fn synthetic_config() -> String {
    eval::synthetic_train_config().to_text()
}

#[pyfunction]
fn normalize_text(text: &str) -> PyResult<String> {
    normalize(text).map_err(to_py)
}

/// `[n × t]` guided-attention penalty weights.
#[pyfunction]
#[pyo3(signature = (n, t, g=0.2))]
fn guided_mask(n: usize, t: usize, g: f64) -> Vec<Vec<f64>> {
    rows(&mask(n, t, g))
}

/// Reads a mono 16-bit PCM file; returns `(samples, sample_rate)`.
#[pyfunction]
fn read_wav(path: PathBuf) -> PyResult<(Vec<f64>, u32)> {
    let w = audio::wav_read(path).map_err(to_py)?;
    Ok((w.samples, w.sample_rate))
}

#[pyfunction]
fn write_wav(path: PathBuf, samples: Vec<f64>, sample_rate: u32) -> PyResult<()> {
    audio::wav_write(path, &Waveform::new(samples, sample_rate)).map_err(to_py)
}

/// STFT magnitudes `[bins × frames]` with the default analysis settings.
#[pyfunction]
#[pyo3(signature = (samples, sample_rate=22050))]
fn stft_magnitudes(samples: Vec<f64>, sample_rate: u32) -> PyResult<Vec<Vec<f64>>> {
    let cfg = DspConfig {
        sample_rate,
        ..DspConfig::default()
    };
    let mags = audio::stft(&Waveform::new(samples, sample_rate), &cfg).map_err(to_py)?;
    Ok(rows(&mags))
}

/// Waveform from STFT magnitudes; `momentum=0` gives the classic update.
#[pyfunction]
#[pyo3(signature = (magnitudes, iters=60, sample_rate=22050, momentum=None))]
fn griffin_lim(
    py: Python<'_>,
    magnitudes: Vec<Vec<f64>>,
    iters: usize,
    sample_rate: u32,
    momentum: Option<f64>,
) -> PyResult<Vec<f64>> {
    let mut cfg = DspConfig {
        sample_rate,
        ..DspConfig::default()
    };
    if let Some(m) = momentum {
        cfg.griffin_lim_momentum = m;
    }
    let mags = tensor(magnitudes)?;
    let w = py
        .detach(|| audio::griffin_lim(&mags, iters, &cfg))
        .map_err(to_py)?;
    Ok(w.samples)
}

/// Per-component max relative gradient error for one seed.
#[pyfunction]
#[pyo3(signature = (seed=0))]
fn gradcheck(py: Python<'_>, seed: u64) -> PyResult<Vec<(String, f64)>> {
    let report = py
        .detach(|| eval::gradcheck_report(seed, false))
        .map_err(to_py)?;
    Ok(report.components)
}

/// Reads `sample_id,rater_id,rating` rows; returns `(mean, half_width, n)`.
#[pyfunction]
fn mos_stats(path: PathBuf) -> PyResult<(f64, f64, usize)> {
    let r = MosReport::load(path).map_err(to_py)?;
    Ok((r.overall.mean, r.overall.half_width, r.overall.n))
}

/// Renders an alignment matrix as a binary PGM image.
#[pyfunction]
fn write_alignment_pgm(path: PathBuf, alignment: Vec<Vec<f64>>) -> PyResult<()> {
    eval::write_pgm(path, &tensor(alignment)?).map_err(to_py)
}

#[pymodule]
fn melseq_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("CheckpointError", m.py().get_type::<CheckpointError>())?;
    m.add_class::<Synthesizer>()?;
    m.add_class::<Synthesis>()?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(make_synthetic_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_config, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_text, m)?)?;
    m.add_function(wrap_pyfunction!(guided_mask, m)?)?;
    m.add_function(wrap_pyfunction!(read_wav, m)?)?;
    m.add_function(wrap_pyfunction!(write_wav, m)?)?;
    m.add_function(wrap_pyfunction!(stft_magnitudes, m)?)?;
    m.add_function(wrap_pyfunction!(griffin_lim, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(mos_stats, m)?)?;
    m.add_function(wrap_pyfunction!(write_alignment_pgm, m)?)?;
    Ok(())
}
