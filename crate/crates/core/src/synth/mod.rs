//! Free-running synthesis from text.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::audio::{denormalize_to_amp, griffin_lim, wav_write, write_mspc, Waveform};
use crate::autodiff::{Tape, Tensor};
use crate::data::{encode_text, normalize_text, CharVocab};
use crate::error::{Error, Result};
use crate::eval::write_pgm;
use crate::model::{DecoderState, Model};
use crate::train::{Checkpoint, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthOptions {
    /// Decode-step cap (each step emits `r` frames).
    pub max_steps: usize,
    pub forced_incremental: bool,
    /// Treat a stalled attention peak as out of band.
    pub strict_band: bool,
    /// Keep prenet dropout active, drawing masks from `seed`.
    pub prenet_dropout: bool,
    pub seed: u64,
    /// Overrides the configured Griffin-Lim iteration count.
    pub griffin_lim_iters: Option<usize>,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            max_steps: 200,
            forced_incremental: true,
            strict_band: false,
            prenet_dropout: true,
            seed: 0,
            griffin_lim_iters: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthesisResult {
    pub text: String,
    /// `[n_mels × frames]`
    pub mel: Tensor,
    /// Normalized log magnitudes, `[bins × frames]`.
    pub linear: Tensor,
    /// `[characters × steps]`, one attention distribution per column.
    pub alignment: Tensor,
    /// Attended character per step.
    pub positions: Vec<usize>,
    pub forced_steps: usize,
    /// Step count at which the stop token fired; `None` when `max_steps` ran out.
    pub stop_step: Option<usize>,
    pub waveform: Waveform,
}

impl SynthesisResult {
    pub fn steps(&self) -> usize {
        self.positions.len()
    }

    pub fn hit_max_steps(&self) -> bool {
        self.stop_step.is_none()
    }

    /// Writes `<stem>.wav`, `<stem>.mel.mspc`, `<stem>.align.mspc` and
    /// `<stem>.align.pgm` into `dir`.
    pub fn write_outputs(&self, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let paths: Vec<PathBuf> = ["wav", "mel.mspc", "align.mspc", "align.pgm"]
            .iter()
            .map(|ext| dir.join(format!("{stem}.{ext}")))
            .collect();
        wav_write(&paths[0], &self.waveform)?;
        write_mspc(&paths[1], &self.mel)?;
        write_mspc(&paths[2], &self.alignment)?;
        write_pgm(&paths[3], &self.alignment)?;
        Ok(paths)
    }
}

/// Read-only model plus the settings needed to turn its output into audio.
pub struct Synthesizer {
    pub config: TrainConfig,
    pub model: Model,
    pub vocab: CharVocab,
}

/// `[1 × r·feat]` frame-major group to `r` columns of `out` starting at `col`.
fn scatter_group(group: &[f64], feat: usize, out: &mut [Vec<f64>]) {
    for frame in group.chunks_exact(feat) {
        for (row, &v) in out.iter_mut().zip(frame) {
            row.push(v);
        }
    }
}

fn rows_to_tensor(rows: Vec<Vec<f64>>) -> Result<Tensor> {
    Tensor::from_rows(&rows)
}

impl Synthesizer {
    pub fn new(config: TrainConfig, model: Model) -> Result<Self> {
        if model.config != config.model_config() {
            return Err(Error::Config(
                "model architecture does not match its training config".into(),
            ));
        }
        Ok(Self {
            config,
            model,
            vocab: CharVocab::default(),
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.config.validate()?;
        let model = Model::from_params(ckpt.config.model_config(), &ckpt.params)?;
        Self::new(ckpt.config.clone(), model)
    }

    pub fn synthesize(&self, text: &str, opts: &SynthOptions) -> Result<SynthesisResult> {
        let normalized = normalize_text(text)?;
        let ids = encode_text(&normalized, &self.vocab)?;
        if opts.max_steps == 0 {
            return Err(Error::Input("max_steps must be positive".into()));
        }
        let cfg = &self.model.config;
        let n = ids.len();
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

        let tape = Tape::new();
        let p = self.model.bind(&tape, false);
        let enc = self.model.encoder.encode_batch(&p, &[ids], &[n])?;
        let mask = enc.key_mask();
        let mut state = DecoderState::initial(&tape, 1, cfg.d, cfg.mel_group());
        let forcing = opts.forced_incremental.then_some(opts.strict_band);

        let mut mel_rows = vec![Vec::new(); cfg.n_mels];
        let mut lin_rows = vec![Vec::new(); cfg.n_bins];
        let mut columns: Vec<Vec<f64>> = Vec::new();
        let (mut positions, mut forced_steps, mut stop_step) = (Vec::new(), 0, None);
        for s in 0..opts.max_steps {
            let rng_arg: Option<&mut dyn rand::RngCore> = if opts.prenet_dropout {
                Some(&mut rng)
            } else {
                None
            };
            let (out, next) = self
                .model
                .decoder
                .step(&p, &state, &enc, &mask, rng_arg, forcing)?;
            scatter_group(out.mel.value().data(), cfg.n_mels, &mut mel_rows);
            scatter_group(out.linear.value().data(), cfg.n_bins, &mut lin_rows);
            columns.push(out.weights.value().data().to_vec());
            positions.push(next.n_prev[0]);
            forced_steps += out.forced[0] as usize;
            let stop = out.stop_probs()[0];
            if !stop.is_finite() {
                return Err(Error::NonFinite(format!(
                    "stop probability at step {}",
                    s + 1
                )));
            }
            state = next;
            if stop > 0.5 {
                stop_step = Some(s + 1);
                break;
            }
        }

        let alignment = Tensor::new(
            &[n, columns.len()],
            (0..n)
                .flat_map(|i| columns.iter().map(move |c| c[i]))
                .collect(),
        )?;
        let mel = rows_to_tensor(mel_rows)?;
        let linear = rows_to_tensor(lin_rows)?;
        let dsp = self.config.dsp_config();
        let iters = opts.griffin_lim_iters.unwrap_or(dsp.griffin_lim_iters);
        let waveform = griffin_lim(&denormalize_to_amp(&linear, &dsp), iters, &dsp)?;
        Ok(SynthesisResult {
            text: normalized,
            mel,
            linear,
            alignment,
            positions,
            forced_steps,
            stop_step,
            waveform,
        })
    }

    /// Synthesizes every text in parallel. Each entry equals the result of a
    /// separate [`Synthesizer::synthesize`] call; failures stay per item.
    pub fn batch_synthesize<S: AsRef<str> + Sync>(
        &self,
        texts: &[S],
        opts: &SynthOptions,
    ) -> Vec<Result<SynthesisResult>> {
        texts
            .par_iter()
            .map(|t| self.synthesize(t.as_ref(), opts))
            .collect()
    }
}
