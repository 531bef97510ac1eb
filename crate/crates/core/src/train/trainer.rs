use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{Adam, StepOutcome};
use super::checkpoint::{save_checkpoint, Checkpoint};
use super::config::{teacher_forcing_ratio, TrainConfig};
use super::loss::{batch_diagonal_mass, total_loss, LossConfig};
use crate::autodiff::{Tape, Tensor};
use crate::data::{make_batch, Utterance};
use crate::error::{Error, Result};
use crate::model::{unstack_alignments, Model};

/// Stream ids at or above this value are reserved for epoch shuffles.
const SHUFFLE_STREAM: u64 = 1 << 63;

/// One line of the training log.
///
/// `attn` is the weighted guided term `λ·L_attn`; `None` drops the column.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRecord {
    pub step: u64,
    pub mel: f64,
    pub lin: f64,
    pub stop: f64,
    pub attn: Option<f64>,
    pub diag: f64,
    pub tf: f64,
}

impl fmt::Display for LogRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "step={} mel={:.8} lin={:.8} stop={:.8}",
            self.step, self.mel, self.lin, self.stop
        )?;
        if let Some(a) = self.attn {
            write!(f, " attn={a:.8}")?;
        }
        write!(f, " diag={:.6} tf={:.6}", self.diag, self.tf)
    }
}

impl FromStr for LogRecord {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let bad = |d: String| Error::Input(format!("log line {line:?}: {d}"));
        let mut rec = LogRecord {
            step: 0,
            mel: f64::NAN,
            lin: f64::NAN,
            stop: f64::NAN,
            attn: None,
            diag: f64::NAN,
            tf: f64::NAN,
        };
        let mut seen = 0u8;
        for field in line.split_whitespace() {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| bad(format!("malformed field {field:?}")))?;
            let num = || {
                v.parse::<f64>()
                    .map_err(|_| bad(format!("bad number {v:?}")))
            };
            let bit = match k {
                "step" => {
                    rec.step = v.parse().map_err(|_| bad(format!("bad step {v:?}")))?;
                    1
                }
                "mel" => {
                    rec.mel = num()?;
                    2
                }
                "lin" => {
                    rec.lin = num()?;
                    4
                }
                "stop" => {
                    rec.stop = num()?;
                    8
                }
                "attn" => {
                    rec.attn = Some(num()?);
                    0
                }
                "diag" => {
                    rec.diag = num()?;
                    16
                }
                "tf" => {
                    rec.tf = num()?;
                    32
                }
                _ => return Err(bad(format!("unknown field {k:?}"))),
            };
            seen |= bit;
        }
        if seen != 63 {
            return Err(bad("missing fields".into()));
        }
        Ok(rec)
    }
}

/// Owns the model and optimizer state and advances them one batch at a time.
///
/// Batch order and all per-step randomness are pure functions of
/// `config.seed` and the step counter, so a trainer rebuilt from a checkpoint
/// continues exactly as the original would have.
pub struct Trainer {
    pub config: TrainConfig,
    pub model: Model,
    pub adam: Adam,
    pub step: u64,
    pub skipped_steps: u64,
    /// Emit the `attn` log column.
    pub log_attn: bool,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = Model::new(config.model_config(), config.seed)?;
        let adam = Adam::new(&model.params, config.lr);
        Ok(Self {
            config,
            model,
            adam,
            step: 0,
            skipped_steps: 0,
            log_attn: true,
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        ckpt.config.validate()?;
        let model = Model::from_params(ckpt.config.model_config(), &ckpt.params)?;
        let mut adam = ckpt.adam;
        adam.lr = ckpt.config.lr;
        if adam.m.len() != model.params.len() {
            return Err(Error::Config(
                "optimizer state does not match parameters".into(),
            ));
        }
        Ok(Self {
            config: ckpt.config,
            model,
            adam,
            step: ckpt.step,
            skipped_steps: ckpt.skipped_steps,
            log_attn: true,
        })
    }

    pub fn checkpoint(&self, n_utts: usize) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            params: self.model.params.clone(),
            adam: self.adam.clone(),
            step: self.step,
            epoch: self.epoch(n_utts),
            skipped_steps: self.skipped_steps,
        }
    }

    pub fn batches_per_epoch(&self, n_utts: usize) -> u64 {
        n_utts.div_ceil(self.config.batch_size) as u64
    }

    pub fn epoch(&self, n_utts: usize) -> u64 {
        self.step / self.batches_per_epoch(n_utts).max(1)
    }

    /// Total steps implied by `max_steps` or `epochs`.
    pub fn planned_steps(&self, n_utts: usize) -> u64 {
        if self.config.max_steps > 0 {
            self.config.max_steps as u64
        } else {
            self.config.epochs as u64 * self.batches_per_epoch(n_utts)
        }
    }

    fn step_rng(&self, step: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(step);
        rng
    }

    fn epoch_order(&self, epoch: u64, n: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(SHUFFLE_STREAM | epoch);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        order
    }

    /// Indices into the corpus that make up batch number `step`.
    pub fn batch_indices(&self, step: u64, n_utts: usize) -> Vec<usize> {
        let nb = self.batches_per_epoch(n_utts);
        let (epoch, pos) = (step / nb, (step % nb) as usize);
        let order = self.epoch_order(epoch, n_utts);
        let bs = self.config.batch_size;
        order[pos * bs..((pos + 1) * bs).min(n_utts)].to_vec()
    }

    /// Runs one optimizer step on the next batch.
    pub fn train_step(&mut self, corpus: &[Utterance]) -> Result<LogRecord> {
        if corpus.is_empty() {
            return Err(Error::Corpus("training corpus is empty".into()));
        }
        let idx = self.batch_indices(self.step, corpus.len());
        let items: Vec<&Utterance> = idx.iter().map(|&i| &corpus[i]).collect();
        let batch = make_batch(&items, self.config.r)?;
        let tf = teacher_forcing_ratio(self.epoch(corpus.len()) as usize, &self.config);
        let mut rng = self.step_rng(self.step);
        let loss_cfg = LossConfig {
            guided_weight: self.config.guided_weight,
            guided_g: self.config.guided_g,
            stop_pos_weight: self.config.stop_pos_weight,
        };

        let tape = Tape::new();
        let p = self.model.bind(&tape, true);
        let fwd = self
            .model
            .forward_teacher_forced(&tape, &p, &batch, tf, &mut rng)?;
        let (loss, parts) = total_loss(&tape, &fwd, &batch, &loss_cfg)?;
        if !parts.total.is_finite() {
            let msg = format!(
                "loss {} at step {} on batch [{}] (mel={} lin={} stop={} attn={})",
                parts.total,
                self.step + 1,
                batch.ids.join(", "),
                parts.mel,
                parts.linear,
                parts.stop,
                parts.attn
            );
            log::error!("{msg}");
            return Err(Error::NonFinite(msg));
        }
        let diag = batch_diagonal_mass(&fwd, &batch);
        let grads = tape.backward(loss)?;
        let grads: Vec<Tensor> = p.vars().iter().map(|&v| grads.get_or_zeros(v)).collect();
        drop(p);
        match self
            .adam
            .step(&mut self.model.params, &grads, self.config.grad_clip)?
        {
            StepOutcome::Applied { .. } => {}
            StepOutcome::Skipped => {
                self.skipped_steps += 1;
                log::warn!(
                    "non-finite gradient at step {}, update skipped ({} so far)",
                    self.step + 1,
                    self.skipped_steps
                );
            }
        }
        self.step += 1;
        Ok(LogRecord {
            step: self.step,
            mel: parts.mel,
            lin: parts.linear,
            stop: parts.stop,
            attn: self
                .log_attn
                .then_some(self.config.guided_weight * parts.attn),
            diag,
            tf,
        })
    }

    /// Teacher-forced alignment `[chars × steps]` of one utterance under the
    /// current parameters, with dropout drawn from `config.seed`.
    pub fn probe_alignment(&self, utt: &Utterance) -> Result<Tensor> {
        let batch = make_batch(&[utt], self.config.r)?;
        let tape = Tape::new();
        let p = self.model.bind(&tape, false);
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let fwd = self
            .model
            .forward_teacher_forced(&tape, &p, &batch, 1.0, &mut rng)?;
        let steps = [batch.step_length(0)];
        let a = unstack_alignments(&fwd.alignments.value(), &batch.char_lengths, &steps);
        Ok(a.into_iter().next().expect("one item"))
    }

    /// Trains until [`Trainer::planned_steps`], passing each record to
    /// `on_log`. With `checkpoint_dir` set, writes `step_<n>.msqk` every
    /// `checkpoint_every` steps and `final.msqk` at the end.
    pub fn run(
        &mut self,
        corpus: &[Utterance],
        checkpoint_dir: Option<&Path>,
        mut on_log: impl FnMut(&LogRecord) -> Result<()>,
    ) -> Result<Vec<PathBuf>> {
        let mut written = Vec::new();
        let total = self.planned_steps(corpus.len());
        while self.step < total {
            let rec = self.train_step(corpus)?;
            on_log(&rec)?;
            if let Some(dir) = checkpoint_dir {
                let every = self.config.checkpoint_every as u64;
                if every > 0 && self.step.is_multiple_of(every) {
                    let path = dir.join(format!("step_{:07}.msqk", self.step));
                    save_checkpoint(&path, &self.checkpoint(corpus.len()))?;
                    written.push(path);
                }
            }
        }
        if let Some(dir) = checkpoint_dir {
            let path = dir.join("final.msqk");
            save_checkpoint(&path, &self.checkpoint(corpus.len()))?;
            written.push(path);
        }
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_config() -> TrainConfig {
        TrainConfig {
            d: 8,
            r: 2,
            n_fft: 16,
            win_length: 16,
            hop_length: 4,
            n_mels: 4,
            fmax: 4000.0,
            batch_size: 2,
            lr: 3e-3,
            seed: 5,
            tf_anneal_epochs: 4,
            ..TrainConfig::default()
        }
    }

    pub(crate) fn tiny_corpus(n: usize, cfg: &TrainConfig) -> Vec<Utterance> {
        let bins = cfg.n_fft / 2 + 1;
        (0..n)
            .map(|k| {
                let chars = 3 + k % 3;
                let frames = 4 + 2 * (k % 4);
                let wave = |i: usize, feat: usize| {
                    let (f, t) = (i / frames, i % frames);
                    (0.5 + 0.4 * ((f * 7 + t * (k + 1)) as f64 / feat as f64).sin()).clamp(0.0, 1.0)
                };
                Utterance {
                    id: format!("utt{k}"),
                    raw_text: String::new(),
                    char_ids: (0..chars)
                        .map(|i| 2 + (i * 3 + k) % 30)
                        .chain([1])
                        .collect(),
                    mel: Tensor::new(
                        &[cfg.n_mels, frames],
                        (0..cfg.n_mels * frames)
                            .map(|i| wave(i, cfg.n_mels))
                            .collect(),
                    )
                    .unwrap(),
                    linear: Tensor::new(
                        &[bins, frames],
                        (0..bins * frames).map(|i| wave(i, bins)).collect(),
                    )
                    .unwrap(),
                }
            })
            .collect()
    }

    #[test]
    fn log_record_round_trip() {
        let r = LogRecord {
            step: 12,
            mel: 0.125,
            lin: 0.5,
            stop: 1.25,
            attn: Some(0.0625),
            diag: 0.75,
            tf: 0.6,
        };
        let line = r.to_string();
        assert_eq!(
            line,
            "step=12 mel=0.12500000 lin=0.50000000 stop=1.25000000 attn=0.06250000 diag=0.750000 tf=0.600000"
        );
        assert_eq!(line.parse::<LogRecord>().unwrap(), r);
        let unguided = LogRecord { attn: None, ..r };
        assert!(!unguided.to_string().contains("attn"));
        assert_eq!(unguided.to_string().parse::<LogRecord>().unwrap(), unguided);
        assert!("step=1 mel=0.1".parse::<LogRecord>().is_err());
        assert!("step=1 mel=x lin=0 stop=0 diag=0 tf=0"
            .parse::<LogRecord>()
            .is_err());
    }

    #[test]
    fn epochs_cover_every_utterance_once() {
        let t = Trainer::new(tiny_config()).unwrap();
        let n = 5;
        assert_eq!(t.batches_per_epoch(n), 3);
        for epoch in 0..3u64 {
            let mut seen: Vec<usize> = (0..3)
                .flat_map(|s| t.batch_indices(epoch * 3 + s, n))
                .collect();
            seen.sort();
            assert_eq!(seen, (0..n).collect::<Vec<_>>());
        }
        assert_ne!(t.batch_indices(0, 50), t.batch_indices(25, 50));
    }

    #[test]
    fn same_seed_same_curve_and_resume_is_exact() {
        let cfg = tiny_config();
        let corpus = tiny_corpus(5, &cfg);
        let run = |steps: usize| {
            let mut t = Trainer::new(cfg.clone()).unwrap();
            let logs: Vec<String> = (0..steps)
                .map(|_| t.train_step(&corpus).unwrap().to_string())
                .collect();
            (t, logs)
        };
        let (full, logs_a) = run(8);
        let (_, logs_b) = run(8);
        assert_eq!(logs_a, logs_b);

        let (half, _) = run(3);
        let bytes = half.checkpoint(corpus.len()).to_bytes();
        let mut resumed =
            Trainer::from_checkpoint(Checkpoint::from_bytes(&bytes, "mem").unwrap()).unwrap();
        let tail: Vec<String> = (0..5)
            .map(|_| resumed.train_step(&corpus).unwrap().to_string())
            .collect();
        assert_eq!(tail, logs_a[3..]);
        assert_eq!(resumed.model.params, full.model.params);
        assert_eq!(resumed.adam, full.adam);
    }

    #[test]
    fn zero_lambda_logs_zero_attn_and_nan_halts_with_ids() {
        let mut cfg = tiny_config();
        cfg.guided_weight = 0.0;
        let mut corpus = tiny_corpus(2, &cfg);
        let mut t = Trainer::new(cfg).unwrap();
        assert_eq!(t.train_step(&corpus).unwrap().attn, Some(0.0));

        corpus[1].mel.data_mut()[0] = f64::NAN;
        corpus[0].mel.data_mut()[0] = f64::NAN;
        match t.train_step(&corpus) {
            Err(Error::NonFinite(msg)) => {
                assert!(msg.contains("utt0") && msg.contains("utt1"), "{msg}")
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn run_writes_periodic_and_final_checkpoints() {
        let mut cfg = tiny_config();
        cfg.max_steps = 4;
        cfg.checkpoint_every = 2;
        let corpus = tiny_corpus(3, &cfg);
        let dir = tempfile::tempdir().unwrap();
        let mut t = Trainer::new(cfg).unwrap();
        let mut n_logs = 0;
        let files = t
            .run(&corpus, Some(dir.path()), |_| {
                n_logs += 1;
                Ok(())
            })
            .unwrap();
        assert_eq!(n_logs, 4);
        let names: Vec<_> = files
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert_eq!(
            names,
            ["step_0000002.msqk", "step_0000004.msqk", "final.msqk"]
        );
        let back = super::super::load_checkpoint(&files[2]).unwrap();
        assert_eq!(back.step, 4);
        assert_eq!(back.epoch, 2);
    }
}
