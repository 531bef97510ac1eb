//! The sequence-to-sequence acoustic model.

mod attention;
mod config;
mod decoder;
mod encoder;

pub use attention::{
    argmax, attend, compute_query, diagonal_mass, force_incremental, guided_attention_loss,
    guided_mask, guided_mask_batch, guided_weight, unstack_alignments, AlignmentMatrix, Forced,
    DIAGONAL_BAND,
};
pub use config::ModelConfig;
pub use decoder::{dropout, Decoder, DecoderState, StepOutput};
pub use encoder::{Encoder, EncoderOutput};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{concat, stack, BoundParams, ParamStore, Tape, Var};
use crate::data::Batch;
use crate::error::{Error, Result};

/// Parameters plus the layer layout that indexes them.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub encoder: Encoder,
    pub decoder: Decoder,
}

/// Teacher-forced outputs for a whole batch.
pub struct Forward<'t> {
    /// `[B × T_max·n_mels]`, frame-major per item.
    pub mel: Var<'t>,
    /// `[B × T_max·n_bins]`, frame-major per item.
    pub linear: Var<'t>,
    /// `[B × steps]`
    pub stop_logits: Var<'t>,
    /// `[B × steps × N_max]`
    pub alignments: Var<'t>,
}

impl Model {
    /// Fresh parameters drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let encoder = Encoder::new(&mut params, config.vocab_size, config.d, &mut rng);
        let decoder = Decoder::new(&mut params, &config, &mut rng);
        Ok(Self {
            config,
            params,
            encoder,
            decoder,
        })
    }

    /// Builds the layout for `config` and loads `params` into it by name.
    pub fn from_params(config: ModelConfig, params: &ParamStore) -> Result<Self> {
        let mut m = Self::new(config, 0)?;
        m.params.load_from(params)?;
        Ok(m)
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    /// `(name, shape, count)` for every tensor.
    pub fn param_table(&self) -> Vec<(String, Vec<usize>, usize)> {
        self.params
            .iter()
            .map(|(n, t)| (n.to_string(), t.shape().to_vec(), t.len()))
            .collect()
    }

    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> BoundParams<'t> {
        self.params.bind(tape, trainable)
    }

    /// Runs every decode step of `batch`.
    ///
    /// Before each step after the first, item `b` is fed its ground-truth
    /// frame group with probability `tf_ratio`, else its own previous
    /// prediction. Dropout masks and teacher-forcing draws come from `rng`.
    pub fn forward_teacher_forced<'t>(
        &self,
        tape: &'t Tape,
        p: &BoundParams<'t>,
        batch: &Batch,
        tf_ratio: f64,
        rng: &mut dyn RngCore,
    ) -> Result<Forward<'t>> {
        if !(0.0..=1.0).contains(&tf_ratio) {
            return Err(Error::Input(format!(
                "teacher forcing ratio {tf_ratio} outside [0, 1]"
            )));
        }
        if batch.r != self.config.r
            || batch.n_mels() != self.config.n_mels
            || batch.n_bins() != self.config.n_bins
        {
            return Err(Error::Config(format!(
                "batch (r={}, mels={}, bins={}) does not match model (r={}, mels={}, bins={})",
                batch.r,
                batch.n_mels(),
                batch.n_bins(),
                self.config.r,
                self.config.n_mels,
                self.config.n_bins
            )));
        }
        let enc = self
            .encoder
            .encode_batch(p, &batch.char_ids, &batch.char_lengths)?;
        let mask = enc.key_mask();
        let bsz = batch.size();
        let mut state = DecoderState::initial(tape, bsz, self.config.d, self.config.mel_group());
        let (mut mels, mut lins, mut stops, mut aligns) =
            (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for s in 0..batch.decode_steps() {
            let (out, mut next) =
                self.decoder
                    .step(p, &state, &enc, &mask, Some(&mut *rng), None)?;
            if s + 1 < batch.decode_steps() {
                let teacher: Vec<bool> = (0..bsz).map(|_| rng.random::<f64>() < tf_ratio).collect();
                next.prev_mel_group = Decoder::next_input(out.mel, batch.mel_group(s), &teacher)?;
            }
            mels.push(out.mel);
            lins.push(out.linear);
            stops.push(out.stop_logit);
            aligns.push(out.weights);
            state = next;
        }
        Ok(Forward {
            mel: concat(&mels, 1)?,
            linear: concat(&lins, 1)?,
            stop_logits: concat(&stops, 1)?,
            alignments: stack(&aligns)?,
        })
    }
}
