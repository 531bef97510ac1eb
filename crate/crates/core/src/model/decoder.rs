use rand::{Rng, RngCore};

use super::attention::{argmax, attend, compute_query, force_incremental};
use super::config::ModelConfig;
use super::encoder::EncoderOutput;
use crate::autodiff::{concat, BoundParams, GruCell, Linear, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Prenet, two recurrent cells, query projection and output heads.
#[derive(Clone, Debug)]
pub struct Decoder {
    pub prenet1: Linear,
    pub prenet2: Linear,
    pub attention_rnn: GruCell,
    pub query: Linear,
    pub decoder_rnn: GruCell,
    pub mel_head: Linear,
    pub postnet1: Linear,
    pub postnet2: Linear,
    pub linear_head: Linear,
    pub stop_head: Linear,
    pub d: usize,
    pub mel_group: usize,
    pub prenet_dropout: f64,
    pub query_feedback: bool,
}

/// Recurrent state carried between decode steps, one row per batch item.
#[derive(Clone, Debug)]
pub struct DecoderState<'t> {
    pub ah: Var<'t>,
    pub dh: Var<'t>,
    pub context: Var<'t>,
    pub query: Var<'t>,
    pub prev_mel_group: Var<'t>,
    /// Last attended character of each item.
    pub n_prev: Vec<usize>,
    pub step: usize,
}

impl<'t> DecoderState<'t> {
    /// All-zero states and a zero "go" frame group.
    pub fn initial(tape: &'t Tape, batch: usize, d: usize, mel_group: usize) -> Self {
        let z = tape.constant(Tensor::zeros(&[batch, d]));
        Self {
            ah: z,
            dh: z,
            context: z,
            query: z,
            prev_mel_group: tape.constant(Tensor::zeros(&[batch, mel_group])),
            n_prev: vec![0; batch],
            step: 0,
        }
    }
}

/// Outputs of one decode step.
#[derive(Clone, Debug)]
pub struct StepOutput<'t> {
    /// `[B × r·n_mels]`, frame-major.
    pub mel: Var<'t>,
    /// `[B × r·n_bins]`, frame-major.
    pub linear: Var<'t>,
    /// `[B × 1]`, pre-sigmoid.
    pub stop_logit: Var<'t>,
    /// `[B × N_max]`, after any forcing.
    pub weights: Var<'t>,
    /// Rows whose attention column was replaced.
    pub forced: Vec<bool>,
}

impl StepOutput<'_> {
    pub fn stop_probs(&self) -> Vec<f64> {
        self.stop_logit
            .value()
            .data()
            .iter()
            .map(|&x| 1.0 / (1.0 + (-x).exp()))
            .collect()
    }
}

/// Inverted dropout: kept units are scaled by `1 / (1 - rate)`.
pub fn dropout<'t>(x: Var<'t>, rate: f64, rng: Option<&mut dyn RngCore>) -> Result<Var<'t>> {
    let Some(rng) = rng else { return Ok(x) };
    if rate == 0.0 {
        return Ok(x);
    }
    let keep = 1.0 - rate;
    let shape = x.shape();
    let n: usize = shape.iter().product();
    let mask: Vec<f64> = (0..n)
        .map(|_| {
            if rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        })
        .collect();
    x.mul(x.tape().constant(Tensor::new(&shape, mask)?))
}

impl Decoder {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let d = cfg.d;
        let (p1, p2) = cfg.prenet_dims;
        Self {
            prenet1: Linear::new(store, "decoder.prenet1", cfg.mel_group(), p1, rng),
            prenet2: Linear::new(store, "decoder.prenet2", p1, p2, rng),
            attention_rnn: GruCell::new(store, "decoder.attention_rnn", p2 + d, d, rng),
            query: Linear::new(store, "decoder.query", 2 * d, d, rng),
            decoder_rnn: GruCell::new(store, "decoder.decoder_rnn", 2 * d, d, rng),
            mel_head: Linear::new(store, "decoder.mel_head", d, cfg.mel_group(), rng),
            postnet1: Linear::new(store, "decoder.postnet1", d, d, rng),
            postnet2: Linear::new(store, "decoder.postnet2", d, cfg.mel_group(), rng),
            linear_head: Linear::new(store, "decoder.linear_head", d, cfg.linear_group(), rng),
            stop_head: Linear::new(store, "decoder.stop_head", d, 1, rng),
            d,
            mel_group: cfg.mel_group(),
            prenet_dropout: cfg.prenet_dropout,
            query_feedback: cfg.query_feedback,
        }
    }

    /// `ReLU(W2 ReLU(W1 x))`, with dropout after each layer when `rng` is given.
    pub fn prenet<'t>(
        &self,
        p: &BoundParams<'t>,
        x: Var<'t>,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<Var<'t>> {
        let h = self.prenet1.forward(p, x)?.relu();
        match rng {
            Some(rng) => {
                let h = dropout(h, self.prenet_dropout, Some(&mut *rng))?;
                let h = self.prenet2.forward(p, h)?.relu();
                dropout(h, self.prenet_dropout, Some(rng))
            }
            None => Ok(self.prenet2.forward(p, h)?.relu()),
        }
    }

    /// One autoregressive step.
    ///
    /// With `forcing = Some(strict_band)` every attention row is passed
    /// through [`force_incremental`] before the context is formed.
    pub fn step<'t>(
        &self,
        p: &BoundParams<'t>,
        state: &DecoderState<'t>,
        enc: &EncoderOutput<'t>,
        key_mask: &[bool],
        rng: Option<&mut dyn RngCore>,
        forcing: Option<bool>,
    ) -> Result<(StepOutput<'t>, DecoderState<'t>)> {
        let pre = self.prenet(p, state.prev_mel_group, rng)?;
        let carried = if self.query_feedback {
            state.query
        } else {
            state.context
        };
        let ah = self
            .attention_rnn
            .forward(p, concat(&[pre, carried], 1)?, state.ah)?;
        let query = compute_query(p, &self.query, state.dh, ah)?;
        let (mut context, mut weights) = attend(query, enc.keys, enc.values, Some(key_mask))?;

        let bsz = enc.batch_size();
        let mut n_prev = state.n_prev.clone();
        let mut forced = vec![false; bsz];
        if let Some(strict) = forcing {
            let w = weights.value();
            let n_max = enc.max_len();
            let mut replacement = Tensor::zeros(&[bsz, n_max]);
            for b in 0..bsz {
                let row = &w.data()[b * n_max..b * n_max + enc.lengths[b]];
                let f = force_incremental(row, state.n_prev[b], strict);
                forced[b] = f.forced;
                n_prev[b] = f.position;
                replacement.data_mut()[b * n_max..b * n_max + f.weights.len()]
                    .copy_from_slice(&f.weights);
            }
            if forced.iter().any(|&f| f) {
                let keep: Vec<bool> = forced.iter().map(|f| !f).collect();
                weights = weights.select_rows(&keep, weights.tape().constant(replacement))?;
                context = weights.mix(enc.values)?;
            }
        } else {
            let w = weights.value();
            let n_max = enc.max_len();
            for (b, n) in n_prev.iter_mut().enumerate() {
                *n = argmax(&w.data()[b * n_max..b * n_max + enc.lengths[b]]);
            }
        }

        let fed = if self.query_feedback {
            state.query
        } else {
            context
        };
        let dh = self
            .decoder_rnn
            .forward(p, concat(&[fed, ah], 1)?, state.dh)?;
        let coarse = self.mel_head.forward(p, dh)?;
        let residual = self
            .postnet2
            .forward(p, self.postnet1.forward(p, dh)?.tanh())?
            .tanh();
        let out = StepOutput {
            mel: coarse.add(residual)?,
            linear: self.linear_head.forward(p, dh)?,
            stop_logit: self.stop_head.forward(p, dh)?,
            weights,
            forced,
        };
        let next = DecoderState {
            ah,
            dh,
            context,
            query,
            prev_mel_group: out.mel,
            n_prev,
            step: state.step + 1,
        };
        Ok((out, next))
    }

    /// Builds the next step's input: ground truth where `teacher[b]`, else
    /// the model's own (detached) prediction.
    pub fn next_input<'t>(own: Var<'t>, truth: Tensor, teacher: &[bool]) -> Result<Var<'t>> {
        if own.shape() != truth.shape() {
            return Err(Error::shape("next_input", &own.shape(), truth.shape()));
        }
        let tape = own.tape();
        if teacher.iter().all(|&t| t) {
            return Ok(tape.constant(truth));
        }
        tape.constant(truth).select_rows(teacher, own.detach())
    }
}
