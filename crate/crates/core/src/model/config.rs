use crate::error::{Error, Result};

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    /// Model width: embedding, recurrent state, key, value and query size.
    pub d: usize,
    pub n_mels: usize,
    /// Linear-spectrogram bins (`n_fft / 2 + 1`).
    pub n_bins: usize,
    /// Frames predicted per decode step.
    pub r: usize,
    pub prenet_dims: (usize, usize),
    pub prenet_dropout: f64,
    /// Feed the previous query instead of the attention context into both
    /// recurrent cells.
    pub query_feedback: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: crate::data::CharVocab::default().len(),
            d: 256,
            n_mels: 80,
            n_bins: 513,
            r: 5,
            prenet_dims: (256, 256),
            prenet_dropout: 0.5,
            query_feedback: false,
        }
    }
}

impl ModelConfig {
    /// A reduced configuration for fast experiments and tests.
    pub fn tiny(d: usize) -> Self {
        Self {
            d,
            prenet_dims: (d, d),
            ..Self::default()
        }
    }

    pub fn mel_group(&self) -> usize {
        self.n_mels * self.r
    }

    pub fn linear_group(&self) -> usize {
        self.n_bins * self.r
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.vocab_size,
            self.d,
            self.n_mels,
            self.n_bins,
            self.r,
            self.prenet_dims.0,
            self.prenet_dims.1,
        ];
        if dims.contains(&0) {
            return Err(Error::Config(format!(
                "model dimensions must be positive: {self:?}"
            )));
        }
        if !(0.0..1.0).contains(&self.prenet_dropout) {
            return Err(Error::Config(format!(
                "prenet_dropout must be in [0, 1), got {}",
                self.prenet_dropout
            )));
        }
        Ok(())
    }
}
