//! Waveform and spectrogram processing.

mod griffin_lim;
mod mel;
mod mspc;
mod stft;
mod wav;

pub use griffin_lim::{griffin_lim, griffin_lim_traced, spectral_convergence, GriffinLimTrace};
pub use mel::{
    amp_to_db, denormalize_to_amp, hz_to_mel, mel_filterbank, mel_to_hz, normalize_db,
    normalize_linear, to_mel, to_mel_db, MelFilterbank,
};
pub use mspc::{decode_mspc, encode_mspc, read_mspc, write_mspc, MSPC_MAGIC, MSPC_VERSION};
pub use stft::{hann, stft, Stft};
pub use wav::{decode_wav, encode_wav, wav_info, wav_read, wav_write, WavInfo, Waveform};

use crate::autodiff::Tensor;

/// Magnitude spectrogram `[n_fft/2 + 1 bins × frames]`.
pub type LinearSpectrogram = Tensor;
/// Normalized log-mel spectrogram `[n_mels × frames]`, entries in `[0, 1]`.
pub type MelSpectrogram = Tensor;

/// Framing, filterbank and normalization constants.
#[derive(Clone, Debug, PartialEq)]
pub struct DspConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop_length: usize,
    pub win_length: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
    pub min_db: f64,
    pub ref_db: f64,
    pub griffin_lim_iters: usize,
    /// Extrapolation weight on successive projections; 0 is the classic
    /// alternating-projection update.
    pub griffin_lim_momentum: f64,
}

impl Default for DspConfig {
    fn default() -> Self {
        Self {
            sample_rate: 22050,
            n_fft: 1024,
            hop_length: 256,
            win_length: 1024,
            n_mels: 80,
            fmin: 0.0,
            fmax: 8000.0,
            log_floor: 1e-5,
            min_db: -100.0,
            ref_db: 20.0,
            griffin_lim_iters: 60,
            griffin_lim_momentum: 0.99,
        }
    }
}

impl DspConfig {
    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Stable text form, used to key the feature cache.
    pub fn fingerprint(&self) -> String {
        format!(
            "sr={} n_fft={} hop={} win={} n_mels={} fmin={} fmax={} floor={} min_db={} ref_db={}",
            self.sample_rate,
            self.n_fft,
            self.hop_length,
            self.win_length,
            self.n_mels,
            self.fmin,
            self.fmax,
            self.log_floor,
            self.min_db,
            self.ref_db
        )
    }
}
