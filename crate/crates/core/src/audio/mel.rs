use super::{DspConfig, LinearSpectrogram, MelSpectrogram};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// HTK mel scale.
pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters `[n_mels × (n_fft/2 + 1)]` with unit peak.
#[derive(Clone, Debug, PartialEq)]
pub struct MelFilterbank {
    weights: Tensor,
    /// `n_mels + 2` edge frequencies in Hz; filter `k` spans `edges[k]..edges[k+2]`.
    edges: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(sr: u32, n_fft: usize, n_mels: usize, fmin: f64, fmax: f64) -> Result<Self> {
        let nyquist = sr as f64 / 2.0;
        if !(0.0 <= fmin && fmin < fmax && fmax <= nyquist) {
            return Err(Error::Input(format!(
                "invalid mel range fmin={fmin} fmax={fmax} for sample rate {sr}"
            )));
        }
        if n_mels == 0 || n_fft < 2 {
            return Err(Error::Input(
                "mel filterbank needs n_mels > 0 and n_fft >= 2".into(),
            ));
        }
        let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bins = n_fft / 2 + 1;
        let mut fb = Self {
            weights: Tensor::zeros(&[n_mels, bins]),
            edges,
        };
        for k in 0..n_mels {
            for b in 0..bins {
                let f = b as f64 * sr as f64 / n_fft as f64;
                let w = fb.response(k, f);
                fb.weights.set2(k, b, w);
            }
        }
        Ok(fb)
    }

    pub fn from_config(cfg: &DspConfig) -> Result<Self> {
        Self::new(cfg.sample_rate, cfg.n_fft, cfg.n_mels, cfg.fmin, cfg.fmax)
    }

    /// Response of filter `k` at frequency `f` Hz.
    pub fn response(&self, k: usize, f: f64) -> f64 {
        let (l, c, r) = (self.edges[k], self.edges[k + 1], self.edges[k + 2]);
        let up = (f - l) / (c - l);
        let down = (r - f) / (r - c);
        up.min(down).max(0.0)
    }

    pub fn center_hz(&self, k: usize) -> f64 {
        self.edges[k + 1]
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn n_mels(&self) -> usize {
        self.weights.shape()[0]
    }

    /// `weights × mags`, before any log compression.
    pub fn apply(&self, lin: &LinearSpectrogram) -> Result<Tensor> {
        let (bins, frames) = lin.dims2()?;
        let (mels, fb_bins) = self.weights.dims2()?;
        if bins != fb_bins {
            return Err(Error::shape("to_mel", self.weights.shape(), lin.shape()));
        }
        let mut out = vec![0.0; mels * frames];
        for m in 0..mels {
            let row = &mut out[m * frames..(m + 1) * frames];
            for b in 0..bins {
                let w = self.weights.get2(m, b);
                if w != 0.0 {
                    crate::autodiff::axpy(w, lin.row_slice(b), row);
                }
            }
        }
        Ok(Tensor::from_parts(vec![mels, frames], out))
    }
}

pub fn mel_filterbank(
    sr: u32,
    n_fft: usize,
    n_mels: usize,
    fmin: f64,
    fmax: f64,
) -> Result<MelFilterbank> {
    MelFilterbank::new(sr, n_fft, n_mels, fmin, fmax)
}

/// `20 log10(max(x, floor))` elementwise.
pub fn amp_to_db(x: &Tensor, floor: f64) -> Tensor {
    x.map(|v| 20.0 * v.max(floor).log10())
}

/// Maps `[min_db, ref_db]` affinely onto `[0, 1]` and clips.
pub fn normalize_db(db: &Tensor, cfg: &DspConfig) -> Tensor {
    let span = cfg.ref_db - cfg.min_db;
    db.map(|v| ((v - cfg.min_db) / span).clamp(0.0, 1.0))
}

/// Inverse of `normalize_db(amp_to_db(..))` for values inside the range.
pub fn denormalize_to_amp(norm: &Tensor, cfg: &DspConfig) -> Tensor {
    let span = cfg.ref_db - cfg.min_db;
    norm.map(|v| {
        let db = v.clamp(0.0, 1.0) * span + cfg.min_db;
        10f64.powf(db / 20.0)
    })
}

/// Log-compressed mel values in dB, before normalization.
pub fn to_mel_db(lin: &LinearSpectrogram, fb: &MelFilterbank, cfg: &DspConfig) -> Result<Tensor> {
    Ok(amp_to_db(&fb.apply(lin)?, cfg.log_floor))
}

/// Normalized log-mel spectrogram with entries in `[0, 1]`.
pub fn to_mel(
    lin: &LinearSpectrogram,
    fb: &MelFilterbank,
    cfg: &DspConfig,
) -> Result<MelSpectrogram> {
    Ok(normalize_db(&to_mel_db(lin, fb, cfg)?, cfg))
}

/// Normalized log-magnitude linear spectrogram, the decoder's `S` target.
pub fn normalize_linear(lin: &LinearSpectrogram, cfg: &DspConfig) -> Tensor {
    normalize_db(&amp_to_db(lin, cfg.log_floor), cfg)
}
