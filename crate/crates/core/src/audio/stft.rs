use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{DspConfig, LinearSpectrogram, Waveform};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Index into a signal of length `len` with reflect (no edge repeat) padding.
fn reflect(mut i: isize, len: usize) -> usize {
    let n = len as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

/// Short-time Fourier transform with fixed framing.
///
/// Frames are centered: the signal is reflect-padded by `n_fft / 2` on each
/// side, giving `1 + len / hop` frames.
pub struct Stft {
    n_fft: usize,
    hop: usize,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Stft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stft")
            .field("n_fft", &self.n_fft)
            .field("hop", &self.hop)
            .finish()
    }
}

pub type Spectrum = Vec<Vec<Complex<f64>>>;

impl Stft {
    pub fn new(cfg: &DspConfig) -> Self {
        let mut planner = FftPlanner::new();
        // The window spans the full FFT length.
        let mut window = hann(cfg.win_length);
        window.resize(cfg.n_fft, 0.0);
        Self {
            n_fft: cfg.n_fft,
            hop: cfg.hop_length,
            window,
            forward: planner.plan_fft_forward(cfg.n_fft),
            inverse: planner.plan_fft_inverse(cfg.n_fft),
        }
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn n_frames(&self, len: usize) -> usize {
        1 + len / self.hop
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    /// One-sided complex spectra, one `Vec` of `n_bins` per frame.
    pub fn analyze(&self, samples: &[f64]) -> Spectrum {
        let frames = self.n_frames(samples.len());
        let bins = self.n_bins();
        let half = (self.n_fft / 2) as isize;
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        let mut out = Vec::with_capacity(frames);
        for t in 0..frames {
            let start = (t * self.hop) as isize - half;
            for (j, b) in buf.iter_mut().enumerate() {
                let s = if samples.is_empty() {
                    0.0
                } else {
                    samples[reflect(start + j as isize, samples.len())]
                };
                *b = Complex::new(s * self.window[j], 0.0);
            }
            self.forward.process(&mut buf);
            out.push(buf[..bins].to_vec());
        }
        out
    }

    /// Weighted overlap-add inverse of [`Stft::analyze`].
    ///
    /// Returns `hop * (frames - 1)` samples.
    pub fn synthesize(&self, spec: &Spectrum) -> Vec<f64> {
        let frames = spec.len();
        if frames == 0 {
            return Vec::new();
        }
        let n = self.n_fft;
        let bins = self.n_bins();
        let total = n + self.hop * (frames - 1);
        let mut acc = vec![0.0; total];
        let mut wsum = vec![0.0; total];
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        for (t, frame) in spec.iter().enumerate() {
            buf[..bins].copy_from_slice(frame);
            for k in bins..n {
                buf[k] = buf[n - k].conj();
            }
            // Bins 0 and n/2 of a real signal are real.
            buf[0].im = 0.0;
            buf[n / 2].im = 0.0;
            self.inverse.process(&mut buf);
            let off = t * self.hop;
            for j in 0..n {
                let w = self.window[j];
                acc[off + j] += buf[j].re / n as f64 * w;
                wsum[off + j] += w * w;
            }
        }
        let half = n / 2;
        let len = self.hop * (frames - 1);
        (half..half + len)
            .map(|i| {
                if wsum[i] > 1e-11 {
                    acc[i] / wsum[i]
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Magnitude spectrogram `[bins × frames]`.
    pub fn magnitudes(&self, samples: &[f64]) -> LinearSpectrogram {
        spectrum_magnitudes(&self.analyze(samples))
    }
}

pub(crate) fn spectrum_magnitudes(spec: &Spectrum) -> Tensor {
    let frames = spec.len();
    let bins = spec.first().map_or(0, Vec::len);
    let mut data = vec![0.0; bins * frames];
    for (t, frame) in spec.iter().enumerate() {
        for (k, c) in frame.iter().enumerate() {
            data[k * frames + t] = c.norm();
        }
    }
    Tensor::from_parts(vec![bins, frames], data)
}

/// Magnitude STFT of a waveform.
pub fn stft(w: &Waveform, cfg: &DspConfig) -> Result<LinearSpectrogram> {
    if w.samples.len() < cfg.win_length {
        return Err(Error::Input(format!(
            "waveform has {} samples, shorter than one {}-sample window",
            w.samples.len(),
            cfg.win_length
        )));
    }
    Ok(Stft::new(cfg).magnitudes(&w.samples))
}
