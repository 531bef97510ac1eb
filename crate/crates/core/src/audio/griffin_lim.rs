use rustfft::num_complex::Complex;

use super::stft::{spectrum_magnitudes, Spectrum, Stft};
use super::{DspConfig, LinearSpectrogram, Waveform};
use crate::autodiff::Tensor;
use crate::error::Result;

/// `‖|STFT(x)| - target‖_F / ‖target‖_F`
pub fn spectral_convergence(estimate: &Tensor, target: &Tensor) -> f64 {
    let num: f64 = estimate
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    let den = target.sq_norm();
    if den == 0.0 {
        return if num == 0.0 { 0.0 } else { f64::INFINITY };
    }
    (num / den).sqrt()
}

/// Result of a traced Griffin-Lim run.
#[derive(Clone, Debug)]
pub struct GriffinLimTrace {
    pub waveform: Waveform,
    /// Spectral convergence after each iteration (index 0 is iteration 1).
    pub errors: Vec<f64>,
}

/// Recovers a waveform whose STFT magnitude approximates `mags`
/// (`[bins × frames]`), starting from zero phase.
///
/// Each iteration projects onto consistent spectrograms (ISTFT then STFT),
/// then onto the target magnitudes, and extrapolates by
/// `cfg.griffin_lim_momentum` times the change from the previous projection.
pub fn griffin_lim(mags: &LinearSpectrogram, iters: usize, cfg: &DspConfig) -> Result<Waveform> {
    Ok(griffin_lim_traced(mags, iters, cfg)?.waveform)
}

pub fn griffin_lim_traced(
    mags: &LinearSpectrogram,
    iters: usize,
    cfg: &DspConfig,
) -> Result<GriffinLimTrace> {
    let (bins, frames) = mags.dims2()?;
    let stft = Stft::new(cfg);
    if bins != stft.n_bins() {
        return Err(crate::Error::shape(
            "griffin_lim",
            mags.shape(),
            &[stft.n_bins(), frames],
        ));
    }
    let iters = iters.max(1);
    if frames == 0 {
        return Ok(GriffinLimTrace {
            waveform: Waveform::silence(0, cfg.sample_rate),
            errors: vec![0.0; iters],
        });
    }
    let len = cfg.hop_length * (frames - 1);
    if mags.data().iter().all(|&m| m == 0.0) {
        return Ok(GriffinLimTrace {
            waveform: Waveform::silence(len, cfg.sample_rate),
            errors: vec![0.0; iters],
        });
    }

    let mut spec: Spectrum = (0..frames)
        .map(|t| {
            (0..bins)
                .map(|k| Complex::new(mags.get2(k, t), 0.0))
                .collect()
        })
        .collect();
    let momentum = cfg.griffin_lim_momentum;
    let mut prev = spec.clone();
    let mut errors = Vec::with_capacity(iters);
    let mut signal = Vec::new();
    for _ in 0..iters {
        signal = stft.synthesize(&spec);
        let rebuilt = stft.analyze(&signal);
        errors.push(spectral_convergence(&spectrum_magnitudes(&rebuilt), mags));
        for (t, frame) in rebuilt.iter().enumerate() {
            for (k, c) in frame.iter().enumerate() {
                let norm = c.norm();
                let phase = if norm > 0.0 {
                    c / norm
                } else {
                    Complex::new(1.0, 0.0)
                };
                let projected = phase * mags.get2(k, t);
                spec[t][k] = projected + (projected - prev[t][k]) * momentum;
                prev[t][k] = projected;
            }
        }
    }
    Ok(GriffinLimTrace {
        waveform: Waveform::new(signal, cfg.sample_rate),
        errors,
    })
}
