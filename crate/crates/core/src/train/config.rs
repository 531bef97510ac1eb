use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::audio::DspConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;

/// Training hyperparameters. Serialized as `key = value` lines.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub tf_start: f64,
    pub tf_end: f64,
    pub tf_anneal_epochs: usize,
    pub guided_weight: f64,
    pub guided_g: f64,
    pub grad_clip: f64,
    pub seed: u64,
    pub d: usize,
    pub r: usize,
    pub stop_pos_weight: f64,
    pub prenet_dropout: f64,
    pub query_feedback: bool,
    /// Stop after this many optimizer steps; 0 means run all epochs.
    pub max_steps: usize,
    /// Write a checkpoint every this many steps; 0 disables periodic saves.
    pub checkpoint_every: usize,
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop_length: usize,
    pub win_length: usize,
    pub n_mels: usize,
    pub fmax: f64,
    pub griffin_lim_iters: usize,
    pub griffin_lim_momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let dsp = DspConfig::default();
        Self {
            lr: 1e-4,
            batch_size: 8,
            epochs: 300,
            tf_start: 1.0,
            tf_end: 0.2,
            tf_anneal_epochs: 300,
            guided_weight: 1.0,
            guided_g: 0.2,
            grad_clip: 1.0,
            seed: 0,
            d: 256,
            r: 5,
            stop_pos_weight: 5.0,
            prenet_dropout: 0.5,
            query_feedback: false,
            max_steps: 0,
            checkpoint_every: 1000,
            sample_rate: dsp.sample_rate,
            n_fft: dsp.n_fft,
            hop_length: dsp.hop_length,
            win_length: dsp.win_length,
            n_mels: dsp.n_mels,
            fmax: dsp.fmax,
            griffin_lim_iters: dsp.griffin_lim_iters,
            griffin_lim_momentum: dsp.griffin_lim_momentum,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("line {line}: invalid value {value:?} for {key}")))
}

impl TrainConfig {
    /// Parses `key = value` lines; `#` starts a comment. Keys not present keep
    /// their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {line_no}: expected `key = value`, got {line:?}"
                ))
            })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "lr" => c.lr = parse(key, value, line_no)?,
                "batch_size" => c.batch_size = parse(key, value, line_no)?,
                "epochs" => c.epochs = parse(key, value, line_no)?,
                "tf_start" => c.tf_start = parse(key, value, line_no)?,
                "tf_end" => c.tf_end = parse(key, value, line_no)?,
                "tf_anneal_epochs" => c.tf_anneal_epochs = parse(key, value, line_no)?,
                "guided_weight" => c.guided_weight = parse(key, value, line_no)?,
                "guided_g" => c.guided_g = parse(key, value, line_no)?,
                "grad_clip" => c.grad_clip = parse(key, value, line_no)?,
                "seed" => c.seed = parse(key, value, line_no)?,
                "d" => c.d = parse(key, value, line_no)?,
                "r" => c.r = parse(key, value, line_no)?,
                "stop_pos_weight" => c.stop_pos_weight = parse(key, value, line_no)?,
                "prenet_dropout" => c.prenet_dropout = parse(key, value, line_no)?,
                "query_feedback" => c.query_feedback = parse(key, value, line_no)?,
                "max_steps" => c.max_steps = parse(key, value, line_no)?,
                "checkpoint_every" => c.checkpoint_every = parse(key, value, line_no)?,
                "sample_rate" => c.sample_rate = parse(key, value, line_no)?,
                "n_fft" => c.n_fft = parse(key, value, line_no)?,
                "hop_length" => c.hop_length = parse(key, value, line_no)?,
                "win_length" => c.win_length = parse(key, value, line_no)?,
                "n_mels" => c.n_mels = parse(key, value, line_no)?,
                "fmax" => c.fmax = parse(key, value, line_no)?,
                "griffin_lim_iters" => c.griffin_lim_iters = parse(key, value, line_no)?,
                "griffin_lim_momentum" => c.griffin_lim_momentum = parse(key, value, line_no)?,
                _ => {
                    return Err(Error::Config(format!(
                        "line {line_no}: unknown key {key:?}"
                    )))
                }
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Canonical text form; `parse(to_text())` round-trips exactly.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        // `{:?}` prints the shortest f64 that parses back to the same bits.
        put("lr", format!("{:?}", self.lr));
        put("batch_size", self.batch_size.to_string());
        put("epochs", self.epochs.to_string());
        put("tf_start", format!("{:?}", self.tf_start));
        put("tf_end", format!("{:?}", self.tf_end));
        put("tf_anneal_epochs", self.tf_anneal_epochs.to_string());
        put("guided_weight", format!("{:?}", self.guided_weight));
        put("guided_g", format!("{:?}", self.guided_g));
        put("grad_clip", format!("{:?}", self.grad_clip));
        put("seed", self.seed.to_string());
        put("d", self.d.to_string());
        put("r", self.r.to_string());
        put("stop_pos_weight", format!("{:?}", self.stop_pos_weight));
        put("prenet_dropout", format!("{:?}", self.prenet_dropout));
        put("query_feedback", self.query_feedback.to_string());
        put("max_steps", self.max_steps.to_string());
        put("checkpoint_every", self.checkpoint_every.to_string());
        put("sample_rate", self.sample_rate.to_string());
        put("n_fft", self.n_fft.to_string());
        put("hop_length", self.hop_length.to_string());
        put("win_length", self.win_length.to_string());
        put("n_mels", self.n_mels.to_string());
        put("fmax", format!("{:?}", self.fmax));
        put("griffin_lim_iters", self.griffin_lim_iters.to_string());
        put(
            "griffin_lim_momentum",
            format!("{:?}", self.griffin_lim_momentum),
        );
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be > 0, got {}", self.lr));
        }
        if !(0.0 <= self.tf_end && self.tf_end <= self.tf_start && self.tf_start <= 1.0) {
            return bad(format!(
                "need 0 <= tf_end <= tf_start <= 1, got tf_start={} tf_end={}",
                self.tf_start, self.tf_end
            ));
        }
        if self.batch_size == 0 || self.d == 0 || self.r == 0 {
            return bad("batch_size, d and r must be positive".into());
        }
        if !(self.guided_weight >= 0.0) || !(self.guided_g > 0.0) {
            return bad("guided_weight must be >= 0 and guided_g > 0".into());
        }
        if !(self.grad_clip > 0.0) || !(self.stop_pos_weight > 0.0) {
            return bad("grad_clip and stop_pos_weight must be > 0".into());
        }
        if self.n_mels == 0 || self.hop_length == 0 || self.win_length > self.n_fft {
            return bad("need n_mels, hop_length > 0 and win_length <= n_fft".into());
        }
        if !(0.0..1.0).contains(&self.griffin_lim_momentum) {
            return bad(format!(
                "griffin_lim_momentum {} outside [0, 1)",
                self.griffin_lim_momentum
            ));
        }
        if !(self.fmax > 0.0 && self.fmax <= self.sample_rate as f64 / 2.0) {
            return bad(format!("fmax {} outside (0, sample_rate/2]", self.fmax));
        }
        Ok(())
    }

    /// Feature extraction settings.
    pub fn dsp_config(&self) -> DspConfig {
        DspConfig {
            sample_rate: self.sample_rate,
            n_fft: self.n_fft,
            hop_length: self.hop_length,
            win_length: self.win_length,
            n_mels: self.n_mels,
            fmax: self.fmax,
            griffin_lim_iters: self.griffin_lim_iters,
            griffin_lim_momentum: self.griffin_lim_momentum,
            ..DspConfig::default()
        }
    }

    /// Model architecture implied by this configuration.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            d: self.d,
            r: self.r,
            prenet_dims: (self.d, self.d),
            prenet_dropout: self.prenet_dropout,
            query_feedback: self.query_feedback,
            n_mels: self.n_mels,
            n_bins: self.n_fft / 2 + 1,
            ..ModelConfig::default()
        }
    }
}

/// Linear decay from `tf_start` to `tf_end` over `tf_anneal_epochs`, then flat.
pub fn teacher_forcing_ratio(epoch: usize, cfg: &TrainConfig) -> f64 {
    if cfg.tf_anneal_epochs == 0 || epoch >= cfg.tf_anneal_epochs {
        return cfg.tf_end;
    }
    let frac = epoch as f64 / cfg.tf_anneal_epochs as f64;
    (cfg.tf_start - (cfg.tf_start - cfg.tf_end) * frac).max(cfg.tf_end)
}
