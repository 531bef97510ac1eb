//! Guided versus unguided training from identical seeds, measuring how soon
//! each arm's attention becomes diagonal.

use std::collections::VecDeque;
use std::fmt;

use crate::autodiff::Tensor;
use crate::data::Utterance;
use crate::error::Result;
use crate::train::{LogRecord, TrainConfig, Trainer};

pub const DIAG_THRESHOLD: f64 = 0.5;
/// Trailing window over which per-batch diagonal mass is averaged.
pub const DIAG_WINDOW: usize = 10;

#[derive(Clone, Debug)]
pub struct ArmResult {
    pub guided_weight: f64,
    /// First step whose trailing-mean diagonal mass reached the threshold.
    pub steps_to_threshold: Option<u64>,
    pub steps_run: u64,
    pub logs: Vec<LogRecord>,
    /// Teacher-forced alignment of the probe utterance at the snapshot step.
    pub probe_alignment: Tensor,
}

#[derive(Clone, Debug)]
pub struct AlignExperiment {
    pub guided: ArmResult,
    pub unguided: ArmResult,
    pub budget: u64,
    pub snapshot_step: u64,
    pub probe_id: String,
}

impl AlignExperiment {
    /// `unguided / guided` steps, with an arm that never crossed counted at
    /// the budget. `None` when the guided arm never crossed.
    pub fn ratio(&self) -> Option<f64> {
        let g = self.guided.steps_to_threshold? as f64;
        let u = self.unguided.steps_to_threshold.unwrap_or(self.budget) as f64;
        Some(u / g)
    }

    /// True when the unguided count is a lower bound (it never crossed).
    pub fn ratio_is_lower_bound(&self) -> bool {
        self.unguided.steps_to_threshold.is_none()
    }
}

impl fmt::Display for AlignExperiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |s: Option<u64>| {
            s.map_or_else(
                || format!("not reached in {}", self.budget),
                |s| s.to_string(),
            )
        };
        writeln!(
            f,
            "threshold: trailing-{DIAG_WINDOW} mean diagonal mass >= {DIAG_THRESHOLD}"
        )?;
        writeln!(
            f,
            "guided   (lambda={}): {}",
            self.guided.guided_weight,
            show(self.guided.steps_to_threshold)
        )?;
        writeln!(
            f,
            "unguided (lambda=0): {}",
            show(self.unguided.steps_to_threshold)
        )?;
        match self.ratio() {
            Some(r) if self.ratio_is_lower_bound() => writeln!(f, "ratio: >= {r:.2}")?,
            Some(r) => writeln!(f, "ratio: {r:.2}")?,
            None => writeln!(f, "ratio: undefined (guided arm did not reach threshold)")?,
        }
        write!(
            f,
            "alignments of {} captured at step {}",
            self.probe_id, self.snapshot_step
        )
    }
}

struct Arm {
    trainer: Trainer,
    window: VecDeque<f64>,
    crossed: Option<u64>,
    logs: Vec<LogRecord>,
}

impl Arm {
    fn new(cfg: &TrainConfig, guided_weight: f64) -> Result<Self> {
        let cfg = TrainConfig {
            guided_weight,
            ..cfg.clone()
        };
        let mut trainer = Trainer::new(cfg)?;
        trainer.log_attn = guided_weight != 0.0;
        Ok(Self {
            trainer,
            window: VecDeque::new(),
            crossed: None,
            logs: Vec::new(),
        })
    }

    fn step(&mut self, corpus: &[Utterance]) -> Result<()> {
        let rec = self.trainer.train_step(corpus)?;
        self.window.push_back(rec.diag);
        if self.window.len() > DIAG_WINDOW {
            self.window.pop_front();
        }
        let mean = self.window.iter().sum::<f64>() / self.window.len() as f64;
        if self.crossed.is_none() && self.window.len() == DIAG_WINDOW && mean >= DIAG_THRESHOLD {
            self.crossed = Some(rec.step);
        }
        self.logs.push(rec);
        Ok(())
    }

    fn probe(&self, utt: &Utterance) -> Result<Tensor> {
        self.trainer.probe_alignment(utt)
    }

    fn finish(self, probe_alignment: Tensor) -> ArmResult {
        ArmResult {
            guided_weight: self.trainer.config.guided_weight,
            steps_to_threshold: self.crossed,
            steps_run: self.trainer.step,
            logs: self.logs,
            probe_alignment,
        }
    }
}

/// Trains a guided (`cfg.guided_weight`) and an unguided arm in lockstep for
/// at most `budget` steps. Alignments of the shortest utterance are
/// snapshotted for both arms when the guided arm first crosses the threshold
/// (or at the end). Training stops early once both arms have crossed; the
/// guided arm stops at the snapshot.
pub fn align_experiment(
    cfg: &TrainConfig,
    corpus: &[Utterance],
    budget: u64,
) -> Result<AlignExperiment> {
    let mut guided = Arm::new(cfg, cfg.guided_weight)?;
    let mut unguided = Arm::new(cfg, 0.0)?;
    let probe = corpus
        .iter()
        .min_by_key(|u| (u.frames(), u.id.clone()))
        .ok_or_else(|| crate::Error::Corpus("empty corpus".into()))?;
    let mut snapshot: Option<(u64, Tensor, Tensor)> = None;
    for step in 1..=budget {
        if snapshot.is_none() {
            guided.step(corpus)?;
        }
        if unguided.crossed.is_none() {
            unguided.step(corpus)?;
        }
        if snapshot.is_none() && (guided.crossed.is_some() || step == budget) {
            snapshot = Some((step, guided.probe(probe)?, unguided.probe(probe)?));
        }
        if snapshot.is_some() && unguided.crossed.is_some() {
            break;
        }
    }
    let (snapshot_step, ga, ua) = match snapshot {
        Some(s) => s,
        None => (0, guided.probe(probe)?, unguided.probe(probe)?),
    };
    Ok(AlignExperiment {
        guided: guided.finish(ga),
        unguided: unguided.finish(ua),
        budget,
        snapshot_step,
        probe_id: probe.id.clone(),
    })
}
