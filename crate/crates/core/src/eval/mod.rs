//! Reporting utilities behind the command-line tools.

mod experiment;
mod gradcheck;
mod mos;
mod pgm;
mod synthetic;

pub use experiment::{align_experiment, AlignExperiment, ArmResult, DIAG_THRESHOLD, DIAG_WINDOW};
pub use gradcheck::{gradcheck_report, GradcheckReport, GRADCHECK_TOLERANCE};
pub use mos::{mos_stat, parse_ratings, MosReport, MosStat, Rating};
pub use pgm::{decode_pgm, render_pgm, write_pgm};
pub use synthetic::{
    generate_synthetic_corpus, render_text, synthetic_train_config, SYNTHETIC_SAMPLE_RATE,
};
