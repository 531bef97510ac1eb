use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use melseq::audio::{read_mspc, write_mspc};
use melseq::data::{Corpus, CorpusOptions};
use melseq::eval::{
    align_experiment, generate_synthetic_corpus, gradcheck_report, synthetic_train_config,
    write_pgm, MosReport,
};
use melseq::model::Model;
use melseq::synth::{SynthOptions, Synthesizer};
use melseq::train::{load_checkpoint, TrainConfig, Trainer};
use melseq::Error;

#[derive(Parser)]
#[command(
    name = "melseq",
    version,
    about = "Character-to-spectrogram TTS toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on an LJSpeech-layout corpus.
    Train {
        /// `key = value` config file; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "run")]
        out: PathBuf,
        /// Drop the guided attention term.
        #[arg(long)]
        no_guided: bool,
        /// Keep only the K shortest utterances.
        #[arg(long)]
        max_utts: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_steps: Option<usize>,
        /// Continue from a checkpoint; its config wins over --config.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Synthesize speech from text.
    Synth {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        text: String,
        #[arg(long, default_value = "synth")]
        out: PathBuf,
        #[arg(long)]
        no_forced_attn: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        max_steps: usize,
    },
    /// Render an alignment matrix (`.mspc`, or the newest `*.align.mspc` in a directory) as PGM.
    PlotAttention {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mean opinion score with a 95% interval from `sample_id,rater_id,rating` rows.
    MosStats { ratings: PathBuf },
    /// Finite-difference audit of every gradient rule.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of consecutive seeds starting at --seed.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Train guided and unguided arms from one seed and compare alignment speed.
    AlignExperiment {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        steps: u64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        max_utts: usize,
        #[arg(long, default_value = "align_experiment")]
        out: PathBuf,
    },
    /// Print the parameter table for a config.
    Params {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Write a tone-per-character corpus plus a matching `train.conf`.
    MakeSyntheticCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Checksum(_) | Error::Version { .. } | Error::Format { .. } => 3,
            Error::Input(_)
            | Error::EmptyText
            | Error::Vocab(_)
            | Error::Config(_)
            | Error::Corpus(_)
            | Error::Io { .. } => 2,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn fail(code: u8, message: impl Into<String>) -> Failure {
    Failure {
        code,
        message: message.into(),
    }
}

fn bad_checkpoint(path: &Path, e: Error) -> Failure {
    fail(3, format!("cannot use checkpoint {}: {e}", path.display()))
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig, Failure> {
    Ok(match path {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    })
}

fn load_corpus(dir: &Path, cfg: &TrainConfig, max_utts: Option<usize>) -> Result<Corpus, Failure> {
    if !dir.is_dir() {
        return Err(fail(
            2,
            format!("corpus directory not found: {}", dir.display()),
        ));
    }
    let mut opts = CorpusOptions::new(cfg.dsp_config());
    opts.cache_dir = Some(match std::env::var_os("MELSEQ_CACHE") {
        Some(c) if !c.is_empty() => PathBuf::from(c),
        _ => dir.join(".melseq_cache"),
    });
    opts.max_utts = max_utts;
    Ok(Corpus::load(dir, &opts)?)
}

fn create_dir(dir: &Path) -> CmdResult {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e).into())
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Error::io(path, e).into()
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    config: Option<&Path>,
    corpus_dir: &Path,
    out: &Path,
    no_guided: bool,
    max_utts: Option<usize>,
    seed: Option<u64>,
    max_steps: Option<usize>,
    resume: Option<&Path>,
) -> CmdResult {
    let mut trainer = match resume {
        Some(p) => {
            let ckpt = load_checkpoint(p).map_err(|e| bad_checkpoint(p, e))?;
            Trainer::from_checkpoint(ckpt).map_err(|e| bad_checkpoint(p, e))?
        }
        None => {
            let mut cfg = load_config(config)?;
            if no_guided {
                cfg.guided_weight = 0.0;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            Trainer::new(cfg)?
        }
    };
    if let Some(m) = max_steps {
        trainer.config.max_steps = m;
    }
    let corpus = load_corpus(corpus_dir, &trainer.config, max_utts)?;
    create_dir(out)?;
    let log_path = out.join("train.log");
    let mut log = fs::OpenOptions::new()
        .create(true)
        .append(resume.is_some())
        .write(true)
        .truncate(resume.is_none())
        .open(&log_path)
        .map_err(io_err(&log_path))?;
    fs::write(out.join("config.txt"), trainer.config.to_text()).map_err(io_err(out))?;
    println!(
        "training {} parameters on {} utterances for {} steps",
        trainer.model.num_params(),
        corpus.len(),
        trainer.planned_steps(corpus.len())
    );
    let written = trainer.run(&corpus.utterances, Some(out), |rec| {
        println!("{rec}");
        writeln!(log, "{rec}").map_err(|e| Error::io(&log_path, e))
    })?;

    let probe = corpus
        .utterances
        .iter()
        .min_by_key(|u| (u.frames(), u.id.clone()))
        .expect("corpus is non-empty");
    let a = [trainer.probe_alignment(probe)?];
    write_mspc(out.join("final.align.mspc"), &a[0])?;
    write_pgm(out.join("final.align.pgm"), &a[0])?;
    for w in written {
        println!("wrote {}", w.display());
    }
    Ok(())
}

fn cmd_synth(
    ckpt_path: &Path,
    text: &str,
    out: &Path,
    no_forced: bool,
    seed: u64,
    max_steps: usize,
) -> CmdResult {
    if text.trim().is_empty() {
        return Err(fail(2, "--text is empty"));
    }
    let ckpt = load_checkpoint(ckpt_path).map_err(|e| bad_checkpoint(ckpt_path, e))?;
    let synth = Synthesizer::from_checkpoint(&ckpt).map_err(|e| bad_checkpoint(ckpt_path, e))?;
    let opts = SynthOptions {
        forced_incremental: !no_forced,
        seed,
        max_steps,
        ..SynthOptions::default()
    };
    let r = synth.synthesize(text, &opts)?;
    for p in r.write_outputs(out, "synth")? {
        println!("wrote {}", p.display());
    }
    match r.stop_step {
        Some(s) => println!("stopped after {s} steps ({} frames)", r.mel.shape()[1]),
        None => println!("warning: no stop token within {max_steps} steps"),
    }
    println!("forced steps: {}", r.forced_steps);
    Ok(())
}

fn newest_alignment(dir: &Path) -> Result<PathBuf, Failure> {
    let mut found: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".align.mspc"))
        .collect();
    found.sort_by_key(|p| (fs::metadata(p).and_then(|m| m.modified()).ok(), p.clone()));
    found
        .pop()
        .ok_or_else(|| fail(2, format!("no *.align.mspc files in {}", dir.display())))
}

fn cmd_plot(input: &Path, out: &Path) -> CmdResult {
    let file = if input.is_dir() {
        newest_alignment(input)?
    } else {
        input.to_path_buf()
    };
    let a = read_mspc(&file).map_err(|e| match e {
        Error::Io { .. } => Failure::from(e),
        other => fail(3, other.to_string()),
    })?;
    write_pgm(out, &a).map_err(|e| match e {
        Error::Input(m) => fail(3, format!("{}: {m}", file.display())),
        other => other.into(),
    })?;
    println!(
        "wrote {} ({} chars x {} steps)",
        out.display(),
        a.shape()[0],
        a.shape()[1]
    );
    Ok(())
}

fn cmd_gradcheck(seed: u64, seeds: u64, inject_fault: bool) -> CmdResult {
    let mut worst = (String::new(), 0.0f64, seed);
    for s in seed..seed + seeds.max(1) {
        let rep = gradcheck_report(s, inject_fault)?;
        println!("{rep}");
        let (name, e) = rep.worst();
        if e > worst.1 || e.is_nan() {
            worst = (name.to_string(), e, s);
        }
    }
    if worst.1 < melseq::eval::GRADCHECK_TOLERANCE {
        println!("PASS: max relative error {:.3e} < 1e-4", worst.1);
        Ok(())
    } else {
        Err(fail(
            1,
            format!(
                "gradient check failed: {} has relative error {:.3e} (seed {})",
                worst.0, worst.1, worst.2
            ),
        ))
    }
}

fn cmd_align(
    corpus_dir: &Path,
    steps: u64,
    seed: Option<u64>,
    config: Option<&Path>,
    max_utts: usize,
    out: &Path,
) -> CmdResult {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if cfg.guided_weight == 0.0 {
        cfg.guided_weight = 1.0;
    }
    let corpus = load_corpus(corpus_dir, &cfg, Some(max_utts))?;
    create_dir(out)?;
    let exp = align_experiment(&cfg, &corpus.utterances, steps)?;
    for (arm, name) in [(&exp.guided, "guided"), (&exp.unguided, "unguided")] {
        let log_path = out.join(format!("{name}.log"));
        let text: String = arm.logs.iter().map(|r| format!("{r}\n")).collect();
        fs::write(&log_path, text).map_err(io_err(&log_path))?;
        write_pgm(out.join(format!("{name}.align.pgm")), &arm.probe_alignment)?;
        write_mspc(out.join(format!("{name}.align.mspc")), &arm.probe_alignment)?;
    }
    let report = exp.to_string();
    fs::write(out.join("report.txt"), format!("{report}\n")).map_err(io_err(out))?;
    println!("{report}");
    Ok(())
}

fn cmd_params(config: Option<&Path>) -> CmdResult {
    let cfg = load_config(config)?;
    let model = Model::new(cfg.model_config(), cfg.seed)?;
    for (name, shape, n) in model.param_table() {
        println!("{name:<36} {:<14} {n}", format!("{shape:?}"));
    }
    println!("total {}", model.num_params());
    Ok(())
}

fn cmd_make_synthetic(out: &Path, n: usize, seed: u64) -> CmdResult {
    if n == 0 {
        return Err(fail(2, "--n must be positive"));
    }
    generate_synthetic_corpus(out, n, seed)?;
    let conf = out.join("train.conf");
    fs::write(&conf, synthetic_train_config().to_text()).map_err(io_err(&conf))?;
    println!(
        "wrote {n} utterances and {} under {}",
        conf.display(),
        out.display()
    );
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Train {
            config,
            corpus,
            out,
            no_guided,
            max_utts,
            seed,
            max_steps,
            resume,
        } => cmd_train(
            config.as_deref(),
            &corpus,
            &out,
            no_guided,
            max_utts,
            seed,
            max_steps,
            resume.as_deref(),
        ),
        Command::Synth {
            checkpoint,
            text,
            out,
            no_forced_attn,
            seed,
            max_steps,
        } => cmd_synth(&checkpoint, &text, &out, no_forced_attn, seed, max_steps),
        Command::PlotAttention { input, out } => cmd_plot(&input, &out),
        Command::MosStats { ratings } => {
            let rep = MosReport::load(&ratings)?;
            print!("{rep}");
            Ok(())
        }
        Command::Gradcheck {
            seed,
            seeds,
            inject_fault,
        } => cmd_gradcheck(seed, seeds, inject_fault),
        Command::AlignExperiment {
            corpus,
            steps,
            seed,
            config,
            max_utts,
            out,
        } => cmd_align(&corpus, steps, seed, config.as_deref(), max_utts, &out),
        Command::Params { config } => cmd_params(config.as_deref()),
        Command::MakeSyntheticCorpus { out, n, seed } => cmd_make_synthetic(&out, n, seed),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
