use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use let_core::encoder::CharVocab;
use let_core::harness::{build_preprocessor, build_vocab, load_pairs, load_unlabelled, RunConfig, Session};
use let_core::lattice::CharSeq;

#[derive(Parser)]
#[command(
    name = "let-match",
    version,
    about = "Lattice graph transformer for Chinese short text matching"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set lr=0.001`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        config.apply_overrides(&self.overrides, Path::new("."))?;
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build the character vocabulary from the training TSV.
    Prepare {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output path; defaults to `vocab_path`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and write `metrics.jsonl` and `model.ckpt` to `out_dir`.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Accuracy, F1 and loss of a checkpoint on a labelled TSV.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Write one probability per input pair.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare tape gradients with finite differences on the first training pairs.
    Gradcheck {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 2)]
        pairs: usize,
        /// Coordinates sampled per parameter tensor.
        #[arg(long, default_value_t = 4)]
        samples: usize,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Print the word lattice of a sentence.
    LatticeDump {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        text: String,
        /// Graphviz output.
        #[arg(long)]
        dot: bool,
    },
}

fn vocab_for(config: &RunConfig) -> Result<CharVocab> {
    if let Some(p) = config.vocab_path.as_deref().filter(|p| p.exists()) {
        return Ok(CharVocab::load(p)?);
    }
    let train = config.require(&config.train_path, "train_path")?;
    Ok(build_vocab(&load_pairs(train)?))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Prepare { config, out } => {
            let config = config.load()?;
            let train = load_pairs(config.require(&config.train_path, "train_path")?)?;
            let vocab = build_vocab(&train);
            let out = out
                .or(config.vocab_path.clone())
                .context("no --out and vocab_path is unset")?;
            vocab.save(&out)?;
            println!("wrote {} entries to {}", vocab.len(), out.display());
        }
        Command::Train { config } => {
            let config = config.load()?;
            let out_dir = config.require(&config.out_dir, "out_dir")?.to_path_buf();
            fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
            let vocab = vocab_for(&config)?;
            let mut session = Session::new(config.clone(), vocab)?;
            let train = session.prepare(&load_pairs(config.require(&config.train_path, "train_path")?)?)?;
            let dev = match &config.dev_path {
                Some(p) => Some(session.prepare(&load_pairs(p)?)?),
                None => None,
            };
            let report = session.train(&train, dev.as_deref(), Some(&out_dir.join("metrics.jsonl")))?;
            for r in &report.records {
                println!(
                    "epoch {:>3} {:<5} acc {:.4} f1 {:.4} loss {:.4}",
                    r.epoch, r.split, r.acc, r.f1, r.loss
                );
            }
            let ckpt = out_dir.join("model.ckpt");
            session.save(&ckpt)?;
            println!("kept epoch {}; wrote {}", report.best_epoch, ckpt.display());
        }
        Command::Eval { checkpoint, data } => {
            let session = Session::from_checkpoint(&checkpoint)?;
            let m = session.evaluate(&session.prepare(&load_pairs(&data)?)?)?;
            println!("{}", serde_json_line(m.acc, m.f1, m.loss));
        }
        Command::Predict { checkpoint, data, out } => {
            let session = Session::from_checkpoint(&checkpoint)?;
            let pairs = load_unlabelled(&data)?
                .iter()
                .map(|(a, b)| session.prepare_pair(a, b))
                .collect::<let_core::Result<Vec<_>>>()?;
            let probs = session.predict(&pairs.iter().collect::<Vec<_>>())?;
            let text: String = probs.iter().map(|p| format!("{p}\n")).collect();
            match out {
                Some(p) => fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?,
                None => std::io::stdout().write_all(text.as_bytes())?,
            }
        }
        Command::Gradcheck {
            config,
            pairs,
            samples,
            tolerance,
        } => {
            let mut config = config.load()?;
            config.dropout = 0.0;
            let vocab = vocab_for(&config)?;
            let examples = load_pairs(config.require(&config.train_path, "train_path")?)?;
            let mut session = Session::new(config, vocab)?;
            let data = session.prepare(&examples[..pairs.min(examples.len())])?;
            let report = session.gradcheck(&data, samples, 0)?;
            let (path, idx) = report.worst.clone().unwrap_or_default();
            println!(
                "max relative error {:.3e} over {} coordinates (worst: {path}[{idx}]); max absolute error {:.3e}",
                report.max_rel_error,
                report.coordinates,
                report.max_abs_error()
            );
            return Ok(report.max_rel_error < tolerance);
        }
        Command::LatticeDump { config, text, dot } => {
            let config = config.load()?;
            let pre = build_preprocessor(&config)?;
            let text = CharSeq::new(&text);
            if text.is_empty() {
                bail!("empty text");
            }
            let lattice = pre.lattice(&text)?;
            if dot {
                print!("{}", lattice.to_dot());
            } else {
                for n in lattice.nodes() {
                    let senses = pre.kb().lookup(&n.surface).len();
                    println!("{}\t{}\t{}-{}\tsenses={senses}", n.id, n.surface, n.start, n.end);
                }
                for (a, b) in lattice.edges() {
                    println!("{a} -> {b}");
                }
            }
        }
    }
    Ok(true)
}

fn serde_json_line(acc: f64, f1: f64, loss: f64) -> String {
    format!("{{\"acc\":{acc},\"f1\":{f1},\"loss\":{loss}}}")
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
