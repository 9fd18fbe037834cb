//! Command-line front end: data preparation, tokenizer and model training,
//! translation, scoring and multi-seed experiments.

pub mod experiment;
pub mod spec;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use nmt_core::corpus::{
    clean, load_parallel, read_lines, read_split, split, stats, write_lines, write_split, CleaningConfig,
    ContractionTable, Direction,
};
use nmt_core::eval::{text_bleu, Bleu, DecodeOptions, Translator};
use nmt_core::kv::KeyValues;
use nmt_core::protocols::{zero_shot_eval, TrainConfig};
use nmt_core::subword::{BpeOptions, SubwordModel};
use nmt_core::{Error, ErrorClass, Result};

use crate::experiment::{run_experiment, ExperimentManifest};
use crate::spec::{execute, load_with_tokenizers, RunSpec, BEST_CHECKPOINT, FINAL_CHECKPOINT, RUN_KEYS};

#[derive(Parser, Debug)]
#[command(name = "nmt", version, about = "Low-resource transformer translation toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Clean a raw parallel corpus and split it 14:3:3 into train/valid/test.
    Prepare {
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        tgt: PathBuf,
        /// Direction such as `en-zu`.
        #[arg(long)]
        langs: Direction,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 80)]
        max_len: usize,
        /// Contraction table for the source side (defaults to the bundled English table).
        #[arg(long)]
        src_rules: Option<PathBuf>,
        /// Contraction table for the target side (none by default).
        #[arg(long)]
        tgt_rules: Option<PathBuf>,
        /// Skip contraction expansion on the source side.
        #[arg(long)]
        no_contractions: bool,
    },
    /// Learn a BPE model from one or more text files.
    TrainSubword {
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long, default_value_t = 8000)]
        vocab_size: usize,
        /// Comma-separated language codes that get `<2xx>` tags.
        #[arg(long, value_delimiter = ',')]
        languages: Vec<String>,
        #[arg(long)]
        lowercase: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model from a `key = value` config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Translate a file line by line.
    Translate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        target_lang: Option<String>,
        #[arg(long, default_value_t = 4)]
        beam: usize,
        #[arg(long, default_value_t = 0.6)]
        length_penalty: f64,
        #[arg(long)]
        max_len: Option<usize>,
    },
    /// Corpus BLEU of a checkpoint on a split, or of a hypothesis file.
    Evaluate {
        #[arg(long, conflicts_with = "hyp")]
        checkpoint: Option<PathBuf>,
        /// Split directory produced by `prepare`.
        #[arg(long, requires = "checkpoint")]
        split: Option<PathBuf>,
        /// Partition to score.
        #[arg(long, default_value = "test")]
        part: String,
        #[arg(long, requires = "reference")]
        hyp: Option<PathBuf>,
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        beam: usize,
        #[arg(long, default_value_t = 0.6)]
        length_penalty: f64,
        /// Add-one smoothing for orders 2–4.
        #[arg(long)]
        smooth: bool,
    },
    /// Run every protocol × seed cell of a manifest and write the report.
    Experiment {
        #[arg(long)]
        manifest: PathBuf,
        /// Overrides the manifest's worker count.
        #[arg(long)]
        workers: Option<usize>,
    },
}

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Usage => 1,
        ErrorClass::Data => 2,
        ErrorClass::Numeric => 3,
    }
}

fn describe(b: &Bleu) -> String {
    format!(
        "BLEU = {:.2}  precisions {:.1}/{:.1}/{:.1}/{:.1}  BP = {:.3}  (hyp {}, ref {})",
        b.score,
        100.0 * b.precisions[0],
        100.0 * b.precisions[1],
        100.0 * b.precisions[2],
        100.0 * b.precisions[3],
        b.brevity_penalty,
        b.hyp_len,
        b.ref_len
    )
}

pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let w = |e: std::io::Error| Error::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    };
    match cli.command {
        Command::Prepare {
            src,
            tgt,
            langs,
            seed,
            out: dir,
            max_len,
            src_rules,
            tgt_rules,
            no_contractions,
        } => {
            let raw = load_parallel(&src, &tgt, langs)?;
            let rules = CleaningConfig {
                src_contractions: match (&src_rules, no_contractions) {
                    (Some(p), _) => ContractionTable::load(p)?,
                    (None, true) => ContractionTable::empty(),
                    (None, false) => ContractionTable::english(),
                },
                tgt_contractions: match &tgt_rules {
                    Some(p) => ContractionTable::load(p)?,
                    None => ContractionTable::empty(),
                },
                max_len,
            };
            let cleaned = clean(&raw, &rules);
            let s = split(&cleaned, seed)?;
            write_split(&s, &dir)?;
            let st = stats(&cleaned);
            writeln!(out, "direction\t{}", cleaned.direction).map_err(w)?;
            writeln!(out, "raw_pairs\t{}", raw.len()).map_err(w)?;
            writeln!(out, "clean_pairs\t{}", cleaned.len()).map_err(w)?;
            writeln!(out, "source_types\t{}", st.source_types).map_err(w)?;
            writeln!(out, "target_types\t{}", st.target_types).map_err(w)?;
            writeln!(out, "train\t{}\nvalid\t{}\ntest\t{}", s.train.len(), s.valid.len(), s.test.len()).map_err(w)?;
            for n in &cleaned.notes {
                writeln!(err, "{n}").map_err(w)?;
            }
        }
        Command::TrainSubword {
            input,
            vocab_size,
            languages,
            lowercase,
            out: path,
        } => {
            let mut lines = Vec::new();
            for p in &input {
                lines.extend(read_lines(p)?);
            }
            let model = SubwordModel::train(
                &lines,
                &BpeOptions {
                    vocab_size,
                    lowercase,
                    languages,
                },
            )?;
            model.save(&path)?;
            writeln!(
                out,
                "vocab {}  merges {}  hash {}",
                model.vocab_size(),
                model.merges().len(),
                model.content_hash()
            )
            .map_err(w)?;
        }
        Command::Train { config, out: out_dir } => {
            let kv = KeyValues::load(&config)?;
            kv.reject_unknown(|k| RUN_KEYS.contains(&k) || TrainConfig::KEYS.contains(&k))?;
            let base = config.parent().unwrap_or(Path::new("."));
            let spec = RunSpec::from_kv(&kv, base, true)?;
            let dir = match out_dir {
                Some(d) => d,
                None => base.join(kv.require("output_dir")?),
            };
            let outcome = execute(&spec, &dir, None)?;
            writeln!(
                out,
                "trained {} steps{}; best validation loss {}",
                outcome.steps,
                if outcome.stopped_early { " (early stop)" } else { "" },
                outcome.best_valid_loss.map_or("n/a".to_string(), |v| format!("{v:.4}"))
            )
            .map_err(w)?;
            writeln!(out, "{}", dir.join(FINAL_CHECKPOINT).display()).map_err(w)?;
            writeln!(out, "{}", dir.join(BEST_CHECKPOINT).display()).map_err(w)?;
        }
        Command::Translate {
            checkpoint,
            input,
            output,
            target_lang,
            beam,
            length_penalty,
            max_len,
        } => {
            let (ck, tok) = load_with_tokenizers(&checkpoint)?;
            let target_lang = match (ck.is_multilingual(), target_lang) {
                (true, None) => {
                    return Err(Error::Usage(
                        "multilingual checkpoint: --target-lang is required".into(),
                    ))
                }
                (false, Some(l)) => {
                    writeln!(err, "warning: bilingual checkpoint, ignoring --target-lang {l}").map_err(w)?;
                    None
                }
                (_, l) => l,
            };
            let model = ck.model()?;
            let lines = read_lines(&input)?;
            let translator = Translator {
                model: &model,
                tokenizers: &tok,
                target_lang,
                options: DecodeOptions {
                    beam_size: beam,
                    length_penalty,
                    max_len,
                    ..DecodeOptions::default()
                },
            };
            let hyps = translator.translate_all(&lines)?;
            write_lines(&output, hyps.iter().map(String::as_str))?;
        }
        Command::Evaluate {
            checkpoint,
            split: split_dir,
            part,
            hyp,
            reference,
            beam,
            length_penalty,
            smooth,
        } => {
            let options = DecodeOptions {
                beam_size: beam,
                length_penalty,
                ..DecodeOptions::default()
            };
            let bleu = match (checkpoint, split_dir, hyp, reference) {
                (_, _, Some(h), Some(r)) => text_bleu(&read_lines(&h)?, &read_lines(&r)?, smooth)?,
                (Some(c), Some(d), _, _) => {
                    let (ck, tok) = load_with_tokenizers(&c)?;
                    let s = read_split(&d)?;
                    let corpus = match part.as_str() {
                        "train" => s.train,
                        "valid" => s.valid,
                        "test" => s.test,
                        other => return Err(Error::Usage(format!("unknown partition {other:?}"))),
                    };
                    let dir = corpus.direction.clone();
                    if ck.is_multilingual() && !ck.directions.contains(&dir) {
                        writeln!(err, "{dir} is untrained: zero-shot evaluation").map_err(w)?;
                        zero_shot_eval(&ck, &tok, &dir, &corpus, options)?.runs[0].bleu.clone()
                    } else {
                        let model = ck.model()?;
                        Translator {
                            model: &model,
                            tokenizers: &tok,
                            target_lang: ck.is_multilingual().then(|| dir.tgt.clone()),
                            options,
                        }
                        .bleu(&corpus, smooth)?
                    }
                }
                _ => {
                    return Err(Error::Usage(
                        "give --checkpoint with --split, or --hyp with --reference".into(),
                    ))
                }
            };
            writeln!(out, "{}", describe(&bleu)).map_err(w)?;
        }
        Command::Experiment { manifest, workers } => {
            let mut m = ExperimentManifest::load(&manifest)?;
            if let Some(n) = workers {
                m.workers = n.max(1);
            }
            let result = run_experiment(&m)?;
            write!(out, "{}", result.table).map_err(w)?;
            for (label, seed, e) in &result.failures {
                writeln!(err, "run {label} seed {seed} failed: {e}").map_err(w)?;
            }
        }
    }
    Ok(())
}

/// Parses arguments, runs, and maps the outcome onto an exit status:
/// 0 success, 1 usage or configuration, 2 data, 3 numeric failure.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{e}");
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}
