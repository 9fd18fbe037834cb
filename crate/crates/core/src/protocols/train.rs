use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{Checkpoint, TokenizerRef};
use super::config::TrainConfig;
use super::data::{encode_corpus, nll_sum, Batcher, Tokenizers, TrainData};
use super::optim::{noam_lr, Adam};
use super::Protocol;
use crate::corpus::SplitCorpus;
use crate::error::{Error, Result};
use crate::tensor::{Reduction, Tape};
use crate::transformer::{ModelConfig, TransformerModel};

/// Independent random streams derived from one run seed.
pub(crate) fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) const INIT_STREAM: u64 = 0;
pub(crate) const BATCH_STREAM: u64 = 1;
pub(crate) const DROPOUT_STREAM: u64 = 2;
pub(crate) const REMAP_STREAM: u64 = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRecord {
    pub step: usize,
    pub split: String,
    pub direction: String,
    pub loss: f64,
}

impl MetricRecord {
    pub fn to_line(&self) -> String {
        format!("{}\t{}\t{}\t{}", self.step, self.split, self.direction, self.loss)
    }
}

/// Loss records in arrival order, optionally mirrored to an append-only
/// `step<TAB>split<TAB>direction<TAB>loss` file.
#[derive(Debug, Default)]
pub struct MetricsLog {
    pub records: Vec<MetricRecord>,
    file: Option<File>,
}

impl MetricsLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn to_file(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            records: Vec::new(),
            file: Some(file),
        })
    }

    pub fn push(&mut self, step: usize, split: &str, direction: &str, loss: f64) -> Result<()> {
        let r = MetricRecord {
            step,
            split: split.to_string(),
            direction: direction.to_string(),
            loss,
        };
        if let Some(f) = &mut self.file {
            writeln!(f, "{}", r.to_line()).map_err(|e| Error::io("metrics log", e))?;
        }
        self.records.push(r);
        Ok(())
    }

    /// Validation losses for one direction label, in step order.
    pub fn valid_series(&self, direction: &str) -> Vec<(usize, f64)> {
        self.records
            .iter()
            .filter(|r| r.split == "valid" && r.direction == direction)
            .map(|r| (r.step, r.loss))
            .collect()
    }
}

/// Label used in the metrics log for pooled quantities.
pub const ALL_DIRECTIONS: &str = "all";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub last: Checkpoint,
    /// Lowest pooled validation loss seen (the initial model when no
    /// evaluation ran).
    pub best: Checkpoint,
    pub best_valid_loss: Option<f64>,
    pub steps: usize,
    pub stopped_early: bool,
}

/// Everything a training loop needs besides the model.
pub struct Run<'a> {
    pub protocol: Protocol,
    pub cfg: &'a TrainConfig,
    pub data: &'a TrainData,
    pub source_tokenizer: TokenizerRef,
    pub target_tokenizer: TokenizerRef,
}

impl Run<'_> {
    fn checkpoint(&self, model: &TransformerModel, step: usize) -> Checkpoint {
        Checkpoint {
            protocol: self.protocol,
            label: self.cfg.label.clone(),
            seed: self.cfg.seed,
            step,
            directions: self.data.directions.clone(),
            source_tokenizer: self.source_tokenizer.clone(),
            target_tokenizer: self.target_tokenizer.clone(),
            config: model.config().clone(),
            params: model.params().clone(),
        }
    }

    /// Per-direction validation losses, then the pooled value.
    fn validate(&self, model: &TransformerModel, step: usize, log: &mut MetricsLog) -> Result<Option<f64>> {
        let (mut total, mut tokens) = (0.0, 0usize);
        for (dir, examples) in self.data.directions.iter().zip(&self.data.valid) {
            if examples.is_empty() {
                continue;
            }
            let (nll, n) = nll_sum(model, examples, self.cfg.batch_tokens)?;
            log.push(step, "valid", &dir.to_string(), nll / n as f64)?;
            total += nll;
            tokens += n;
        }
        if tokens == 0 {
            return Ok(None);
        }
        let pooled = total / tokens as f64;
        if self.data.directions.len() > 1 {
            log.push(step, "valid", ALL_DIRECTIONS, pooled)?;
        }
        Ok(Some(pooled))
    }

    /// Adam under the scaled Noam schedule for up to `max_steps` steps,
    /// validating every `eval_every` steps and at the end.
    pub fn execute(&self, mut model: TransformerModel, log: &mut MetricsLog) -> Result<TrainOutcome> {
        let cfg = self.cfg;
        cfg.validate()?;
        let mut best = self.checkpoint(&model, 0);
        let mut best_loss: Option<f64> = None;
        if cfg.max_steps == 0 {
            return Ok(TrainOutcome {
                last: best.clone(),
                best,
                best_valid_loss: None,
                steps: 0,
                stopped_early: false,
            });
        }
        let mut batches = Batcher::new(&self.data.train, cfg.batch_tokens, seeded(cfg.seed, BATCH_STREAM))?;
        let mut dropout = seeded(cfg.seed, DROPOUT_STREAM);
        let mut adam = Adam::new(model.params(), cfg.beta1, cfg.beta2, cfg.eps);
        let (mut interval_nll, mut interval_tokens) = (0.0, 0usize);
        let mut stale = 0;
        let mut step = 0;
        let mut stopped_early = false;
        while step < cfg.max_steps {
            step += 1;
            let batch = batches.next_batch();
            let grads = {
                let tape = Tape::new();
                let bound = model.bind(&tape, true);
                let loss = model.batch_loss(&bound, &batch, Reduction::Mean, Some(&mut dropout))?;
                let value = loss.value().item();
                if !value.is_finite() {
                    return Err(Error::Numeric(format!(
                        "training loss became {value} at step {step} (epoch {})",
                        batches.epoch()
                    )));
                }
                let n = batch.target_tokens();
                interval_nll += value * n as f64;
                interval_tokens += n;
                let grads = tape.backward(loss)?;
                bound.collect_gradients(&grads)
            };
            let lr = cfg.lr_scale * noam_lr(step, cfg.model.model_dim, cfg.warmup)?;
            adam.step(model.params_mut(), &grads, lr)?;

            if step % cfg.eval_every == 0 || step == cfg.max_steps {
                log.push(step, "train", ALL_DIRECTIONS, interval_nll / interval_tokens as f64)?;
                interval_nll = 0.0;
                interval_tokens = 0;
                if let Some(v) = self.validate(&model, step, log)? {
                    if best_loss.is_none_or(|b| v < b) {
                        best_loss = Some(v);
                        best = self.checkpoint(&model, step);
                        stale = 0;
                    } else {
                        stale += 1;
                        if cfg.patience > 0 && stale >= cfg.patience {
                            stopped_early = true;
                            break;
                        }
                    }
                }
            }
        }
        if best_loss.is_none() {
            best = self.checkpoint(&model, step);
        }
        Ok(TrainOutcome {
            last: self.checkpoint(&model, step),
            best,
            best_valid_loss: best_loss,
            steps: step,
            stopped_early,
        })
    }
}

/// Model configuration with vocabulary sizes taken from the tokenizers.
pub fn sized_config(cfg: &TrainConfig, tok: &Tokenizers) -> ModelConfig {
    let mut m = cfg.model.clone();
    m.src_vocab_size = tok.source.vocab_size();
    m.tgt_vocab_size = tok.target.vocab_size();
    m
}

/// Encoded train/valid partitions of one bilingual split.
pub fn bilingual_data(split: &SplitCorpus, tok: &Tokenizers, max_len: usize) -> Result<TrainData> {
    let (train, _) = encode_corpus(&split.train, tok, None, 0, max_len)?;
    let (valid, _) = encode_corpus(&split.valid, tok, None, 0, max_len)?;
    Ok(TrainData {
        directions: vec![split.direction().clone()],
        train,
        valid: vec![valid],
    })
}

/// Bilingual training from a fresh seeded initialization. The tokenizers
/// must have been trained on `split.train` alone.
pub fn train_baseline(
    split: &SplitCorpus,
    tok: &Tokenizers,
    cfg: &TrainConfig,
    log: &mut MetricsLog,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let data = bilingual_data(split, tok, cfg.model.max_seq_len)?;
    let model = TransformerModel::init(sized_config(cfg, tok), &mut seeded(cfg.seed, INIT_STREAM))?;
    Run {
        protocol: Protocol::Baseline,
        cfg,
        data: &data,
        source_tokenizer: TokenizerRef::of(&tok.source, ""),
        target_tokenizer: TokenizerRef::of(&tok.target, ""),
    }
    .execute(model, log)
}
