//! Decoding, corpus BLEU and multi-seed reporting.

mod bleu;
mod decode;
mod report;
mod translate;

pub use bleu::{corpus_bleu, corpus_bleu_with, text_bleu, Bleu, MAX_ORDER};
pub use decode::{
    beam_decode, beam_search, greedy_decode, greedy_search, length_normalized, Conditioned, Hypothesis, StepModel,
};
pub use report::{
    aggregate_runs, format_pm, gain, gain_from_stats, render_csv, render_table, test_set_hash, BleuReport, GainReport,
    ReportRow, RunScore,
};
pub use translate::{DecodeOptions, Translator};
