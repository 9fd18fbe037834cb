use super::checkpoint::Checkpoint;
use super::data::Tokenizers;
use crate::corpus::{Direction, ParallelCorpus};
use crate::error::{Error, Result};
use crate::eval::{test_set_hash, BleuReport, DecodeOptions, RunScore, Translator};

/// Scores a multilingual checkpoint on a direction it never trained on by
/// tagging sources with the untrained target language.
pub fn zero_shot_eval(
    ck: &Checkpoint,
    tok: &Tokenizers,
    direction: &Direction,
    test: &ParallelCorpus,
    options: DecodeOptions,
) -> Result<BleuReport> {
    if ck.directions.contains(direction) {
        return Err(Error::Protocol(format!(
            "{direction} was trained on; zero-shot evaluation needs an untrained direction"
        )));
    }
    if !ck.directions.iter().any(|d| d.src == direction.src) || !ck.directions.iter().any(|d| d.tgt == direction.tgt) {
        return Err(Error::Protocol(format!(
            "{direction}: source and target languages must each occur in training ({})",
            ck.directions.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
        )));
    }
    if tok.source.tag_id(&direction.tgt).is_none() {
        return Err(Error::Usage(format!(
            "target language {:?} has no tag in the training vocabulary",
            direction.tgt
        )));
    }
    ck.verify_tokenizers(&tok.source, &tok.target)?;
    let model = ck.model()?;
    let translator = Translator {
        model: &model,
        tokenizers: tok,
        target_lang: Some(direction.tgt.clone()),
        options,
    };
    let bleu = translator.bleu(test, false)?;
    let refs: Vec<&str> = test.targets().collect();
    BleuReport::new(
        format!("zero-shot:{}", ck.label),
        direction.to_string(),
        test_set_hash(&refs),
        vec![RunScore { seed: ck.seed, bleu }],
    )
}
