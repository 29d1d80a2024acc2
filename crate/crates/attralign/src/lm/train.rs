//! Unconditional language-model training (the stand-in for pretrained GPT-2)
//! and the shared sequence convention: a sentence trains as
//! `<bos> w_1 .. w_n <eos>` with every token after `<bos>` predicted.

use serde::{Deserialize, Serialize};

use super::model::{ModelConfig, TransformerLm};
use super::vocab::{Vocabulary, BOS, EOS};
use crate::error::{Error, Result};
use crate::rng::{Purpose, Rng};
use crate::tensor::{ops, Optimizer, Tape};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LmTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for LmTrainConfig {
    fn default() -> Self {
        LmTrainConfig {
            epochs: 30,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

/// `(input ids, target ids)` for one training sentence.
pub fn training_pair(vocab: &Vocabulary, text: &str) -> (Vec<u32>, Vec<u32>) {
    let ids = vocab.encode(text);
    let mut inputs = Vec::with_capacity(ids.len() + 1);
    inputs.push(BOS);
    inputs.extend(&ids);
    let mut targets = ids;
    targets.push(EOS);
    (inputs, targets)
}

/// Train a fresh LM on raw texts. The vocabulary is built from the corpus
/// plus the given domain special tokens. Returns the model and the per-epoch
/// mean loss trace.
pub fn pretrain(
    config: &ModelConfig,
    texts: &[String],
    domains: &[String],
    train: &LmTrainConfig,
) -> Result<(TransformerLm, Vec<f64>)> {
    if texts.is_empty() {
        return Err(Error::config("pretrain on empty corpus"));
    }
    let vocab = Vocabulary::build(texts.iter().map(|s| s.as_str()), domains)?;
    let model = TransformerLm::new(config.clone(), vocab, train.seed)?;
    let log = train_lm(&model, texts, train)?;
    Ok((model, log))
}

/// Epoch loop over an existing (unfrozen) model. Also used by the
/// fine-tuning baseline.
pub fn train_lm(model: &TransformerLm, texts: &[String], train: &LmTrainConfig) -> Result<Vec<f64>> {
    if model.is_frozen() {
        return Err(Error::config("cannot train a frozen model"));
    }
    if texts.is_empty() {
        return Err(Error::config("training corpus is empty"));
    }
    let pairs: Vec<(Vec<u32>, Vec<u32>)> = texts
        .iter()
        .map(|t| training_pair(&model.vocab, t))
        .collect();
    let mut opt = Optimizer::adam(model.parameters(), train.learning_rate)?;
    let mut shuffle_rng = Rng::for_purpose(train.seed, Purpose::Shuffle);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut log = Vec::with_capacity(train.epochs);
    for _epoch in 0..train.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut epoch_loss = 0.0f64;
        for &idx in &order {
            let (inputs, targets) = &pairs[idx];
            let tape = Tape::recording();
            let mut cache = model.empty_cache();
            let logits = model.forward(&tape, inputs, &mut cache, 0)?;
            let loss = ops::cross_entropy(&tape, &logits, targets)?;
            loss.check_finite("lm training loss")?;
            opt.zero_grad();
            tape.backward(&loss)?;
            opt.step();
            epoch_loss += loss.item() as f64;
        }
        log.push(epoch_loss / pairs.len() as f64);
    }
    Ok(log)
}

/// Mean cross-entropy of the model over texts, no parameter updates.
pub fn mean_loss(model: &TransformerLm, texts: &[String]) -> Result<f64> {
    if texts.is_empty() {
        return Err(Error::config("mean_loss over empty text list"));
    }
    let mut total = 0.0f64;
    for text in texts {
        let (inputs, targets) = training_pair(&model.vocab, text);
        let tape = Tape::inference();
        let mut cache = model.empty_cache();
        let logits = model.forward(&tape, &inputs, &mut cache, 0)?;
        let loss = ops::cross_entropy(&tape, &logits, &targets)?;
        total += loss.item() as f64;
    }
    Ok(total / texts.len() as f64)
}
