use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::cache::argmax;
use super::labels::LabelSet;
use crate::autodiff::{AdamW, AdamWConfig, Float, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::metrics::{confusion, macro_f1, Confusion};
use crate::rng::{stream, Rng};
use crate::text::{Example, TokenBatch, Vocab};

/// Token ids and class indices for a list of examples.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSplit {
    pub tokens: TokenBatch,
    pub targets: Vec<usize>,
}

impl EncodedSplit {
    pub fn new(
        vocab: &Vocab,
        max_len: usize,
        labels: &LabelSet,
        examples: &[Example],
    ) -> Result<Self> {
        let targets = labels.targets(examples.iter().map(|e| e.label.as_str()))?;
        let texts: Vec<&str> = examples.iter().map(|e| e.text.as_str()).collect();
        Ok(EncodedSplit {
            tokens: TokenBatch::encode(vocab, &texts, max_len)?,
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// A trainable model whose score columns follow [`Classifier::labels`].
pub trait Classifier {
    fn labels(&self) -> &LabelSet;
    fn vocab(&self) -> &Vocab;
    fn max_len(&self) -> usize;
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;

    /// Parameters the optimizer updates.
    fn trainable(&self) -> Vec<ParamId> {
        self.store().trainable_ids()
    }

    /// Scalar training loss for one batch. `dropout` is `Some` in training mode.
    fn loss(
        &self,
        tape: &mut Tape,
        batch: &TokenBatch,
        targets: &[usize],
        dropout: Option<&mut Rng>,
    ) -> Result<Var>;

    /// Eval-mode scores `[batch, |Y|]`.
    fn scores(&self, batch: &TokenBatch) -> Result<Tensor>;

    /// Runs between backward and the optimizer step.
    fn before_step(&mut self) -> Result<()> {
        Ok(())
    }

    fn encode_split(&self, examples: &[Example]) -> Result<EncodedSplit> {
        EncodedSplit::new(self.vocab(), self.max_len(), self.labels(), examples)
    }
}

const EVAL_CHUNK: usize = 128;

/// Argmax class per row, scored in chunks.
pub fn predict_indices<M: Classifier + ?Sized>(
    model: &M,
    tokens: &TokenBatch,
) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(tokens.batch);
    let rows: Vec<usize> = (0..tokens.batch).collect();
    for chunk in rows.chunks(EVAL_CHUNK) {
        let scores = model.scores(&tokens.select(chunk))?;
        out.extend(scores.row_iter().map(argmax));
    }
    Ok(out)
}

pub fn evaluate<M: Classifier + ?Sized>(model: &M, split: &EncodedSplit) -> Result<Confusion> {
    let predicted = predict_indices(model, &split.tokens)?;
    confusion(model.labels().len(), &split.targets, &predicted)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub optim: AdamWConfig,
    /// Seeds the shuffle and dropout streams.
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 8,
            optim: AdamWConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_f1: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub step_losses: Vec<f64>,
    /// Epoch whose parameters the model holds after training.
    pub best_epoch: Option<usize>,
}

impl History {
    pub fn to_jsonl(&self) -> String {
        self.epochs
            .iter()
            .map(|r| serde_json::to_string(r).expect("plain record") + "\n")
            .collect()
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl().as_bytes())
            .map_err(|e| Error::io(path, e))
    }
}

/// Mini-batch AdamW training. After every epoch the validation macro-F1 is
/// measured; the parameters from the best epoch (latest on ties) are
/// restored at the end. With an empty validation split the last epoch is kept.
pub fn fit<M: Classifier + ?Sized>(
    model: &mut M,
    train: &EncodedSplit,
    valid: &EncodedSplit,
    cfg: &TrainConfig,
) -> Result<History> {
    if cfg.batch_size == 0 {
        return Err(Error::Config("train.batch_size must be positive".into()));
    }
    if train.is_empty() {
        return Err(Error::Input("empty training split".into()));
    }
    let ids = model.trainable();
    let mut optim = AdamW::new(cfg.optim);
    let mut shuffle = stream(cfg.seed, "shuffle");
    let mut dropout = stream(cfg.seed, "dropout");
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = History::default();
    let mut best: Option<(f64, Vec<Tensor>)> = None;
    let mut tape = Tape::new();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        for rows in order.chunks(cfg.batch_size) {
            let batch = train.tokens.select(rows);
            let targets: Vec<usize> = rows.iter().map(|&r| train.targets[r]).collect();
            tape.clear();
            model.store_mut().zero_grad();
            let loss = model.loss(&mut tape, &batch, &targets, Some(&mut dropout))?;
            let value = tape.value(loss).item() as f64;
            if !value.is_finite() {
                return Err(Error::Contract(format!(
                    "non-finite training loss at epoch {epoch}"
                )));
            }
            tape.backward(loss, model.store_mut())?;
            model.before_step()?;
            optim.step(model.store_mut(), &ids)?;
            history.step_losses.push(value);
            total += value * rows.len() as f64;
        }
        let valid_f1 = if valid.is_empty() {
            0.0
        } else {
            macro_f1(&evaluate(model, valid)?)?
        };
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: total / train.len() as f64,
            valid_f1,
        });
        if valid.is_empty() || best.as_ref().is_none_or(|(f, _)| valid_f1 >= *f) {
            let snapshot = ids
                .iter()
                .map(|&id| model.store().value(id).clone())
                .collect();
            best = Some((valid_f1, snapshot));
            history.best_epoch = Some(epoch);
        }
    }
    if let (Some((_, snapshot)), Some(best_epoch)) = (best, history.best_epoch) {
        if best_epoch != cfg.epochs {
            for (&id, value) in ids.iter().zip(snapshot) {
                *model.store_mut().value_mut(id) = value;
            }
        }
    }
    Ok(history)
}

/// Loss of one batch in eval mode, without touching gradients.
pub fn eval_loss<M: Classifier + ?Sized>(
    model: &M,
    batch: &TokenBatch,
    targets: &[usize],
) -> Result<Float> {
    let mut tape = Tape::new();
    let loss = model.loss(&mut tape, batch, targets, None)?;
    Ok(tape.value(loss).item())
}
