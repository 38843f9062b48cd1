use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::encoder::{Encoder, EncoderConfig};
use crate::error::Result;
use crate::objective::{Classifier, LabelSet};
use crate::rng::Rng;
use crate::text::{TokenBatch, Vocab};

/// Raw `[CLS]` state followed by a linear layer with one column per label.
/// The encoder's pooling MLP is unused and frozen.
#[derive(Clone, Debug)]
pub struct TaskHeadModel {
    encoder: Encoder,
    store: ParamStore,
    vocab: Vocab,
    labels: LabelSet,
    weight: ParamId,
    bias: ParamId,
}

impl TaskHeadModel {
    /// The head starts at zero, so every initial logit row is uniform.
    pub fn new(cfg: &EncoderConfig, vocab: Vocab, labels: LabelSet) -> Result<Self> {
        crate::objective::check_vocab(cfg, &vocab)?;
        let (encoder, mut store) = Encoder::new(cfg)?;
        for id in encoder.pooler_ids() {
            store.set_requires_grad(id, false);
        }
        let c = labels.len();
        let weight = store.insert("head.weight", Tensor::zeros(vec![cfg.embed_dim, c]), true)?;
        let bias = store.insert("head.bias", Tensor::zeros(vec![c]), true)?;
        Ok(TaskHeadModel {
            encoder,
            store,
            vocab,
            labels,
            weight,
            bias,
        })
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn head_ids(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }

    fn logits(
        &self,
        tape: &mut Tape,
        batch: &TokenBatch,
        dropout: Option<&mut Rng>,
    ) -> Result<Var> {
        let cls = self.encoder.cls(tape, &self.store, batch, dropout)?;
        let (w, b) = (
            tape.param(&self.store, self.weight),
            tape.param(&self.store, self.bias),
        );
        let z = tape.matmul(cls, w)?;
        tape.add_row(z, b)
    }
}

impl Classifier for TaskHeadModel {
    fn labels(&self) -> &LabelSet {
        &self.labels
    }

    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn max_len(&self) -> usize {
        self.encoder.config().max_len
    }

    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn loss(
        &self,
        tape: &mut Tape,
        batch: &TokenBatch,
        targets: &[usize],
        dropout: Option<&mut Rng>,
    ) -> Result<Var> {
        let z = self.logits(tape, batch, dropout)?;
        tape.softmax_cross_entropy(z, targets)
    }

    fn scores(&self, batch: &TokenBatch) -> Result<Tensor> {
        let mut tape = Tape::new();
        let z = self.logits(&mut tape, batch, None)?;
        Ok(tape.value(z).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Float;
    use crate::objective::{eval_loss, MappingMode};

    #[test]
    fn zero_head_gives_uniform_loss() {
        let vocab = Vocab::build(["a b c"], 1, 10).unwrap();
        let names: Vec<String> = (0..5).map(|i| format!("l{i}")).collect();
        let labels = LabelSet::new(names.clone(), MappingMode::Name, names).unwrap();
        let cfg = EncoderConfig {
            vocab_size: vocab.len(),
            max_len: 6,
            embed_dim: 8,
            num_layers: 1,
            num_heads: 2,
            ffn_dim: 8,
            repr_dim: 4,
            dropout: 0.0,
            init_std: 0.02,
            seed: 1,
        };
        let m = TaskHeadModel::new(&cfg, vocab.clone(), labels).unwrap();
        let batch = TokenBatch::encode(&vocab, &["a b", "c"], 6).unwrap();
        let loss = eval_loss(&m, &batch, &[0, 4]).unwrap();
        assert!((loss - (5.0 as Float).ln()).abs() < 1e-12);
        assert_eq!(m.scores(&batch).unwrap().shape(), &[2, 5]);
        let pooler: usize = m
            .encoder
            .pooler_ids()
            .iter()
            .map(|&id| m.store.value(id).numel())
            .sum();
        assert_eq!(m.store.trainable_numel(), m.store.numel() - pooler);
    }
}
