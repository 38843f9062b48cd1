use rand_distr::{Distribution, StandardNormal};

use super::cache::{build_label_cache, cache_key, score_matrix, LabelEmbeddingCache, Prediction};
use super::labels::LabelSet;
use super::loss::{matching_objective, TcmHyper};
use super::train::Classifier;
use crate::autodiff::{Float, ParamId, ParamStore, Tape, Tensor, Var};
use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::rng::{stream, Rng};
use crate::text::{TokenBatch, Vocab};

pub(crate) fn check_vocab(cfg: &EncoderConfig, vocab: &Vocab) -> Result<()> {
    if cfg.vocab_size != vocab.len() {
        return Err(Error::Config(format!(
            "encoder.vocab_size ({}) does not match the vocabulary ({} tokens)",
            cfg.vocab_size,
            vocab.len()
        )));
    }
    Ok(())
}

/// Siamese matching model: one encoder embeds both inputs and label texts.
#[derive(Clone, Debug)]
pub struct TcmModel {
    encoder: Encoder,
    store: ParamStore,
    vocab: Vocab,
    labels: LabelSet,
    label_tokens: TokenBatch,
    hyper: TcmHyper,
}

impl TcmModel {
    pub fn new(
        cfg: &EncoderConfig,
        vocab: Vocab,
        labels: LabelSet,
        hyper: TcmHyper,
    ) -> Result<Self> {
        let (encoder, store) = Encoder::new(cfg)?;
        Self::from_parts(encoder, store, vocab, labels, hyper)
    }

    pub fn from_parts(
        encoder: Encoder,
        store: ParamStore,
        vocab: Vocab,
        labels: LabelSet,
        hyper: TcmHyper,
    ) -> Result<Self> {
        check_vocab(encoder.config(), &vocab)?;
        hyper.validate()?;
        let label_tokens = TokenBatch::encode(&vocab, labels.texts(), encoder.config().max_len)?;
        Ok(TcmModel {
            encoder,
            store,
            vocab,
            labels,
            label_tokens,
            hyper,
        })
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn hyper(&self) -> &TcmHyper {
        &self.hyper
    }

    pub fn into_parts(self) -> (Encoder, ParamStore, Vocab, LabelSet, TcmHyper) {
        (
            self.encoder,
            self.store,
            self.vocab,
            self.labels,
            self.hyper,
        )
    }

    /// Eval-mode representations of arbitrary texts.
    pub fn encode_texts<S: AsRef<str>>(&self, texts: &[S]) -> Result<Tensor> {
        let batch = TokenBatch::encode(&self.vocab, texts, self.encoder.config().max_len)?;
        self.encoder.encode(&self.store, &batch)
    }

    pub fn cache_key(&self) -> u64 {
        cache_key(&self.encoder, &self.store, &self.labels)
    }

    pub fn build_label_cache(&self) -> Result<LabelEmbeddingCache> {
        build_label_cache(&self.encoder, &self.store, &self.vocab, &self.labels)
    }

    pub fn predict(&self, cache: &LabelEmbeddingCache, text: &str) -> Result<Prediction> {
        Ok(self.predict_batch(cache, &[text])?.pop().expect("one row"))
    }

    pub fn predict_batch<S: AsRef<str>>(
        &self,
        cache: &LabelEmbeddingCache,
        texts: &[S],
    ) -> Result<Vec<Prediction>> {
        cache.check(self.cache_key())?;
        let x = self.encode_texts(texts)?;
        let scores = score_matrix(&x, cache.matrix())?;
        Ok(scores
            .row_iter()
            .map(|row| Prediction::from_scores(&self.labels, row.to_vec()))
            .collect())
    }

    /// Prediction that re-encodes every label text for this query.
    pub fn predict_fresh(&self, text: &str) -> Result<Prediction> {
        let x = self.encode_texts(&[text])?;
        let l = self.encoder.encode(&self.store, &self.label_tokens)?;
        let scores = score_matrix(&x, &l)?;
        Ok(Prediction::from_scores(
            &self.labels,
            scores.row(0).to_vec(),
        ))
    }
}

impl Classifier for TcmModel {
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

    /// Every label text is re-encoded on every call.
    fn loss(
        &self,
        tape: &mut Tape,
        batch: &TokenBatch,
        targets: &[usize],
        mut dropout: Option<&mut Rng>,
    ) -> Result<Var> {
        let x = self
            .encoder
            .forward(tape, &self.store, batch, dropout.as_deref_mut())?;
        let l = self
            .encoder
            .forward(tape, &self.store, &self.label_tokens, dropout)?;
        matching_objective(tape, x, l, targets, &self.hyper)
    }

    fn scores(&self, batch: &TokenBatch) -> Result<Tensor> {
        let x = self.encoder.encode(&self.store, batch)?;
        let l = self.encoder.encode(&self.store, &self.label_tokens)?;
        score_matrix(&x, &l)
    }
}

/// Matching model whose label embeddings are a free `[|Y|, d]` parameter
/// instead of encoded descriptions.
#[derive(Clone, Debug)]
pub struct FreeLabelModel {
    encoder: Encoder,
    store: ParamStore,
    vocab: Vocab,
    labels: LabelSet,
    matrix: ParamId,
    hyper: TcmHyper,
}

pub const FREE_LABELS_PARAM: &str = "labels.embedding";

impl FreeLabelModel {
    /// Initializes the free matrix with the encoded descriptions of `model`.
    /// The descriptions are not used again.
    pub fn from_descriptions(model: TcmModel) -> Result<Self> {
        let init = model.build_label_cache()?.matrix().clone();
        Self::with_matrix(model, init)
    }

    /// Initializes the free matrix with Gaussian entries rescaled to the
    /// Frobenius norm of the encoded descriptions, so both variants start at
    /// the same scale.
    pub fn random(model: TcmModel, seed: u64) -> Result<Self> {
        let reference = model.build_label_cache()?.matrix().clone();
        let norm = |t: &Tensor| t.data().iter().map(|v| v * v).sum::<Float>().sqrt();
        let mut rng = stream(seed, "labels/random");
        let raw: Vec<Float> = (0..reference.numel())
            .map(|_| {
                let v: f64 = StandardNormal.sample(&mut rng);
                v as Float
            })
            .collect();
        let raw = Tensor::new(reference.shape().to_vec(), raw)?;
        let s = norm(&reference) / norm(&raw).max(Float::MIN_POSITIVE);
        let data = raw.data().iter().map(|v| v * s).collect();
        Self::with_matrix(model, Tensor::new(reference.shape().to_vec(), data)?)
    }

    fn with_matrix(model: TcmModel, init: Tensor) -> Result<Self> {
        let (encoder, mut store, vocab, labels, hyper) = model.into_parts();
        let matrix = store.insert(FREE_LABELS_PARAM, init, true)?;
        Ok(FreeLabelModel {
            encoder,
            store,
            vocab,
            labels,
            matrix,
            hyper,
        })
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn label_matrix(&self) -> &Tensor {
        self.store.value(self.matrix)
    }

    pub fn label_matrix_id(&self) -> ParamId {
        self.matrix
    }

    /// Eval-mode encoding of the label texts with the current encoder.
    pub fn encode_descriptions(&self) -> Result<Tensor> {
        build_label_cache(&self.encoder, &self.store, &self.vocab, &self.labels)
            .map(|c| c.matrix().clone())
    }
}

impl Classifier for FreeLabelModel {
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
        let x = self.encoder.forward(tape, &self.store, batch, dropout)?;
        let l = tape.param(&self.store, self.matrix);
        matching_objective(tape, x, l, targets, &self.hyper)
    }

    fn scores(&self, batch: &TokenBatch) -> Result<Tensor> {
        let x = self.encoder.encode(&self.store, batch)?;
        score_matrix(&x, self.label_matrix())
    }
}
