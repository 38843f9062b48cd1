use serde::Serialize;

use super::labels::LabelSet;
use crate::autodiff::{Float, ParamStore, Tensor};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::rng::Fingerprint;
use crate::text::{TokenBatch, Vocab};

/// Precomputed label representations `[|Y|, d]`, valid only for the
/// parameter state and label set it was built from.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelEmbeddingCache {
    matrix: Tensor,
    fingerprint: u64,
}

impl LabelEmbeddingCache {
    pub fn new(matrix: Tensor, fingerprint: u64) -> Self {
        LabelEmbeddingCache {
            matrix,
            fingerprint,
        }
    }

    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn check(&self, current: u64) -> Result<()> {
        if self.fingerprint == current {
            Ok(())
        } else {
            Err(Error::StaleCache {
                expected: self.fingerprint,
                actual: current,
            })
        }
    }
}

/// Identifies the parameter state of `encoder` together with `labels`.
pub fn cache_key(encoder: &Encoder, store: &ParamStore, labels: &LabelSet) -> u64 {
    Fingerprint::new()
        .u64(store.fingerprint())
        .str(encoder.prefix())
        .u64(labels.fingerprint())
        .finish()
}

/// Encodes every label text once in eval mode.
pub fn build_label_cache(
    encoder: &Encoder,
    store: &ParamStore,
    vocab: &Vocab,
    labels: &LabelSet,
) -> Result<LabelEmbeddingCache> {
    let batch = TokenBatch::encode(vocab, labels.texts(), encoder.config().max_len)?;
    let matrix = encoder.encode(store, &batch)?;
    Ok(LabelEmbeddingCache::new(
        matrix,
        cache_key(encoder, store, labels),
    ))
}

/// `inputs · labelsᵀ` for `[n, d]` and `[c, d]` matrices.
pub fn score_matrix(inputs: &Tensor, labels: &Tensor) -> Result<Tensor> {
    let (is, ls) = (inputs.shape(), labels.shape());
    if is.len() != 2 || ls.len() != 2 || is[1] != ls[1] {
        return Err(Error::Dimension {
            op: "score_matrix",
            lhs: is.to_vec(),
            rhs: ls.to_vec(),
        });
    }
    let (n, c) = (is[0], ls[0]);
    let mut out = Vec::with_capacity(n * c);
    for x in inputs.row_iter() {
        for l in labels.row_iter() {
            out.push(x.iter().zip(l).map(|(a, b)| a * b).sum());
        }
    }
    Tensor::new(vec![n, c], out)
}

/// Index of the largest score; exact ties go to the smallest index.
pub fn argmax(scores: &[Float]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Prediction {
    pub index: usize,
    pub label: String,
    pub scores: Vec<Float>,
}

impl Prediction {
    pub fn from_scores(labels: &LabelSet, scores: Vec<Float>) -> Self {
        let index = argmax(&scores);
        Prediction {
            index,
            label: labels.names()[index].clone(),
            scores,
        }
    }
}
