//! Fixtures shared by the benchmarks: the desk-scale encoder on the bundled
//! 40-class task.

use tcm_core::autodiff::{Float, Tensor};
use tcm_core::experiments::presets::{desk_protocol, synthetic40};
use tcm_core::objective::{EncodedSplit, LabelSet, MappingMode, TcmModel};
use tcm_core::text::{generate_synthetic, sample_episode, TokenBatch, Vocab};

/// Deterministic `[rows, cols]` tensor with entries in `[-1, 1)`.
pub fn filled(rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols)
        .map(|i| ((i * 7919 % 2003) as Float / 1001.5) - 1.0)
        .collect();
    Tensor::new(vec![rows, cols], data).expect("shape matches data")
}

/// Untrained TCM model plus one K = 5 training episode, encoded.
pub fn tcm_fixture() -> (TcmModel, EncodedSplit) {
    let task = generate_synthetic(&synthetic40()).expect("preset is valid");
    let episode = sample_episode(&task.examples, 5, 1).expect("enough examples");
    let labels = LabelSet::from_mapping(&task.mapping, MappingMode::Definition, None)
        .expect("definitions present");
    let corpus = episode
        .train
        .iter()
        .map(|e| e.text.as_str())
        .chain(labels.texts().iter().map(String::as_str));
    let vocab = Vocab::build(corpus, 1, 4000).expect("nonempty corpus");
    let cfg = desk_protocol();
    let enc = tcm_core::encoder::EncoderConfig {
        vocab_size: vocab.len(),
        ..cfg.encoder
    };
    let split =
        EncodedSplit::new(&vocab, enc.max_len, &labels, &episode.train).expect("labels match");
    let model = TcmModel::new(&enc, vocab, labels, cfg.hyper).expect("valid config");
    (model, split)
}

/// The first `n` rows of `split`.
pub fn head(split: &EncodedSplit, n: usize) -> (TokenBatch, Vec<usize>) {
    let rows: Vec<usize> = (0..n.min(split.len())).collect();
    (
        split.tokens.select(&rows),
        rows.iter().map(|&i| split.targets[i]).collect(),
    )
}
