//! Tokenization, vocabulary, datasets, label mapping files, K-shot episodes
//! and the synthetic corpus generator.

mod batch;
mod dataset;
mod episode;
mod mapping;
mod synthetic;
mod vocab;

pub use batch::TokenBatch;
pub use dataset::{labels_in_order, load_jsonl, parse_jsonl, save_jsonl, to_jsonl, Example};
pub use episode::{sample_episode, sample_episode_with_rest, Episode};
pub use mapping::{LabelDescription, LabelMapping};
pub use synthetic::{class_label, generate_synthetic, SyntheticConfig, SyntheticTask};
pub use vocab::{tokenize, Vocab, CLS, PAD, SEP, UNK};
