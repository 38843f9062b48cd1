//! Settings for the bundled synthetic tasks and a desk-scale protocol that
//! trains a from-scratch encoder in seconds per seed.

use super::protocol::{ProtocolConfig, Shots};
use crate::autodiff::AdamWConfig;
use crate::encoder::EncoderConfig;
use crate::objective::{MappingMode, TcmHyper, TrainConfig};
use crate::text::SyntheticConfig;

/// Size of the shared noise-word pool. Small enough that every noise word
/// occurs in a K = 5 training split.
const NOISE_POOL: usize = 60;

fn with_pool(mut cfg: SyntheticConfig) -> SyntheticConfig {
    cfg.vocab_size = cfg.classes * (cfg.signal_tokens_per_class + 1)
        + cfg.classes.div_ceil(2) * cfg.shared_signal
        + NOISE_POOL;
    cfg
}

/// 40 classes, 8 signal words per class, 2 per example, 4 noise words.
/// 50 examples per class leave test data at K = 20.
pub fn synthetic40() -> SyntheticConfig {
    with_pool(SyntheticConfig {
        classes: 40,
        per_class: 50,
        vocab_size: 0,
        signal_tokens_per_class: 8,
        noise_len: 4,
        seed: 7,
        signal_per_example: 2,
        shared_signal: 0,
    })
}

/// 20 classes where classes `2i` and `2i + 1` share 3 of their 6 signal
/// words, so their definitions are near-synonymous.
pub fn synthetic_overlap() -> SyntheticConfig {
    with_pool(SyntheticConfig {
        classes: 20,
        per_class: 30,
        vocab_size: 0,
        signal_tokens_per_class: 3,
        noise_len: 4,
        seed: 7,
        signal_per_example: 2,
        shared_signal: 3,
    })
}

/// One-layer, 32-wide encoder, batch 8, 30 epochs at K = 5.
pub fn desk_protocol() -> ProtocolConfig {
    ProtocolConfig {
        encoder: EncoderConfig {
            vocab_size: 4000,
            max_len: 32,
            embed_dim: 32,
            num_layers: 1,
            num_heads: 2,
            ffn_dim: 64,
            repr_dim: 32,
            dropout: 0.1,
            init_std: 0.1,
            seed: 0,
        },
        hyper: TcmHyper::default(),
        train: TrainConfig {
            epochs: 30,
            batch_size: 8,
            optim: AdamWConfig {
                lr: 3e-3,
                ..AdamWConfig::default()
            },
            seed: 0,
        },
        mode: MappingMode::Definition,
        shots: Shots::K(5),
        min_freq: 1,
    }
}

/// [`desk_protocol`] at K = 20 with half the epochs, keeping the step count
/// within a factor of two.
pub fn desk_protocol_k20() -> ProtocolConfig {
    let mut cfg = desk_protocol();
    cfg.shots = Shots::K(20);
    cfg.train.epochs = 15;
    cfg
}
