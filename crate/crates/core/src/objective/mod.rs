//! Label mapping, the matching and regularization losses, label embedding
//! caching, and the training loop shared by every model.

mod cache;
mod labels;
mod loss;
mod model;
mod train;

pub use cache::{
    argmax, build_label_cache, cache_key, score_matrix, LabelEmbeddingCache, Prediction,
};
pub use labels::{LabelSet, MappingMode};
pub use loss::{
    matching_loss, matching_objective, regularization_loss, similarity, total_loss, TcmHyper,
};
pub(crate) use model::check_vocab;
pub use model::{FreeLabelModel, TcmModel, FREE_LABELS_PARAM};
pub use train::{
    eval_loss, evaluate, fit, predict_indices, Classifier, EncodedSplit, EpochRecord, History,
    TrainConfig,
};
