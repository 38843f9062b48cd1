//! Comparison models trained with the same loop as the matching model.

mod task_head;
mod two_encoder;

pub use task_head::TaskHeadModel;
pub use two_encoder::TwoEncoderModel;
