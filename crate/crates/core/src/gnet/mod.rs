//! The rescoring network: detections exchange information with
//! their overlapping neighbours through pair rows that are max-pooled back
//! onto each detection, block after block, before a per-detection score head.

pub mod checkpoint;
mod config;
mod loss;
mod model;
mod pairs;

pub use config::GnetConfig;
pub use loss::{loss_and_grads, matching_labels, training_loss, ClassBalance, LossOutput, LossTerms};
pub use model::{rescore, GnetModel};
pub use pairs::{build_pair_index, PairIndex};
