//! The COUPA scorer and its training loop.

mod config;
mod eval;
mod network;
mod train;

pub use config::{Ablation, ModelConfig, RunConfig, TrainConfig};
pub use eval::{evaluate, score_samples, ScoreMode};
pub use network::{day_of_week, hour_of_day, Coupa, FeatureEmbeddings, ForwardOutput};
pub use train::{batch_objective, draw_negatives, joint_loss, negatives_for, train, EpochRecord};
