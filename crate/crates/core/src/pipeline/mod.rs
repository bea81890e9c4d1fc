//! Training loop, window scoring, score aggregation and actor fusion.

mod config;
mod model;
mod score;
mod train;

pub use config::{Aggregation, GraphTarget, Precision, PuzzleMode, ScoreTransform, TrainConfig};
pub use model::{support_mask, Model};
pub use score::{
    aggregate_scores, fuse_actors, generate_futures, multi_actor_score, residual_score,
    score_dataset, score_window, score_windows, ScoreRecord, WindowScore,
};
pub use train::{
    batch_loss, corrupt_batch, dataset_windows, first_batch, history_csv, prepare_batch,
    total_loss, train, train_model, train_windows, Batch, EpochStats, LossTerms, WindowSet,
    HISTORY_HEADER,
};

#[cfg(test)]
mod tests;
