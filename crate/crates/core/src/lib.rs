//! Skeleton-based video anomaly detection with learnable joint graphs, a
//! graph jigsaw pretext task, and a graph-conditioned denoising diffusion
//! model.
//!
//! Module map:
//!
//! - [`numerics`]: differentiable array engine, Adam, seeded RNG, checkpoints
//! - [`pose`]: pose tracks, windows, normalization, synthetic motion
//! - [`graph`]: learned joint embeddings and top-k cosine adjacency
//! - [`jigsaw`]: Girvan-Newman partitioning and subgraph shuffles
//! - [`forecaster`]: graph attention, future-average head, conditioning vector
//! - [`diffusion`]: schedules, conditional denoiser, reverse sampling
//! - [`pipeline`]: training loop, window scoring, aggregation
//! - [`eval`]: frame scores, AUROC, parameter accounting, reports

pub mod diffusion;
pub mod error;
pub mod eval;
pub mod forecaster;
pub mod graph;
pub mod jigsaw;
pub mod kv;
pub mod numerics;
pub mod pipeline;
pub mod pose;

pub use error::{Error, Result};
pub use numerics::Real;
