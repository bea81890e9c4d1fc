use std::collections::BTreeMap;

use ndarray::{ArrayD, Axis, Zip};
use rayon::prelude::*;

use super::config::{Aggregation, ScoreTransform};
use super::model::{Model, STREAM_SCORE};
use super::train::dataset_windows;
use crate::diffusion::{sample_future, DiffusionSchedule};
use crate::error::{Error, Result};
use crate::forecaster::{encode_frozen, node_signals};
use crate::graph::Adjacency;
use crate::numerics::tape::smooth_l1;
use crate::numerics::{Real, RngStream};
use crate::pose::{PoseDataset, Window};

/// Reduces a non-empty multiset of scores.
pub fn aggregate_scores(scores: &[f64], strategy: Aggregation) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::contract("cannot aggregate an empty score set"));
    }
    let n = scores.len();
    Ok(match strategy {
        Aggregation::Min => scores.iter().copied().fold(f64::INFINITY, f64::min),
        Aggregation::Max => scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        Aggregation::Mean => scores.iter().sum::<f64>() / n as f64,
        Aggregation::Median => {
            let mut s = scores.to_vec();
            s.sort_by(f64::total_cmp);
            if n % 2 == 1 {
                s[n / 2]
            } else {
                0.5 * (s[n / 2 - 1] + s[n / 2])
            }
        }
    })
}

/// `mean + ln((1 + max) / (1 + min))` over per-actor scores.
pub fn multi_actor_score(per_actor: &[f64]) -> Result<f64> {
    if per_actor.is_empty() {
        return Err(Error::contract("no actor scores to fuse"));
    }
    if per_actor.iter().any(|&s| s.is_nan() || s < 0.0) {
        return Err(Error::contract("actor scores must be non-negative"));
    }
    let mean = aggregate_scores(per_actor, Aggregation::Mean)?;
    let max = aggregate_scores(per_actor, Aggregation::Max)?;
    let min = aggregate_scores(per_actor, Aggregation::Min)?;
    Ok(mean + ((1.0 + max) / (1.0 + min)).ln())
}

/// Scores of one actor's window.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub video_id: String,
    pub actor_id: String,
    pub start_frame: i64,
    /// One score per generation.
    pub scores: Vec<f64>,
    pub aggregate: f64,
    pub strategy: Aggregation,
}

impl ScoreRecord {
    /// Same record re-aggregated with `strategy`.
    pub fn with_strategy(&self, strategy: Aggregation) -> Self {
        ScoreRecord {
            aggregate: aggregate_scores(&self.scores, strategy).expect("records hold M >= 1 scores"),
            strategy,
            ..self.clone()
        }
    }
}

/// Per-generation score of a residual block.
pub fn residual_score<F: Real>(truth: &ArrayD<F>, sample: &ArrayD<F>, transform: ScoreTransform) -> f64 {
    let norm = Zip::from(truth)
        .and(sample)
        .fold(0.0f64, |acc, &a, &b| {
            let d = (a - b).as_f64();
            acc + d * d
        })
        .sqrt();
    match transform {
        ScoreTransform::Smooth => smooth_l1(norm),
        ScoreTransform::L2 => norm,
    }
}

/// Draws `M` futures for one past block `(l, J, C)` (already normalized),
/// returning `(M, L-l, J, C)`. The future frames are not an input.
pub fn generate_futures<F: Real>(
    model: &Model<F>,
    schedule: &DiffusionSchedule,
    adj: &Adjacency,
    past: &ndarray::Array3<F>,
    rng: &RngStream,
) -> Result<ArrayD<F>> {
    let cfg = &model.config;
    let (mask, _) = model.puzzle_mask(adj, cfg.puzzle_at_inference, &mut rng.split(0))?;
    let signals = node_signals(&past.clone().insert_axis(Axis(0)));
    let (_, _, _, cond) = encode_frozen(&model.forecast, &model.store, signals, &mask);
    let m = cfg.generations;
    let d = cond.shape()[1];
    let h = cond
        .broadcast(ndarray::IxDyn(&[m, d]))
        .expect("conditioning is (1, D)")
        .to_owned();
    let sample_root = rng.split(1);
    let mut streams: Vec<RngStream> = (0..m as u64).map(|i| sample_root.split(i)).collect();
    sample_future(&model.denoiser, &model.store, &h, schedule, cfg.posterior, &mut streams)
}

/// Scores one normalized window with the stream `rng`.
pub fn score_window<F: Real>(
    model: &Model<F>,
    schedule: &DiffusionSchedule,
    adj: &Adjacency,
    window: &Window,
    rng: &RngStream,
) -> Result<ScoreRecord> {
    let past = window.past.mapv(F::cast);
    let samples = generate_futures(model, schedule, adj, &past, rng)?;
    let truth = window.future.mapv(F::cast).into_dyn();
    let scores: Vec<f64> = samples
        .outer_iter()
        .map(|u| residual_score(&truth, &u.to_owned(), model.config.score_transform))
        .collect();
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Scoring(format!(
            "non-finite score for video `{}` actor `{}` frame {}",
            window.video_id, window.actor_id, window.start_frame
        )));
    }
    let strategy = model.config.aggregation;
    Ok(ScoreRecord {
        video_id: window.video_id.clone(),
        actor_id: window.actor_id.clone(),
        start_frame: window.start_frame,
        aggregate: aggregate_scores(&scores, strategy)?,
        scores,
        strategy,
    })
}

/// Scores normalized windows; window `i` uses stream `i` under the scoring
/// root, so the parallel and sequential paths agree exactly.
pub fn score_windows<F: Real>(model: &Model<F>, windows: &[Window], parallel: bool) -> Result<Vec<ScoreRecord>> {
    let schedule = model.schedule()?;
    let adj = model.adjacency()?;
    if model.store.values().iter().any(|v| v.iter().any(|x| !x.is_finite())) {
        return Err(Error::Scoring("model holds non-finite parameters".into()));
    }
    let root = RngStream::new(model.config.seed).split(STREAM_SCORE);
    let one = |(i, w): (usize, &Window)| score_window(model, &schedule, &adj, w, &root.split(i as u64));
    if parallel {
        windows.par_iter().enumerate().map(one).collect()
    } else {
        windows.iter().enumerate().map(one).collect()
    }
}

/// Windows every track with the model's settings and scores them.
pub fn score_dataset<F: Real>(model: &Model<F>, dataset: &PoseDataset, parallel: bool) -> Result<Vec<ScoreRecord>> {
    if dataset.joints != model.joints || dataset.channels != model.channels {
        return Err(Error::Data(format!(
            "poses have J={} C={}, model expects J={} C={}",
            dataset.joints, dataset.channels, model.joints, model.channels
        )));
    }
    let windows = dataset_windows(dataset, &model.config)?;
    score_windows(model, &windows, parallel)
}

/// One multi-actor score per `(video, start_frame)` window position.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowScore {
    pub video_id: String,
    pub start_frame: i64,
    pub score: f64,
}

/// Groups records by window position and fuses the actors' aggregates.
pub fn fuse_actors(records: &[ScoreRecord]) -> Result<Vec<WindowScore>> {
    let mut groups: BTreeMap<(&str, i64), Vec<f64>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.video_id.as_str(), r.start_frame))
            .or_default()
            .push(r.aggregate);
    }
    groups
        .into_iter()
        .map(|((video, start), aggs)| {
            Ok(WindowScore {
                video_id: video.to_string(),
                start_frame: start,
                score: multi_actor_score(&aggs)?,
            })
        })
        .collect()
}
