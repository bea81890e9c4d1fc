use ndarray::{s, Array4, ArrayD, Axis, Zip};

use super::config::{GraphTarget, Precision, TrainConfig};
use super::model::{Model, STREAM_TRAIN};
use crate::diffusion::{diffusion_loss, timestep_batch, DiffusionSchedule};
use crate::error::{Error, Result};
use crate::forecaster::{encode, future_average, graph_loss, node_signals, puzzle_loss};
use crate::numerics::{Adam, AdamConfig, Bound, Graph, Real, RngStream, Var};
use crate::pose::{make_windows, normalize_window, PoseDataset, Window};

/// `lambda1 (graph + lambda2 puzzle) + diffusion`.
pub fn total_loss(graph: f64, puzzle: f64, diffusion: f64, lambda1: f64, lambda2: f64) -> f64 {
    lambda1 * (graph + lambda2 * puzzle) + diffusion
}

/// Normalized windows stacked into dense blocks.
#[derive(Debug, Clone)]
pub struct WindowSet<F> {
    /// `(N, l, J, C)`.
    pub past: Array4<F>,
    /// `(N, L - l, J, C)`.
    pub future: Array4<F>,
}

impl<F: Real> WindowSet<F> {
    pub fn len(&self) -> usize {
        self.past.len_of(Axis(0))
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn from_windows(windows: &[Window], joints: usize, channels: usize, past: usize, future: usize) -> Self {
        let n = windows.len();
        let mut p = Array4::zeros((n, past, joints, channels));
        let mut f = Array4::zeros((n, future, joints, channels));
        for (i, w) in windows.iter().enumerate() {
            p.index_axis_mut(Axis(0), i).assign(&w.past.mapv(F::cast));
            f.index_axis_mut(Axis(0), i).assign(&w.future.mapv(F::cast));
        }
        WindowSet { past: p, future: f }
    }

    fn select(&self, idx: &[usize]) -> (Array4<F>, Array4<F>) {
        (self.past.select(Axis(0), idx), self.future.select(Axis(0), idx))
    }
}

/// Every window of every track, normalized per the config, in track order.
pub fn dataset_windows(dataset: &PoseDataset, config: &TrainConfig) -> Result<Vec<Window>> {
    let mut out = Vec::new();
    for t in &dataset.tracks {
        for w in make_windows(t, config.window, config.past, config.stride)? {
            out.push(normalize_window(&w, config.normalization).0);
        }
    }
    Ok(out)
}

/// Inputs of one optimization step.
#[derive(Debug, Clone)]
pub struct Batch<F> {
    /// `(B, K, l*C)`.
    pub signals: ArrayD<F>,
    /// Graph-loss target `(B, K, C)`.
    pub target: ArrayD<F>,
    /// Clean future `(B, L-l, K, C)`.
    pub future: ArrayD<F>,
    /// Diffusion noise, same shape as `future`.
    pub eps: ArrayD<F>,
    /// Diffusion step per sample.
    pub ts: Vec<usize>,
    /// Attention support `A' + I`.
    pub mask: ArrayD<F>,
    /// Puzzle class when a move was applied.
    pub class: Option<usize>,
}

/// Draws the step, noise and puzzle move for a batch of windows.
pub fn prepare_batch<F: Real>(
    model: &Model<F>,
    past: &Array4<F>,
    future: &Array4<F>,
    rng: &RngStream,
) -> Result<Batch<F>> {
    let cfg = &model.config;
    let b = past.len_of(Axis(0));
    let adj = model.adjacency()?;
    let (mask, mv) = model.puzzle_mask(&adj, true, &mut rng.split(0))?;
    let mut t_rng = rng.split(1);
    let ts = if cfg.per_sample_t {
        (0..b).map(|_| 1 + t_rng.below(cfg.steps)).collect()
    } else {
        vec![1 + t_rng.below(cfg.steps); b]
    };
    let target = match cfg.graph_target {
        GraphTarget::Future => future_average(future),
        GraphTarget::Past => future_average(past),
    };
    Ok(Batch {
        signals: node_signals(past),
        target,
        future: future.clone().into_dyn(),
        eps: rng.split(2).normal_array::<F>(future.shape()),
        ts,
        mask,
        class: mv.map(|m| m.class),
    })
}

/// Per-sample forward corruption with step `ts[b]` for row `b`.
pub fn corrupt_batch<F: Real>(x: &ArrayD<F>, eps: &ArrayD<F>, ts: &[usize], schedule: &DiffusionSchedule) -> ArrayD<F> {
    let mut out = ArrayD::zeros(x.raw_dim());
    for (i, &t) in ts.iter().enumerate() {
        let ab = schedule.alpha_bar(t);
        let (a, c) = (F::cast(ab.sqrt()), F::cast((1.0 - ab).sqrt()));
        Zip::from(out.index_axis_mut(Axis(0), i))
            .and(x.index_axis(Axis(0), i))
            .and(eps.index_axis(Axis(0), i))
            .for_each(|o, &x, &e| *o = a * x + c * e);
    }
    out
}

/// Loss components of one batch.
pub struct LossTerms<'g, F: Real> {
    pub total: Var<'g, F>,
    pub graph: Var<'g, F>,
    pub puzzle: Option<Var<'g, F>>,
    pub diffusion: Var<'g, F>,
}

/// Builds the combined objective for `batch` on graph `g`.
pub fn batch_loss<'g, F: Real>(
    model: &Model<F>,
    g: &'g Graph<F>,
    bound: &Bound<'g, F>,
    batch: &Batch<F>,
    schedule: &DiffusionSchedule,
) -> Result<LossTerms<'g, F>> {
    let cfg = &model.config;
    let enc = encode(&model.forecast, bound, g.constant(batch.signals.clone()), &batch.mask);
    let lg = graph_loss(enc.forecast, g.constant(batch.target.clone()));
    let lp = match batch.class {
        Some(class) => Some(puzzle_loss(&model.forecast, bound, enc.cond, class)?.0),
        None => None,
    };
    let x_t = corrupt_batch(&batch.future, &batch.eps, &batch.ts, schedule);
    let eps_hat = model.denoiser.predict(
        bound,
        g.constant(x_t),
        g.constant(timestep_batch(&batch.ts, model.denoiser.shape.temb_dim)),
        enc.cond,
    );
    let ld = diffusion_loss(g.constant(batch.eps.clone()), eps_hat);
    let inner = match lp {
        Some(lp) => lg + lp.scale(F::cast(cfg.lambda2)),
        None => lg,
    };
    Ok(LossTerms {
        total: inner.scale(F::cast(cfg.lambda1)) + ld,
        graph: lg,
        puzzle: lp,
        diffusion: ld,
    })
}

/// Mean loss components over one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub total: f64,
    pub graph: f64,
    pub puzzle: f64,
    pub diffusion: f64,
    pub batches: usize,
}

pub const HISTORY_HEADER: &str = "epoch,total,graph,puzzle,diffusion";

/// Loss history as CSV with [`HISTORY_HEADER`].
pub fn history_csv(history: &[EpochStats]) -> String {
    let mut out = format!("{HISTORY_HEADER}\n");
    for h in history {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            h.epoch, h.total, h.graph, h.puzzle, h.diffusion
        ));
    }
    out
}

/// Runs the configured number of epochs over `windows`, updating `model`.
pub fn train_windows<F: Real>(
    model: &mut Model<F>,
    windows: &WindowSet<F>,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<Vec<EpochStats>> {
    if windows.is_empty() {
        return Err(Error::Config("training data yields no windows".into()));
    }
    let cfg = model.config.clone();
    let schedule = model.schedule()?;
    let mut adam = Adam::new(
        &model.store,
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
    );
    let root = RngStream::new(cfg.seed).split(STREAM_TRAIN);
    let n = windows.len();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let epoch_rng = root.split(epoch as u64);
        let mut order: Vec<usize> = (0..n).collect();
        epoch_rng.split(u64::MAX).shuffle(&mut order);
        let mut sums = [0.0f64; 4];
        let batches = n.div_ceil(cfg.batch_size);
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let (past, future) = windows.select(idx);
            let batch = prepare_batch(model, &past, &future, &epoch_rng.split(bi as u64))?;
            let g = Graph::new();
            let bound = model.store.bind(&g);
            let terms = batch_loss(model, &g, &bound, &batch, &schedule)?;
            let total = terms.total.item().as_f64();
            if !total.is_finite() {
                return Err(Error::Training {
                    epoch,
                    batch: bi,
                    message: format!("loss became {total}"),
                });
            }
            sums[0] += total;
            sums[1] += terms.graph.item().as_f64();
            sums[2] += terms.puzzle.map_or(0.0, |p| p.item().as_f64());
            sums[3] += terms.diffusion.item().as_f64();
            let grads = bound.gradients(&g.backward(terms.total));
            drop(bound);
            adam.step(&mut model.store, &grads).map_err(|e| match e {
                Error::NonFiniteGradient(name) => Error::Training {
                    epoch,
                    batch: bi,
                    message: format!("non-finite gradient for `{name}`"),
                },
                other => other,
            })?;
        }
        let k = batches as f64;
        let stats = EpochStats {
            epoch,
            total: sums[0] / k,
            graph: sums[1] / k,
            puzzle: sums[2] / k,
            diffusion: sums[3] / k,
            batches,
        };
        on_epoch(&stats);
        history.push(stats);
    }
    Ok(history)
}

/// Windows the dataset, builds a model from the config seed and trains it.
pub fn train<F: Real>(
    dataset: &PoseDataset,
    config: &TrainConfig,
    on_epoch: impl FnMut(&EpochStats),
) -> Result<(Model<F>, Vec<EpochStats>)> {
    let mut model = Model::<F>::new(config, dataset.joints, dataset.channels)?;
    let windows = dataset_windows(dataset, config)?;
    let set = WindowSet::from_windows(&windows, dataset.joints, dataset.channels, config.past, config.future());
    let history = train_windows(&mut model, &set, on_epoch)?;
    Ok((model, history))
}

/// [`train`] at the configured precision, returning single-precision
/// parameters.
pub fn train_model(
    dataset: &PoseDataset,
    config: &TrainConfig,
    on_epoch: impl FnMut(&EpochStats),
) -> Result<(Model<f32>, Vec<EpochStats>)> {
    match config.precision {
        Precision::F32 => train::<f32>(dataset, config, on_epoch),
        Precision::F64 => {
            let (m, h) = train::<f64>(dataset, config, on_epoch)?;
            Ok((m.cast(), h))
        }
    }
}

/// Convenience for tests: a single batch built from the first `b` windows.
pub fn first_batch<F: Real>(model: &Model<F>, windows: &WindowSet<F>, b: usize, rng: &RngStream) -> Result<Batch<F>> {
    let b = b.min(windows.len());
    let past = windows.past.slice(s![..b, .., .., ..]).to_owned();
    let future = windows.future.slice(s![..b, .., .., ..]).to_owned();
    prepare_batch(model, &past, &future, rng)
}
