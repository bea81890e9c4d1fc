use ndarray::{Array2, ArrayD, Ix2};

use super::config::TrainConfig;
use crate::diffusion::{build_schedule, DenoiserParams, DenoiserShape, DiffusionSchedule};
use crate::error::{Error, Result};
use crate::forecaster::{ForecastParams, ForecastShape};
use crate::graph::{build_adjacency, Adjacency};
use crate::jigsaw::{class_count, extract_subgraphs, shuffle, PuzzleMove};
use crate::numerics::checkpoint::Checkpoint;
use crate::numerics::{ParamStore, Real, RngStream};

/// Stream labels under the seed root.
pub(crate) const STREAM_INIT: u64 = 1;
pub(crate) const STREAM_TRAIN: u64 = 2;
pub(crate) const STREAM_SCORE: u64 = 3;

/// Parameter layout, configuration and values of a full model.
#[derive(Debug, Clone)]
pub struct Model<F: Real> {
    pub config: TrainConfig,
    pub joints: usize,
    pub channels: usize,
    pub forecast: ForecastParams,
    pub denoiser: DenoiserParams,
    pub store: ParamStore<F>,
}

impl<F: Real> Model<F> {
    /// Fresh parameters drawn from the config seed.
    pub fn new(config: &TrainConfig, joints: usize, channels: usize) -> Result<Self> {
        config.validate()?;
        config.validate_for(joints)?;
        let mut store = ParamStore::<f64>::new();
        let root = RngStream::new(config.seed).split(STREAM_INIT);
        let classes = config.puzzle.kind().map(|k| class_count(k, config.eta));
        let forecast = ForecastParams::register(
            &mut store,
            ForecastShape {
                joints,
                channels,
                past: config.past,
                dim: config.dim,
                hidden: config.hidden,
                classes,
            },
            &mut root.split(0),
        );
        let denoiser = DenoiserParams::register(
            &mut store,
            DenoiserShape::standard(joints, config.future(), channels, config.dim),
            &mut root.split(1),
        );
        Ok(Model {
            config: config.clone(),
            joints,
            channels,
            forecast,
            denoiser,
            store: store.cast(),
        })
    }

    pub fn cast<G: Real>(&self) -> Model<G> {
        Model {
            config: self.config.clone(),
            joints: self.joints,
            channels: self.channels,
            forecast: self.forecast.clone(),
            denoiser: self.denoiser.clone(),
            store: self.store.cast(),
        }
    }

    pub fn schedule(&self) -> Result<DiffusionSchedule> {
        build_schedule(
            self.config.schedule,
            self.config.steps,
            self.config.beta_1,
            self.config.beta_t,
        )
    }

    /// Current learned adjacency.
    pub fn adjacency(&self) -> Result<Adjacency> {
        let v = self
            .store
            .get(self.forecast.v)
            .view()
            .into_dimensionality::<Ix2>()
            .map_err(|e| Error::contract(e.to_string()))?;
        build_adjacency(v, self.config.delta)
    }

    /// Attention support `A' + I` after an optional puzzle move drawn from
    /// `rng`, together with the move.
    pub fn puzzle_mask(&self, adj: &Adjacency, apply: bool, rng: &mut RngStream) -> Result<(ArrayD<F>, Option<PuzzleMove>)> {
        let kind = match (apply, self.config.puzzle.kind()) {
            (true, Some(kind)) => kind,
            _ => return Ok((adj.attention_mask(), None)),
        };
        let partition = extract_subgraphs(adj.edges.view(), self.config.eta)?;
        let (permuted, mv) = shuffle(kind, adj.edges.view(), &partition, rng)?;
        Ok((support_mask(&permuted), Some(mv)))
    }

    pub fn param_count(&self) -> usize {
        self.store.scalar_count()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = format!(
            "joints = {}\nchannels = {}\n{}",
            self.joints,
            self.channels,
            self.config.to_kv()
        );
        Checkpoint::from_store(&meta, &self.store)
    }

    /// Rebuilds the layout from the checkpoint's metadata and loads values.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut joints = None;
        let mut channels = None;
        let mut rest = String::new();
        for line in ckpt.metadata.lines() {
            match line.split_once('=').map(|(k, v)| (k.trim(), v.trim())) {
                Some(("joints", v)) => joints = v.parse::<usize>().ok(),
                Some(("channels", v)) => channels = v.parse::<usize>().ok(),
                _ => {
                    rest.push_str(line);
                    rest.push('\n');
                }
            }
        }
        let (Some(joints), Some(channels)) = (joints, channels) else {
            return Err(Error::Checkpoint("metadata lacks joints/channels".into()));
        };
        let config = TrainConfig::parse(&rest)
            .map_err(|e| Error::Checkpoint(format!("embedded config: {e}")))?;
        let mut model = Model::<F>::new(&config, joints, channels)?;
        ckpt.load_into(&mut model.store)?;
        if model.store.values().iter().any(|v| v.iter().any(|x| !x.is_finite())) {
            return Err(Error::Scoring("checkpoint holds non-finite parameters".into()));
        }
        Ok(model)
    }
}

/// `A + I` as a real `(K, K)` mask.
pub fn support_mask<F: Real>(edges: &Array2<u8>) -> ArrayD<F> {
    let k = edges.nrows();
    Array2::from_shape_fn((k, k), |(i, j)| {
        if i == j || edges[[i, j]] != 0 {
            F::one()
        } else {
            F::zero()
        }
    })
    .into_dyn()
}
