use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use crate::diffusion::{PosteriorVariance, ScheduleKind};
use crate::error::{Error, Result};
use crate::jigsaw::PuzzleKind;
use crate::kv::KvFile;
use crate::pose::NormPolicy;

/// Statistic that turns `M` per-generation scores into one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregation {
    #[default]
    Min,
    Mean,
    Median,
    Max,
}

impl Aggregation {
    pub const ALL: [Aggregation; 4] = [
        Aggregation::Min,
        Aggregation::Mean,
        Aggregation::Median,
        Aggregation::Max,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Aggregation::Min => "min",
            Aggregation::Mean => "mean",
            Aggregation::Median => "median",
            Aggregation::Max => "max",
        }
    }
}

/// Which puzzle, if any, is solved during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PuzzleMode {
    #[default]
    Inter,
    Intra,
    Off,
}

impl PuzzleMode {
    pub fn kind(self) -> Option<PuzzleKind> {
        match self {
            PuzzleMode::Inter => Some(PuzzleKind::Inter),
            PuzzleMode::Intra => Some(PuzzleKind::Intra),
            PuzzleMode::Off => None,
        }
    }
}

/// Target of the graph forecasting loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GraphTarget {
    /// Mean of the future frames.
    #[default]
    Future,
    /// Mean of the past frames.
    Past,
}

/// How a residual `x+ - u+` becomes a score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreTransform {
    /// Smooth-L1 of the residual norm.
    #[default]
    Smooth,
    /// The residual norm itself.
    L2,
}

/// Floating-point width used for training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    F32,
    F64,
}

macro_rules! text_enum {
    ($ty:ty { $($variant:ident => $text:literal),* $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $(<$ty>::$variant => $text),* })
            }
        }

        impl FromStr for $ty {
            type Err = String;

            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $($text => Ok(<$ty>::$variant),)*
                    _ => Err(format!("expected one of: {}", [$($text),*].join(", "))),
                }
            }
        }
    };
}

text_enum!(Aggregation { Min => "min", Mean => "mean", Median => "median", Max => "max" });
text_enum!(PuzzleMode { Inter => "inter", Intra => "intra", Off => "off" });
text_enum!(GraphTarget { Future => "future", Past => "past" });
text_enum!(ScoreTransform { Smooth => "smooth", L2 => "l2" });
text_enum!(Precision { F32 => "f32", F64 => "f64" });
text_enum!(ScheduleKind { Cosine => "cosine", Linear => "linear" });
text_enum!(PosteriorVariance { Beta => "beta", BetaBar => "beta_bar" });
text_enum!(NormPolicy { CenterScale => "center_scale", None => "none" });

/// Every knob of training and scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Window length `L`.
    pub window: usize,
    /// Past frames `l`.
    pub past: usize,
    pub stride: usize,
    /// Embedding width `D`.
    pub dim: usize,
    /// Out-degree of the learned graph.
    pub delta: usize,
    /// Subgraph count.
    pub eta: usize,
    pub hidden: usize,
    /// Diffusion steps `T`.
    pub steps: usize,
    pub schedule: ScheduleKind,
    pub beta_1: f64,
    pub beta_t: f64,
    pub posterior: PosteriorVariance,
    /// Generations per window at scoring time (`M`).
    pub generations: usize,
    pub aggregation: Aggregation,
    pub seed: u64,
    pub puzzle: PuzzleMode,
    pub puzzle_at_inference: bool,
    pub graph_target: GraphTarget,
    pub score_transform: ScoreTransform,
    /// Draw one diffusion step per sample instead of one per batch.
    pub per_sample_t: bool,
    pub normalization: NormPolicy,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda1: 0.01,
            lambda2: 1.0,
            lr: 1e-4,
            batch_size: 1024,
            epochs: 30,
            window: 6,
            past: 3,
            stride: 1,
            dim: 16,
            delta: 5,
            eta: 5,
            hidden: 128,
            steps: 10,
            schedule: ScheduleKind::Cosine,
            beta_1: 1e-4,
            beta_t: 0.01,
            posterior: PosteriorVariance::Beta,
            generations: 50,
            aggregation: Aggregation::Min,
            seed: 0,
            puzzle: PuzzleMode::Inter,
            puzzle_at_inference: true,
            graph_target: GraphTarget::Future,
            score_transform: ScoreTransform::Smooth,
            per_sample_t: false,
            normalization: NormPolicy::CenterScale,
            precision: Precision::F32,
        }
    }
}

macro_rules! config_fields {
    ($m:ident) => {
        $m!(
            lambda1, lambda2, lr, batch_size, epochs, window, past, stride, dim, delta, eta,
            hidden, steps, schedule, beta_1, beta_t, posterior, generations, aggregation, seed,
            puzzle, puzzle_at_inference, graph_target, score_transform, per_sample_t,
            normalization, precision
        )
    };
}

impl TrainConfig {
    /// Reads `key = value` pairs over the defaults; unknown keys fail.
    pub fn from_kv(mut kv: KvFile) -> Result<Self> {
        let mut c = TrainConfig::default();
        macro_rules! read {
            ($($name:ident),*) => {$(
                if let Some(v) = kv.take(stringify!($name))? { c.$name = v; }
            )*};
        }
        config_fields!(read);
        kv.finish()?;
        c.validate()?;
        Ok(c)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_kv(KvFile::read(path)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_kv(KvFile::parse(text, Path::new("<config>"))?)
    }

    /// Every field as `key = value` lines, readable by [`TrainConfig::parse`].
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        macro_rules! write_all {
            ($($name:ident),*) => {$(
                writeln!(out, "{} = {}", stringify!($name), self.$name).unwrap();
            )*};
        }
        config_fields!(write_all);
        out
    }

    pub fn future(&self) -> usize {
        self.window - self.past
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return fail("lambda1 and lambda2 must be non-negative".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("learning rate {} must be positive", self.lr));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return fail("batch_size and epochs must be positive".into());
        }
        if self.past == 0 || self.past >= self.window {
            return fail(format!("need 0 < past < window, got {} and {}", self.past, self.window));
        }
        if self.stride == 0 || self.dim == 0 || self.hidden == 0 || self.steps == 0 {
            return fail("stride, dim, hidden and steps must be positive".into());
        }
        if self.generations == 0 {
            return fail("generations (M) must be at least 1".into());
        }
        if self.delta == 0 {
            return fail("delta must be at least 1".into());
        }
        if self.puzzle != PuzzleMode::Off && self.eta < 2 {
            return fail(format!("eta {} must be at least 2", self.eta));
        }
        if self.schedule == ScheduleKind::Linear
            && !(0.0 < self.beta_1 && self.beta_1 <= self.beta_t && self.beta_t < 1.0)
        {
            return fail("linear schedule needs 0 < beta_1 <= beta_t < 1".into());
        }
        Ok(())
    }

    /// Checks the sizes that depend on the skeleton.
    pub fn validate_for(&self, joints: usize) -> Result<()> {
        if self.delta >= joints {
            return Err(Error::Config(format!(
                "delta {} must be below the joint count {joints}",
                self.delta
            )));
        }
        if self.puzzle != PuzzleMode::Off && self.eta > joints {
            return Err(Error::Config(format!(
                "eta {} exceeds the joint count {joints}",
                self.eta
            )));
        }
        Ok(())
    }
}
