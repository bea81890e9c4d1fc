use ndarray::{s, Array2, Array3, Axis};

use super::PoseTrack;
use crate::error::{Error, Result};

/// An `L`-frame slice of one track, split into `l` past frames and `L - l`
/// future frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub video_id: String,
    pub actor_id: String,
    /// Frame index of the first past frame.
    pub start_frame: i64,
    /// `(l, J, C)`.
    pub past: Array3<f64>,
    /// `(L - l, J, C)`.
    pub future: Array3<f64>,
}

impl Window {
    pub fn past_len(&self) -> usize {
        self.past.shape()[0]
    }

    pub fn future_len(&self) -> usize {
        self.future.shape()[0]
    }

    pub fn total_len(&self) -> usize {
        self.past_len() + self.future_len()
    }

    pub fn joints(&self) -> usize {
        self.past.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.past.shape()[2]
    }

    /// Frame indices of the future block.
    pub fn future_frames(&self) -> std::ops::Range<i64> {
        let first = self.start_frame + self.past_len() as i64;
        first..first + self.future_len() as i64
    }
}

/// Cuts `track` into windows starting at offsets `0, stride, 2*stride, ...`.
/// A track shorter than `total` yields no windows.
pub fn make_windows(track: &PoseTrack, total: usize, past: usize, stride: usize) -> Result<Vec<Window>> {
    if past == 0 || past >= total {
        return Err(Error::Config(format!(
            "window split needs 0 < l < L, got l={past} L={total}"
        )));
    }
    if stride == 0 {
        return Err(Error::Config("window stride must be at least 1".into()));
    }
    if track.len() < total {
        return Ok(Vec::new());
    }
    let count = (track.len() - total) / stride + 1;
    Ok((0..count)
        .map(|i| {
            let at = i * stride;
            Window {
                video_id: track.video_id.clone(),
                actor_id: track.actor_id.clone(),
                start_frame: track.start_frame + at as i64,
                past: track.coords.slice(s![at..at + past, .., ..]).to_owned(),
                future: track
                    .coords
                    .slice(s![at + past..at + total, .., ..])
                    .to_owned(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormPolicy {
    #[default]
    CenterScale,
    None,
}

impl NormPolicy {
    pub fn name(self) -> &'static str {
        match self {
            NormPolicy::CenterScale => "center_scale",
            NormPolicy::None => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "center_scale" | "center-scale" => Some(NormPolicy::CenterScale),
            "none" => Some(NormPolicy::None),
            _ => None,
        }
    }
}

/// Smallest scale a window is divided by.
pub const SCALE_FLOOR: f64 = 1e-6;

/// `normalized = (raw - center) / scale`, with `center` a `(J, C)` pose.
#[derive(Debug, Clone, PartialEq)]
pub struct NormTransform {
    pub center: Array2<f64>,
    pub scale: f64,
}

impl NormTransform {
    pub fn identity(joints: usize, channels: usize) -> Self {
        NormTransform {
            center: Array2::zeros((joints, channels)),
            scale: 1.0,
        }
    }

    pub fn apply(&self, block: &Array3<f64>) -> Array3<f64> {
        (block - &self.center.view().insert_axis(Axis(0))) / self.scale
    }

    pub fn invert(&self, block: &Array3<f64>) -> Array3<f64> {
        block * self.scale + self.center.view().insert_axis(Axis(0))
    }
}

/// Centers both blocks on the mean past pose and divides by the standard
/// deviation of the centered past coordinates.
pub fn normalize_window(w: &Window, policy: NormPolicy) -> (Window, NormTransform) {
    let transform = match policy {
        NormPolicy::None => NormTransform::identity(w.joints(), w.channels()),
        NormPolicy::CenterScale => {
            // Shifted mean: exact when every past frame is identical.
            let first = w.past.index_axis(Axis(0), 0).to_owned();
            let center = (&w.past - &first.view().insert_axis(Axis(0)))
                .mean_axis(Axis(0))
                .expect("past block is non-empty")
                + &first;
            // Scale is the spread of all past coordinates about the
            // per-channel centroid, i.e. body size rather than motion.
            let (l, j) = (w.past_len(), w.joints());
            let centroid = w.past.sum_axis(Axis(0)).sum_axis(Axis(0)) / (l * j) as f64;
            let spread = &w.past - &centroid.view().insert_axis(Axis(0)).insert_axis(Axis(0));
            let var = spread.mapv(|v| v * v).mean().unwrap_or(0.0);
            NormTransform {
                center,
                scale: var.sqrt().max(SCALE_FLOOR),
            }
        }
    };
    let out = Window {
        video_id: w.video_id.clone(),
        actor_id: w.actor_id.clone(),
        start_frame: w.start_frame,
        past: transform.apply(&w.past),
        future: transform.apply(&w.future),
    };
    (out, transform)
}
