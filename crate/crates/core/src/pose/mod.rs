//! Pose tracks, frame labels, sliding windows, and the synthetic motion
//! generator.

mod io;
mod skeleton;
mod synthetic;
mod window;

use std::collections::BTreeMap;

use ndarray::Array3;

pub use io::{
    format_poses, load_pose_dataset, parse_labels, parse_poses, read_labels, read_poses, write_labels, write_poses, LABELS_FILE,
    POSES_FILE,
};
pub use skeleton::{Region, Skeleton};
pub use synthetic::{generate_synthetic, AnomalyKind, AnomalySpan, SyntheticData, SyntheticSpec};
pub use window::{make_windows, normalize_window, NormPolicy, NormTransform, Window, SCALE_FLOOR};

/// One actor's consecutive poses within one video.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseTrack {
    pub video_id: String,
    pub actor_id: String,
    /// Index of the first frame; frames are `start_frame..start_frame + len`.
    pub start_frame: i64,
    /// `(frames, joints, channels)`.
    pub coords: Array3<f64>,
}

impl PoseTrack {
    pub fn len(&self) -> usize {
        self.coords.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn joints(&self) -> usize {
        self.coords.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.coords.shape()[2]
    }

    pub fn end_frame(&self) -> i64 {
        self.start_frame + self.len() as i64
    }
}

/// Tracks sharing a joint count and channel count.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseDataset {
    pub joints: usize,
    pub channels: usize,
    pub tracks: Vec<PoseTrack>,
}

impl PoseDataset {
    pub fn new(joints: usize, channels: usize) -> Self {
        PoseDataset {
            joints,
            channels,
            tracks: Vec::new(),
        }
    }

    /// Frame span `[first, last]` of each video, over all of its actors.
    pub fn video_spans(&self) -> BTreeMap<String, (i64, i64)> {
        let mut spans: BTreeMap<String, (i64, i64)> = BTreeMap::new();
        for t in &self.tracks {
            let e = spans
                .entry(t.video_id.clone())
                .or_insert((t.start_frame, t.end_frame() - 1));
            e.0 = e.0.min(t.start_frame);
            e.1 = e.1.max(t.end_frame() - 1);
        }
        spans
    }
}

/// Ground truth per `(video, frame)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelSet {
    labels: BTreeMap<(String, i64), bool>,
}

/// A single ground-truth entry.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameLabel {
    pub video_id: String,
    pub frame: i64,
    pub anomalous: bool,
}

impl LabelSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a label; returns false if `(video, frame)` was already labeled.
    pub fn insert(&mut self, label: FrameLabel) -> bool {
        use std::collections::btree_map::Entry;
        match self.labels.entry((label.video_id, label.frame)) {
            Entry::Occupied(_) => false,
            Entry::Vacant(v) => {
                v.insert(label.anomalous);
                true
            }
        }
    }

    /// Sets a label, OR-ing with any existing value.
    pub fn mark(&mut self, video_id: &str, frame: i64, anomalous: bool) {
        let e = self
            .labels
            .entry((video_id.to_string(), frame))
            .or_insert(false);
        *e |= anomalous;
    }

    pub fn get(&self, video_id: &str, frame: i64) -> Option<bool> {
        self.labels.get(&(video_id.to_string(), frame)).copied()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn anomalous_count(&self) -> usize {
        self.labels.values().filter(|&&a| a).count()
    }

    pub fn iter(&self) -> impl Iterator<Item = FrameLabel> + '_ {
        self.labels.iter().map(|((v, f), &a)| FrameLabel {
            video_id: v.clone(),
            frame: *f,
            anomalous: a,
        })
    }
}
