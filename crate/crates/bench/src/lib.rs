//! Shared fixtures for the criterion benches.

use gicisad::pipeline::{dataset_windows, Model, TrainConfig, WindowSet};
use gicisad::pose::{generate_synthetic, SyntheticSpec, Window};
use ndarray::Array2;

/// Default-sized model (J=17, C=2) at single precision.
pub fn default_model() -> Model<f32> {
    Model::new(&TrainConfig::default(), 17, 2).expect("default config is valid")
}

/// Normalized windows from a small synthetic set.
pub fn windows(config: &TrainConfig) -> Vec<Window> {
    let spec = SyntheticSpec {
        videos: 2,
        frames: 40,
        ..SyntheticSpec::default()
    };
    let data = generate_synthetic(&spec).expect("valid spec");
    dataset_windows(&data.dataset, config).expect("windows")
}

pub fn window_set(config: &TrainConfig) -> WindowSet<f32> {
    WindowSet::from_windows(&windows(config), 17, 2, config.past, config.future())
}

/// Ring graph on `k` nodes where each node also links to the node two
/// steps ahead.
pub fn ring(k: usize) -> Array2<u8> {
    Array2::from_shape_fn((k, k), |(i, j)| u8::from(j == (i + 1) % k || j == (i + 2) % k))
}
