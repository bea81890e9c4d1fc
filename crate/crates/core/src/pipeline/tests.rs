use super::*;
use crate::numerics::{Graph, RngStream};
use crate::pose::{generate_synthetic, SyntheticSpec, Window};

fn tiny_config() -> TrainConfig {
    TrainConfig {
        dim: 4,
        delta: 2,
        eta: 2,
        hidden: 8,
        steps: 4,
        generations: 3,
        epochs: 2,
        batch_size: 8,
        lr: 1e-3,
        ..TrainConfig::default()
    }
}

fn tiny_data(seed: u64) -> crate::pose::PoseDataset {
    let spec = SyntheticSpec {
        seed,
        videos: 2,
        actors: 2,
        frames: 14,
        joints: 5,
        ..SyntheticSpec::default()
    };
    generate_synthetic(&spec).unwrap().dataset
}

#[test]
fn total_loss_weights() {
    assert_eq!(total_loss(2.0, 3.0, 0.5, 0.5, 2.0), 4.5);
    assert_eq!(total_loss(2.0, 3.0, 0.5, 0.0, 2.0), 0.5);
}

#[test]
fn aggregation_examples() {
    let s = [3.0, 1.0, 2.0];
    assert_eq!(aggregate_scores(&s, Aggregation::Min).unwrap(), 1.0);
    assert_eq!(aggregate_scores(&s, Aggregation::Mean).unwrap(), 2.0);
    assert_eq!(aggregate_scores(&s, Aggregation::Median).unwrap(), 2.0);
    assert_eq!(aggregate_scores(&s, Aggregation::Max).unwrap(), 3.0);
    assert_eq!(aggregate_scores(&[4.0, 1.0, 3.0, 2.0], Aggregation::Median).unwrap(), 2.5);
    assert!(aggregate_scores(&[], Aggregation::Min).is_err());
}

#[test]
fn actor_fusion() {
    let v = multi_actor_score(&[1.0, 3.0]).unwrap();
    assert!((v - (2.0 + 2f64.ln())).abs() < 1e-12);
    assert_eq!(multi_actor_score(&[0.7]).unwrap(), 0.7);
    assert!(multi_actor_score(&[-1.0]).is_err());
}

#[test]
fn training_is_deterministic() {
    let data = tiny_data(3);
    let cfg = tiny_config();
    let (m1, h1) = train::<f64>(&data, &cfg, |_| {}).unwrap();
    let (m2, h2) = train::<f64>(&data, &cfg, |_| {}).unwrap();
    assert_eq!(h1, h2);
    assert_eq!(m1.store.values(), m2.store.values());
    assert_eq!(h1.len(), 2);
    assert!(h1.iter().all(|h| h.total.is_finite()));
    let csv = history_csv(&h1);
    assert!(csv.starts_with(HISTORY_HEADER));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn parallel_scores_match_sequential() {
    let data = tiny_data(4);
    let cfg = tiny_config();
    let model = Model::<f32>::new(&cfg, 5, 2).unwrap();
    let a = score_dataset(&model, &data, false).unwrap();
    let b = score_dataset(&model, &data, true).unwrap();
    assert_eq!(a, b);
    assert!(a.iter().all(|r| r.scores.len() == 3 && r.aggregate >= 0.0));
    let fused = fuse_actors(&a).unwrap();
    assert_eq!(fused.len(), a.len() / 2);
}

#[test]
fn generation_ignores_the_future() {
    let cfg = tiny_config();
    let model = Model::<f64>::new(&cfg, 5, 2).unwrap();
    let windows = dataset_windows(&tiny_data(5), &cfg).unwrap();
    let w = &windows[0];
    let mut altered: Window = w.clone();
    altered.future.mapv_inplace(|x| x + 10.0);
    let sched = model.schedule().unwrap();
    let adj = model.adjacency().unwrap();
    let rng = RngStream::new(9);
    let past = w.past.clone();
    let a = generate_futures(&model, &sched, &adj, &past, &rng).unwrap();
    let b = generate_futures(&model, &sched, &adj, &altered.past, &rng).unwrap();
    assert_eq!(a, b);
    let ra = score_window(&model, &sched, &adj, w, &rng).unwrap();
    let rb = score_window(&model, &sched, &adj, &altered, &rng).unwrap();
    assert!(rb.aggregate > ra.aggregate);
}

#[test]
fn zero_lambda1_cuts_forecast_head() {
    let cfg = TrainConfig {
        lambda1: 0.0,
        ..tiny_config()
    };
    let model = Model::<f64>::new(&cfg, 5, 2).unwrap();
    let windows = dataset_windows(&tiny_data(6), &cfg).unwrap();
    let set = WindowSet::<f64>::from_windows(&windows, 5, 2, cfg.past, cfg.future());
    let batch = first_batch(&model, &set, 4, &RngStream::new(1)).unwrap();
    let sched = model.schedule().unwrap();
    let g = Graph::new();
    let bound = model.store.bind(&g);
    let terms = batch_loss(&model, &g, &bound, &batch, &sched).unwrap();
    let grads = bound.gradients(&g.backward(terms.total));
    for ((name, _), grad) in model.store.iter().zip(&grads) {
        let norm: f64 = grad.iter().map(|x| x * x).sum();
        if name.starts_with("forecast.head") || name.starts_with("puzzle.") {
            assert_eq!(norm, 0.0, "{name}");
        }
        if name == "forecast.cond.w" || name == "forecast.w" {
            assert!(norm > 0.0, "{name}");
        }
    }
}

#[test]
fn checkpoint_round_trip() {
    let cfg = TrainConfig {
        puzzle: PuzzleMode::Intra,
        ..tiny_config()
    };
    let model = Model::<f32>::new(&cfg, 5, 2).unwrap();
    let bytes = model.to_checkpoint().to_bytes();
    let ckpt = crate::numerics::checkpoint::Checkpoint::from_bytes(&bytes).unwrap();
    let back = Model::<f32>::from_checkpoint(&ckpt).unwrap();
    assert_eq!(back.config, cfg);
    assert_eq!(back.store.values(), model.store.values());
    assert_eq!((back.joints, back.channels), (5, 2));
}

#[test]
fn f64_training_casts_to_f32() {
    let cfg = TrainConfig {
        precision: Precision::F64,
        epochs: 1,
        ..tiny_config()
    };
    let (m, h) = train_model(&tiny_data(7), &cfg, |_| {}).unwrap();
    assert_eq!(h.len(), 1);
    assert_eq!(m.param_count(), Model::<f32>::new(&cfg, 5, 2).unwrap().param_count());
}
