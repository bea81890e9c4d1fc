use std::collections::BTreeMap;

use approx::assert_relative_eq;
use ndarray::{Array2, Array3, ArrayD, IxDyn};
use proptest::prelude::*;

use gicisad::diffusion::{build_schedule, ScheduleKind};
use gicisad::eval::{auroc_scores, curve_area, frame_scores};
use gicisad::graph::build_adjacency;
use gicisad::jigsaw::{extract_subgraphs, shuffle, Permutation, PuzzleKind};
use gicisad::numerics::checkpoint::Checkpoint;
use gicisad::numerics::{Adam, AdamConfig, ParamStore, RngStream};
use gicisad::pipeline::{aggregate_scores, multi_actor_score, Aggregation, WindowScore};
use gicisad::pose::{make_windows, normalize_window, NormPolicy, PoseTrack};

fn scores_and_labels() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(-5.0f64..5.0, n),
            prop::collection::vec(any::<bool>(), n),
        )
    })
    .prop_filter("both classes", |(_, l)| l.iter().any(|&x| x) && l.iter().any(|&x| !x))
}

fn permutation(n: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..n).collect::<Vec<_>>()).prop_shuffle()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn auroc_ignores_increasing_transforms((s, l) in scores_and_labels(), a in 0.1f64..10.0, b in -3.0f64..3.0) {
        let base = auroc_scores(&s, &l).unwrap().auroc;
        let affine: Vec<f64> = s.iter().map(|x| a * x + b).collect();
        let exp: Vec<f64> = s.iter().map(|x| x.exp()).collect();
        prop_assert_eq!(auroc_scores(&affine, &l).unwrap().auroc, base);
        prop_assert_eq!(auroc_scores(&exp, &l).unwrap().auroc, base);
    }

    #[test]
    fn roc_curve_is_monotone((s, l) in scores_and_labels()) {
        let roc = auroc_scores(&s, &l).unwrap();
        prop_assert_eq!(roc.curve.first().copied(), Some((0.0, 0.0)));
        prop_assert_eq!(roc.curve.last().copied(), Some((1.0, 1.0)));
        for w in roc.curve.windows(2) {
            prop_assert!(w[0].0 <= w[1].0 && w[0].1 <= w[1].1);
        }
        assert_relative_eq!(curve_area(&roc.curve), roc.auroc, epsilon = 1e-12);
    }

    #[test]
    fn auroc_matches_pair_counting((s, l) in scores_and_labels()) {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &li) in l.iter().enumerate() {
            for (j, &lj) in l.iter().enumerate() {
                if li && !lj {
                    pairs += 1.0;
                    wins += if s[i] > s[j] { 1.0 } else if s[i] == s[j] { 0.5 } else { 0.0 };
                }
            }
        }
        assert_relative_eq!(auroc_scores(&s, &l).unwrap().auroc, wins / pairs, epsilon = 1e-12);
    }

    #[test]
    fn frame_scores_scale_linearly(raw in prop::collection::vec(0.0f64..4.0, 1..12), c in 0.01f64..20.0) {
        let spans: BTreeMap<String, (i64, i64)> = [("v".to_string(), (0, raw.len() as i64 + 5))].into();
        let make = |k: f64| -> Vec<WindowScore> {
            raw.iter()
                .enumerate()
                .map(|(i, &s)| WindowScore { video_id: "v".into(), start_frame: i as i64, score: k * s })
                .collect()
        };
        let one = frame_scores(&make(1.0), &spans, 6, 3).unwrap();
        let scaled = frame_scores(&make(c), &spans, 6, 3).unwrap();
        prop_assert_eq!(one.len(), 1);
        for (a, b) in one[0].scores.iter().zip(&scaled[0].scores) {
            assert_relative_eq!(c * a, *b, max_relative = 1e-12);
        }
        prop_assert_eq!(one[0].scores.len(), raw.len() + 6);
    }

    #[test]
    fn aggregation_is_bounded_and_order_free(s in prop::collection::vec(0.0f64..10.0, 1..30), seed in any::<u64>()) {
        let mut shuffled = s.clone();
        RngStream::new(seed).shuffle(&mut shuffled);
        let lo = s.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for a in Aggregation::ALL {
            let v = aggregate_scores(&s, a).unwrap();
            prop_assert!(lo <= v + 1e-12 && v <= hi + 1e-12);
            if a != Aggregation::Mean {
                prop_assert_eq!(v, aggregate_scores(&shuffled, a).unwrap());
            } else {
                assert_relative_eq!(v, aggregate_scores(&shuffled, a).unwrap(), max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn actor_fusion_dominates_mean(s in prop::collection::vec(0.0f64..10.0, 1..6)) {
        let fused = multi_actor_score(&s).unwrap();
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        let tied = s.iter().all(|&x| x == s[0]);
        prop_assert!(fused >= mean - 1e-12);
        prop_assert_eq!(fused - mean < 1e-15, tied);
    }

    #[test]
    fn adjacency_rows_and_rescaling(seed in any::<u64>(), k in 4usize..14, delta in 1usize..4, scale in prop::collection::vec(0.01f64..100.0, 14)) {
        let mut rng = RngStream::new(seed);
        let v: Array2<f64> = rng.normal_array::<f64>(&[k, 6]).into_dimensionality().unwrap();
        let adj = build_adjacency(v.view(), delta).unwrap();
        for i in 0..k {
            prop_assert_eq!(adj.edges[[i, i]], 0);
            prop_assert_eq!(adj.edges.row(i).iter().map(|&x| x as usize).sum::<usize>(), delta);
        }
        let scaled = Array2::from_shape_fn((k, 6), |(i, j)| v[[i, j]] * scale[i]);
        prop_assert_eq!(build_adjacency(scaled.view(), delta).unwrap().edges, adj.edges);
    }

    #[test]
    fn shuffles_are_conjugations(seed in any::<u64>(), eta in 2usize..5) {
        let mut rng = RngStream::new(seed);
        let v: Array2<f64> = rng.normal_array::<f64>(&[12, 8]).into_dimensionality().unwrap();
        let adj = build_adjacency(v.view(), 3).unwrap();
        let part = extract_subgraphs(adj.edges.view(), eta).unwrap();
        prop_assert_eq!(part.sizes().len(), eta);
        prop_assert!(part.sizes().iter().all(|&n| n > 0));
        prop_assert_eq!(extract_subgraphs(adj.edges.view(), eta).unwrap(), part.clone());
        let a = adj.edges.mapv(f64::from);
        for kind in [PuzzleKind::Inter, PuzzleKind::Intra] {
            let (out, mv) = shuffle(kind, adj.edges.view(), &part, &mut rng).unwrap();
            let p = mv.perm.matrix();
            prop_assert_eq!(out.mapv(f64::from), p.dot(&a).dot(&p.t()));
            prop_assert!(!mv.perm.is_identity());
            prop_assert!(mv.class < mv.classes);
            for u in 0..12 {
                if mv.perm.map[u] != u {
                    prop_assert!(mv.subgraphs.contains(&part.assignment[u]));
                }
            }
        }
    }

    #[test]
    fn permutation_inverse(map in (1usize..20).prop_flat_map(permutation)) {
        let n = map.len();
        let p = Permutation::new(map).unwrap();
        let a = Array2::from_shape_fn((n, n), |(i, j)| (i * n + j) as u32);
        prop_assert_eq!(p.inverse().apply(p.apply(a.view()).view()), a);
        let m = p.matrix();
        prop_assert_eq!(m.dot(&m.t()), Array2::eye(n));
    }

    #[test]
    fn schedules_decrease(steps in 1usize..200, b1 in 1e-5f64..0.05, gap in 0.0f64..0.3) {
        for kind in [ScheduleKind::Linear, ScheduleKind::Cosine] {
            let s = build_schedule(kind, steps, b1, b1 + gap).unwrap();
            prop_assert_eq!(s.alpha_bar(0), 1.0);
            for t in 1..=steps {
                prop_assert!(s.beta(t) > 0.0 && s.beta(t) < 1.0);
                prop_assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            }
        }
    }

    #[test]
    fn windows_tile_the_track(len in 0usize..40, total in 2usize..10, stride in 1usize..4, seed in any::<u64>()) {
        let past = 1 + (seed as usize) % (total - 1);
        let track = PoseTrack {
            video_id: "v".into(),
            actor_id: "a".into(),
            start_frame: 7,
            coords: Array3::from_shape_fn((len, 3, 2), |(f, j, c)| (f * 6 + j * 2 + c) as f64),
        };
        let ws = make_windows(&track, total, past, stride).unwrap();
        let want = if len < total { 0 } else { (len - total) / stride + 1 };
        prop_assert_eq!(ws.len(), want);
        for (i, w) in ws.iter().enumerate() {
            prop_assert_eq!(w.start_frame, 7 + (i * stride) as i64);
            prop_assert_eq!(w.past.shape()[0], past);
            prop_assert_eq!(w.future.shape()[0], total - past);
            prop_assert!(w.start_frame + total as i64 <= 7 + len as i64);
        }
    }

    #[test]
    fn normalization_round_trips(seed in any::<u64>(), offset in -2.0f64..2.0, spread in 0.01f64..3.0) {
        let mut rng = RngStream::new(seed);
        let coords = rng.normal_array::<f64>(&[6, 4, 2]).mapv(|x| offset + spread * x);
        let track = PoseTrack {
            video_id: "v".into(),
            actor_id: "a".into(),
            start_frame: 0,
            coords: coords.into_dimensionality().unwrap(),
        };
        let w = &make_windows(&track, 6, 3, 1).unwrap()[0];
        let (n, tr) = normalize_window(w, NormPolicy::CenterScale);
        prop_assert!(tr.scale > 0.0);
        for (a, b) in tr.invert(&n.past).iter().zip(w.past.iter()) {
            assert_relative_eq!(*a, *b, epsilon = 1e-9);
        }
        for (a, b) in tr.invert(&n.future).iter().zip(w.future.iter()) {
            assert_relative_eq!(*a, *b, epsilon = 1e-9);
        }
    }

    #[test]
    fn streams_replay(seed in any::<u64>(), label in any::<u64>()) {
        let a: Vec<f64> = RngStream::new(seed).split(label).normal_vec(16);
        let b: Vec<f64> = RngStream::new(seed).split(label).normal_vec(16);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn adam_ignores_zero_gradients(values in prop::collection::vec(-3.0f64..3.0, 1..10), steps in 1usize..5) {
        let mut store = ParamStore::<f64>::new();
        store.register("w", ArrayD::from_shape_vec(IxDyn(&[values.len()]), values.clone()).unwrap());
        let before = store.clone();
        let mut adam = Adam::new(&store, AdamConfig::default());
        for s in 0..steps {
            adam.step(&mut store, &[ArrayD::zeros(IxDyn(&[values.len()]))]).unwrap();
            prop_assert_eq!(adam.state.step, s as u64 + 1);
        }
        prop_assert_eq!(store.values(), before.values());
    }

    #[test]
    fn checkpoint_bytes_round_trip(values in prop::collection::vec(-1e6f32..1e6, 1..30), meta in "[a-z =\n]{0,40}") {
        let mut store = ParamStore::<f32>::new();
        store.register("a.b", ArrayD::from_shape_vec(IxDyn(&[values.len()]), values).unwrap());
        let ck = Checkpoint::from_store(&meta, &store);
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        prop_assert_eq!(back.metadata, meta);
        prop_assert_eq!(back.tensors, ck.tensors);
    }
}
