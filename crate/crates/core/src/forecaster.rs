//! Single-layer graph attention over the (possibly shuffled) learned graph,
//! the future-average forecasting head, the conditioning vector and the
//! puzzle classifier.
//!
//! Every function works on a batch: node signals are `(B, K, l*C)`, the
//! attention support mask `(K, K)` is shared by the batch.

use ndarray::{Array2, Array4, ArrayD, Axis, IxDyn};

use crate::error::{Error, Result};
use crate::graph::init_embeddings;
use crate::numerics::{Bound, Graph, ParamId, ParamStore, Real, RngStream, Var, LEAKY_SLOPE};

/// Shapes of the forecasting branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForecastShape {
    pub joints: usize,
    pub channels: usize,
    pub past: usize,
    pub dim: usize,
    pub hidden: usize,
    /// Puzzle classes; `None` leaves the puzzle head out.
    pub classes: Option<usize>,
}

impl ForecastShape {
    pub fn signal_len(&self) -> usize {
        self.past * self.channels
    }
}

/// Handles of the forecasting parameters inside a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastParams {
    pub shape: ForecastShape,
    /// Node embeddings `(K, D)`.
    pub v: ParamId,
    /// Input projection `(l*C, D)`.
    pub w: ParamId,
    /// Attention vector `(4D,)`, split as `[s_v(k), s_x(k), s_v(n), s_x(n)]`.
    pub s: ParamId,
    pub head1_w: ParamId,
    pub head1_b: ParamId,
    pub head2_w: ParamId,
    pub head2_b: ParamId,
    pub cond_w: ParamId,
    pub cond_b: ParamId,
    pub puzzle: Option<(ParamId, ParamId)>,
}

pub(crate) fn dense(rng: &mut RngStream, shape: &[usize], fan_in: usize) -> ArrayD<f64> {
    rng.normal_array::<f64>(shape) * (1.0 / (fan_in as f64).sqrt())
}

impl ForecastParams {
    pub fn register(store: &mut ParamStore<f64>, shape: ForecastShape, rng: &mut RngStream) -> Self {
        let (k, d, h, c, inp) = (
            shape.joints,
            shape.dim,
            shape.hidden,
            shape.channels,
            shape.signal_len(),
        );
        let v = init_embeddings(k, d, &mut rng.split(0)).into_dyn();
        let mut rng = rng.split(1);
        let zeros = |n: usize| ArrayD::<f64>::zeros(IxDyn(&[n]));
        ForecastParams {
            shape,
            v: store.register("graph.v", v),
            w: store.register("forecast.w", dense(&mut rng, &[inp, d], inp)),
            s: store.register("forecast.s", dense(&mut rng, &[4 * d], 2 * d)),
            head1_w: store.register("forecast.head1.w", dense(&mut rng, &[d, h], d)),
            head1_b: store.register("forecast.head1.b", zeros(h)),
            head2_w: store.register("forecast.head2.w", dense(&mut rng, &[h, c], h)),
            head2_b: store.register("forecast.head2.b", zeros(c)),
            cond_w: store.register("forecast.cond.w", dense(&mut rng, &[k * d, d], k * d)),
            cond_b: store.register("forecast.cond.b", zeros(d)),
            puzzle: shape.classes.map(|n| {
                (
                    store.register("puzzle.w", dense(&mut rng, &[d, n], d)),
                    store.register("puzzle.b", zeros(n)),
                )
            }),
        }
    }
}

/// `(B, l, K, C)` past blocks to `(B, K, l*C)` node signals.
pub fn node_signals<F: Real>(past: &Array4<F>) -> ArrayD<F> {
    let (b, l, k, c) = past.dim();
    past.view()
        .permuted_axes([0, 2, 1, 3])
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order(IxDyn(&[b, k, l * c]))
        .unwrap()
}

/// `(B, L-l, K, C)` future blocks to the `(B, K, C)` mean over time.
pub fn future_average<F: Real>(future: &Array4<F>) -> ArrayD<F> {
    let n = F::cast(future.len_of(Axis(1)) as f64);
    (future.sum_axis(Axis(1)) / n).into_dyn()
}

/// Intermediate and final outputs of one encoder pass.
pub struct GraphEncoding<'g, F: Real> {
    /// Projected inputs `W x_k`, `(B, K, D)`.
    pub wx: Var<'g, F>,
    /// Attention weights `(B, K, K)`, zero outside the support.
    pub alpha: Var<'g, F>,
    /// Node representations `(B, K, D)`.
    pub h: Var<'g, F>,
    /// Future-average forecast `(B, K, C)`.
    pub forecast: Var<'g, F>,
    /// Conditioning vector `(B, D)`.
    pub cond: Var<'g, F>,
}

/// Attention over `N(k) + {k}` given the projected inputs `wx = W x`.
pub fn attention_coefficients<'g, F: Real>(
    p: &ForecastParams,
    bound: &Bound<'g, F>,
    wx: Var<'g, F>,
    mask: &ArrayD<F>,
) -> Var<'g, F> {
    let (d, k) = (p.shape.dim, p.shape.joints);
    let b = wx.shape()[0];
    let v = bound[p.v];
    let s = bound[p.s];
    let chunk = |i: usize| s.narrow(0, i * d, d).reshape(&[d, 1]);
    // s^T (g_k ++ g_n) = (s0.v_k + s1.Wx_k) + (s2.v_n + s3.Wx_n)
    let src_v = v.matmul(chunk(0)).reshape(&[1, k, 1]);
    let src_x = wx.linear(chunk(1), None);
    let dst_v = v.matmul(chunk(2)).reshape(&[1, 1, k]);
    let dst_x = wx.linear(chunk(3), None).reshape(&[b, 1, k]);
    let logits = (src_v + src_x) + (dst_v + dst_x);
    logits
        .leaky_relu(F::cast(LEAKY_SLOPE))
        .masked_softmax(mask)
}

/// `h_k = ReLU(sum_n alpha_kn W x_n)`.
pub fn node_representations<'g, F: Real>(alpha: Var<'g, F>, wx: Var<'g, F>) -> Var<'g, F> {
    alpha.bmm(wx).relu()
}

/// Shared per-node head on `v_k * h_k`: `D -> hidden -> C`.
pub fn forecast_future_avg<'g, F: Real>(
    p: &ForecastParams,
    bound: &Bound<'g, F>,
    h: Var<'g, F>,
) -> Var<'g, F> {
    (bound[p.v] * h)
        .linear(bound[p.head1_w], Some(bound[p.head1_b]))
        .relu()
        .linear(bound[p.head2_w], Some(bound[p.head2_b]))
}

/// Flattens `H` and projects it to a `D`-vector per sample.
pub fn condition_vector<'g, F: Real>(
    p: &ForecastParams,
    bound: &Bound<'g, F>,
    h: Var<'g, F>,
) -> Var<'g, F> {
    let b = h.shape()[0];
    h.reshape(&[b, p.shape.joints * p.shape.dim])
        .linear(bound[p.cond_w], Some(bound[p.cond_b]))
}

/// Runs the whole encoder on `(B, K, l*C)` signals with support mask
/// `A' + I`.
pub fn encode<'g, F: Real>(
    p: &ForecastParams,
    bound: &Bound<'g, F>,
    signals: Var<'g, F>,
    mask: &ArrayD<F>,
) -> GraphEncoding<'g, F> {
    let wx = signals.linear(bound[p.w], None);
    let alpha = attention_coefficients(p, bound, wx, mask);
    let h = node_representations(alpha, wx);
    let forecast = forecast_future_avg(p, bound, h);
    let cond = condition_vector(p, bound, h);
    GraphEncoding {
        wx,
        alpha,
        h,
        forecast,
        cond,
    }
}

/// Batch mean of the squared L2 residual over all `K*C` entries.
pub fn graph_loss<'g, F: Real>(forecast: Var<'g, F>, target: Var<'g, F>) -> Var<'g, F> {
    let b = forecast.shape()[0];
    (forecast - target).square().sum().scale(F::cast(1.0 / b as f64))
}

/// Cross-entropy of the puzzle head against one class shared by the batch.
/// Returns the loss and the class probabilities `(B, classes)`.
pub fn puzzle_loss<'g, F: Real>(
    p: &ForecastParams,
    bound: &Bound<'g, F>,
    cond: Var<'g, F>,
    class: usize,
) -> Result<(Var<'g, F>, ArrayD<F>)> {
    let (w, b) = p
        .puzzle
        .ok_or_else(|| Error::contract("model was built without a puzzle head"))?;
    let classes = p.shape.classes.unwrap_or(0);
    if class >= classes {
        return Err(Error::contract(format!(
            "puzzle class {class} out of range for {classes} classes"
        )));
    }
    let logits = cond.linear(bound[w], Some(bound[b]));
    Ok(cross_entropy(logits, class))
}

/// Mean cross-entropy of `(B, n)` logits against a single class index.
pub fn cross_entropy<F: Real>(logits: Var<'_, F>, class: usize) -> (Var<'_, F>, ArrayD<F>) {
    let shape = logits.shape();
    let (b, n) = (shape[0], shape[1]);
    let logp = logits.log_softmax();
    let probs = logp.value().mapv(|x| x.exp());
    let target = Array2::from_shape_fn((b, n), |(_, j)| if j == class { F::one() } else { F::zero() });
    let picked = (logp * logits.graph().constant(target.into_dyn())).sum();
    (picked.scale(F::cast(-1.0 / b as f64)), probs)
}

/// Convenience for callers outside a training step: evaluates the encoder
/// with frozen parameters.
pub fn encode_frozen<F: Real>(
    p: &ForecastParams,
    store: &ParamStore<F>,
    signals: ArrayD<F>,
    mask: &ArrayD<F>,
) -> (ArrayD<F>, ArrayD<F>, ArrayD<F>, ArrayD<F>) {
    let g = Graph::new();
    let bound = store.bind_frozen(&g);
    let enc = encode(p, &bound, g.constant(signals), mask);
    (
        enc.alpha.to_array(),
        enc.h.to_array(),
        enc.forecast.to_array(),
        enc.cond.to_array(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_adjacency;
    use crate::jigsaw::Permutation;
    use crate::numerics::grad_check;
    use ndarray::{array, Array3};

    fn shape(k: usize, d: usize) -> ForecastShape {
        ForecastShape {
            joints: k,
            channels: 2,
            past: 3,
            dim: d,
            hidden: 8,
            classes: Some(3),
        }
    }

    fn setup(k: usize, d: usize, seed: u64) -> (ParamStore<f64>, ForecastParams, ArrayD<f64>, ArrayD<f64>) {
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(seed);
        let p = ForecastParams::register(&mut store, shape(k, d), &mut rng);
        let x = rng.normal_array::<f64>(&[2, k, 6]);
        let v = store.get(p.v).clone().into_dimensionality().unwrap();
        let mask = build_adjacency::<f64>(v.view(), 2).unwrap().attention_mask();
        (store, p, x, mask)
    }

    #[test]
    fn attention_rows_normalize_on_support() {
        let (store, p, x, mask) = setup(6, 4, 1);
        let (alpha, ..) = encode_frozen(&p, &store, x, &mask);
        for b in 0..2 {
            for k in 0..6 {
                let mut total = 0.0;
                for n in 0..6 {
                    let a = alpha[[b, k, n]];
                    if mask[[k, n]] == 0.0 {
                        assert_eq!(a, 0.0);
                    } else {
                        assert!(a > 0.0);
                    }
                    total += a;
                }
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_attention_vector_is_uniform() {
        let (mut store, p, x, mask) = setup(6, 4, 2);
        store.get_mut(p.s).fill(0.0);
        let (alpha, ..) = encode_frozen(&p, &store, x, &mask);
        for (&a, &m) in alpha.iter().zip(mask.broadcast(alpha.raw_dim()).unwrap().iter()) {
            assert_eq!(a, if m == 0.0 { 0.0 } else { 1.0 / 3.0 });
        }
    }

    #[test]
    fn two_node_hand_evaluation() {
        let mut store = ParamStore::new();
        let sh = ForecastShape {
            joints: 2,
            channels: 1,
            past: 1,
            dim: 1,
            hidden: 2,
            classes: None,
        };
        let p = ForecastParams::register(&mut store, sh, &mut RngStream::new(0));
        store.set("graph.v", array![[0.5], [-1.0]].into_dyn()).unwrap();
        store.set("forecast.w", array![[2.0]].into_dyn()).unwrap();
        store.set("forecast.s", array![0.3, -0.4, 0.7, 0.2].into_dyn()).unwrap();
        let x = array![[[1.0], [-0.5]]].into_dyn();
        let mask = array![[1.0, 1.0], [1.0, 1.0]].into_dyn();
        let (alpha, h, ..) = encode_frozen(&p, &store, x, &mask);
        let v = [0.5, -1.0];
        let wx = [2.0, -1.0];
        let lrelu = |z: f64| if z > 0.0 { z } else { 0.2 * z };
        for k in 0..2 {
            let e: Vec<f64> = (0..2)
                .map(|n| lrelu(0.3 * v[k] - 0.4 * wx[k] + 0.7 * v[n] + 0.2 * wx[n]))
                .collect();
            let z: f64 = e.iter().map(|x| x.exp()).sum();
            let mut pre = 0.0;
            for n in 0..2 {
                let a = e[n].exp() / z;
                assert!((alpha[[0, k, n]] - a).abs() < 1e-10);
                pre += a * wx[n];
            }
            assert!((h[[0, k, 0]] - pre.max(0.0)).abs() < 1e-10);
        }
    }

    #[test]
    fn self_only_attention_passes_projection_through_relu() {
        let (mut store, p, x, _) = setup(4, 3, 3);
        let eye = Array2::<f64>::eye(4).into_dyn();
        let w = store.get(p.w).clone();
        let (_, h, ..) = encode_frozen(&p, &store, x.clone(), &eye);
        let wx = x.into_dimensionality::<ndarray::Ix3>().unwrap().dot_last(&w);
        for (&hv, &wv) in h.iter().zip(wx.iter()) {
            assert!((hv - wv.max(0.0)).abs() < 1e-12);
        }
        store.get_mut(p.w).fill(0.0);
        let (_, h, f, cond) = encode_frozen(&p, &store, ArrayD::zeros(IxDyn(&[2, 4, 6])), &eye);
        assert!(h.iter().all(|&v| v == 0.0));
        // Zero representations leave only bias responses.
        let b2 = store.get(p.head2_b).clone();
        let hidden_b = store.get(p.head1_b).mapv(|v: f64| v.max(0.0));
        let w2 = store.get(p.head2_w).clone().into_dimensionality::<ndarray::Ix2>().unwrap();
        let expect = hidden_b.into_dimensionality::<ndarray::Ix1>().unwrap().dot(&w2) + &b2;
        for node in f.rows_iter() {
            for (a, b) in node.iter().zip(expect.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        let cb = store.get(p.cond_b);
        for row in cond.rows_iter() {
            assert_eq!(row.to_vec(), cb.iter().copied().collect::<Vec<_>>());
        }
    }

    trait DotLast {
        fn dot_last(&self, w: &ArrayD<f64>) -> Array3<f64>;
    }

    impl DotLast for Array3<f64> {
        fn dot_last(&self, w: &ArrayD<f64>) -> Array3<f64> {
            let w = w.view().into_dimensionality::<ndarray::Ix2>().unwrap();
            let (b, k, _) = self.dim();
            Array3::from_shape_fn((b, k, w.ncols()), |(i, j, o)| {
                (0..w.nrows()).map(|q| self[[i, j, q]] * w[[q, o]]).sum()
            })
        }
    }

    trait RowsIter {
        fn rows_iter(&self) -> Vec<ndarray::ArrayView1<'_, f64>>;
    }

    impl RowsIter for ArrayD<f64> {
        fn rows_iter(&self) -> Vec<ndarray::ArrayView1<'_, f64>> {
            let last = self.ndim() - 1;
            self.lanes(Axis(last)).into_iter().collect()
        }
    }

    #[test]
    fn graph_loss_values() {
        let g = Graph::<f64>::new();
        let a = g.constant(ArrayD::zeros(IxDyn(&[1, 5, 2])));
        let ones = g.constant(ArrayD::ones(IxDyn(&[1, 5, 2])));
        assert_eq!(graph_loss(a, a).item(), 0.0);
        assert_eq!(graph_loss(ones, a).item(), 10.0);
        assert_eq!(graph_loss(ones.scale(2.0), a).item(), 40.0);
    }

    #[test]
    fn uniform_logits_cross_entropy() {
        let g = Graph::<f64>::new();
        let logits = g.constant(ArrayD::zeros(IxDyn(&[3, 6])));
        let (loss, probs) = cross_entropy(logits, 4);
        assert!((loss.item() - 6f64.ln()).abs() < 1e-12);
        assert!(probs.iter().all(|&p| (p - 1.0 / 6.0).abs() < 1e-15));
        let (store, p, ..) = setup(4, 3, 0);
        let bound = store.bind_frozen(&g);
        let cond = g.constant(ArrayD::zeros(IxDyn(&[1, 3])));
        assert!(matches!(puzzle_loss(&p, &bound, cond, 3), Err(Error::Contract(_))));
    }

    #[test]
    fn condition_is_affine() {
        let (store, p, ..) = setup(5, 4, 4);
        let mut rng = RngStream::new(9);
        let h1 = rng.normal_array::<f64>(&[1, 5, 4]);
        let h2 = rng.normal_array::<f64>(&[1, 5, 4]);
        let eval = |h: ArrayD<f64>| {
            let g = Graph::new();
            let bound = store.bind_frozen(&g);
            condition_vector(&p, &bound, g.constant(h)).to_array() - store.get(p.cond_b)
        };
        let sum = eval(&h1 + &h2);
        let parts = eval(h1) + eval(h2);
        assert!(sum.iter().zip(parts.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn relabeling_nodes_permutes_outputs() {
        let (mut store, p, x, mask) = setup(6, 4, 5);
        let perm = Permutation::new(vec![2, 0, 1, 5, 3, 4]).unwrap();
        let (_, h, f, _) = encode_frozen(&p, &store, x.clone(), &mask);
        let v = store.get(p.v).clone().into_dimensionality::<ndarray::Ix2>().unwrap();
        store.get_mut(p.v).assign(&perm.apply_rows(v.view()).into_dyn());
        let mask2 = perm
            .apply(mask.view().into_dimensionality::<ndarray::Ix2>().unwrap())
            .into_dyn();
        let mut x2 = x.clone();
        for u in 0..6 {
            x2.index_axis_mut(Axis(1), perm.map[u])
                .assign(&x.index_axis(Axis(1), u));
        }
        let (_, h2, f2, _) = encode_frozen(&p, &store, x2, &mask2);
        for u in 0..6 {
            let a = h.index_axis(Axis(1), u);
            let b = h2.index_axis(Axis(1), perm.map[u]);
            assert!(a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() < 1e-12));
            let a = f.index_axis(Axis(1), u);
            let b = f2.index_axis(Axis(1), perm.map[u]);
            assert!(a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() < 1e-12));
        }
    }

    #[test]
    fn branch_gradients_match_differences() {
        let (store, p, x, mask) = setup(5, 4, 6);
        let target = RngStream::new(10).normal_array::<f64>(&[2, 5, 2]);
        let report = grad_check(
            &store,
            |g, bound| {
                let enc = encode(&p, bound, g.constant(x.clone()), &mask);
                let lg = graph_loss(enc.forecast, g.constant(target.clone()));
                let (lp, _) = puzzle_loss(&p, bound, enc.cond, 1).unwrap();
                (lg + lp).scale(0.5)
            },
            1e-6,
        )
        .unwrap();
        assert!(report.max_error() < 1e-4, "{:?}", report.worst());
    }
}
