use super::params::{Bound, ParamId, ParamStore};
use super::rng::RngStream;
use super::tape::{Graph, Var};
use crate::error::{Error, Result};

/// Gradients smaller than this are compared in absolute terms.
pub const GRAD_FLOOR: f64 = 1e-6;

/// Probes whose error exceeds this at the requested step are measured again
/// at a tenth and a hundredth of the step, keeping the smallest error. A
/// kink of a piecewise-linear activation lying within the step of the probe
/// point then stops registering, while a wrong gradient persists at every
/// step.
pub const RETRY_ABOVE: f64 = 1e-5;

/// Worst reverse-mode vs central-difference disagreement per parameter.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<(String, f64)>,
    /// Scalars compared.
    pub probed: usize,
    /// Probes that needed smaller steps.
    pub retried: usize,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.entries.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&(String, f64)> {
        self.entries
            .iter()
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
    }
}

/// `|a - n| / max(|a|, |n|, GRAD_FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

/// Compares reverse-mode gradients of `loss_fn` against central finite
/// differences with step `eps` for every scalar in `store`.
pub fn grad_check<L>(store: &ParamStore<f64>, loss_fn: L, eps: f64) -> Result<GradCheckReport>
where
    L: for<'g> Fn(&'g Graph<f64>, &Bound<'g, f64>) -> Var<'g, f64>,
{
    grad_check_sampled(store, loss_fn, eps, usize::MAX, 0)
}

/// Like [`grad_check`], but probes at most `per_tensor` scalars of each
/// tensor, drawn without replacement from a stream seeded by `seed`.
/// Tensors with at most `per_tensor` scalars are probed exhaustively.
pub fn grad_check_sampled<L>(
    store: &ParamStore<f64>,
    loss_fn: L,
    eps: f64,
    per_tensor: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    L: for<'g> Fn(&'g Graph<f64>, &Bound<'g, f64>) -> Var<'g, f64>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::contract(format!("step {eps} outside [1e-7, 1e-3]")));
    }
    let eval = |s: &ParamStore<f64>| {
        let g = Graph::new();
        let bound = s.bind_frozen(&g);
        loss_fn(&g, &bound).item()
    };

    let first = eval(store);
    let second = eval(store);
    if first.to_bits() != second.to_bits() {
        return Err(Error::GradCheck(format!(
            "loss is not deterministic: {first} then {second}"
        )));
    }

    let g = Graph::new();
    let bound = store.bind(&g);
    let loss = loss_fn(&g, &bound);
    let analytic = bound.gradients(&g.backward(loss));

    let mut probe = store.clone();
    let mut central = |id: ParamId, j: usize, h: f64| {
        let original = store.get(id).as_slice().unwrap()[j];
        probe.get_mut(id).as_slice_mut().unwrap()[j] = original + h;
        let plus = eval(&probe);
        probe.get_mut(id).as_slice_mut().unwrap()[j] = original - h;
        let minus = eval(&probe);
        probe.get_mut(id).as_slice_mut().unwrap()[j] = original;
        (plus - minus) / (2.0 * h)
    };

    let root = RngStream::new(seed);
    let mut entries = Vec::with_capacity(store.len());
    let (mut probed, mut retried) = (0, 0);
    for (i, grad) in analytic.iter().enumerate() {
        let id = ParamId(i);
        let grad = grad.as_standard_layout();
        let mut picks: Vec<usize> = (0..grad.len()).collect();
        if picks.len() > per_tensor {
            root.split(i as u64).shuffle(&mut picks);
            picks.truncate(per_tensor);
        }
        let mut worst: f64 = 0.0;
        for j in picks {
            let a = grad.as_slice().unwrap()[j];
            let mut err = relative_error(a, central(id, j, eps));
            if err > RETRY_ABOVE {
                retried += 1;
                for h in [eps / 10.0, eps / 100.0] {
                    err = err.min(relative_error(a, central(id, j, h)));
                }
            }
            worst = worst.max(err);
            probed += 1;
        }
        entries.push((store.name(id).to_string(), worst));
    }
    Ok(GradCheckReport {
        entries,
        probed,
        retried,
    })
}
