//! Variance schedules, forward corruption, the conditional denoiser and
//! reverse sampling.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayD, IxDyn, Zip};

use crate::error::{Error, Result};
use crate::forecaster::dense;
use crate::numerics::{Bound, Graph, ParamId, ParamStore, Real, RngStream, Var, LEAKY_SLOPE};
use crate::pose::Skeleton;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScheduleKind {
    #[default]
    Cosine,
    Linear,
}

impl ScheduleKind {
    pub fn name(self) -> &'static str {
        match self {
            ScheduleKind::Cosine => "cosine",
            ScheduleKind::Linear => "linear",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "cosine" => Some(ScheduleKind::Cosine),
            "linear" => Some(ScheduleKind::Linear),
            _ => None,
        }
    }
}

/// Offset of the cosine recipe.
pub const COSINE_OFFSET: f64 = 0.008;
/// Upper clip for cosine betas.
pub const MAX_BETA: f64 = 0.999;

/// Step tables for `t = 1..=T`; `alpha_bar(0)` is 1.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    pub kind: ScheduleKind,
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl DiffusionSchedule {
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.beta(t)
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    /// Posterior variance `(1 - abar_{t-1}) / (1 - abar_t) * beta_t`.
    pub fn beta_bar(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t)) * self.beta(t)
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }
}

/// Builds `T` steps. Linear betas run evenly from `beta_1` to `beta_t`;
/// the cosine recipe ignores both endpoints.
pub fn build_schedule(kind: ScheduleKind, steps: usize, beta_1: f64, beta_t: f64) -> Result<DiffusionSchedule> {
    if steps == 0 {
        return Err(Error::Config("diffusion needs at least one step".into()));
    }
    let betas: Vec<f64> = match kind {
        ScheduleKind::Linear => {
            if !(0.0 < beta_1 && beta_1 <= beta_t && beta_t < 1.0) {
                return Err(Error::Config(format!(
                    "linear schedule needs 0 < beta_1 <= beta_T < 1, got {beta_1} and {beta_t}"
                )));
            }
            (0..steps)
                .map(|i| {
                    if steps == 1 {
                        beta_1
                    } else if i == steps - 1 {
                        beta_t
                    } else {
                        beta_1 + (beta_t - beta_1) * i as f64 / (steps - 1) as f64
                    }
                })
                .collect()
        }
        ScheduleKind::Cosine => {
            let f = |t: f64| {
                let x = (t / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * PI / 2.0;
                x.cos().powi(2)
            };
            let abar = |t: usize| f(t as f64) / f(0.0);
            (1..=steps)
                .map(|t| (1.0 - abar(t) / abar(t - 1)).min(MAX_BETA))
                .collect()
        }
    };
    let mut alpha_bars = Vec::with_capacity(steps + 1);
    alpha_bars.push(1.0);
    for b in &betas {
        alpha_bars.push(alpha_bars.last().unwrap() * (1.0 - b));
    }
    Ok(DiffusionSchedule {
        kind,
        betas,
        alpha_bars,
    })
}

fn check_step(schedule: &DiffusionSchedule, t: usize) -> Result<()> {
    if t == 0 || t > schedule.steps() {
        return Err(Error::contract(format!(
            "step {t} outside 1..={}",
            schedule.steps()
        )));
    }
    Ok(())
}

/// `x_t = sqrt(abar_t) x + sqrt(1 - abar_t) eps`; `t = 0` returns `x`.
pub fn forward_corrupt<F: Real>(
    x: &ArrayD<F>,
    t: usize,
    eps: &ArrayD<F>,
    schedule: &DiffusionSchedule,
) -> Result<ArrayD<F>> {
    if x.shape() != eps.shape() {
        return Err(Error::contract(format!(
            "noise shape {:?} differs from data shape {:?}",
            eps.shape(),
            x.shape()
        )));
    }
    if t > schedule.steps() {
        return Err(Error::contract(format!("step {t} beyond {}", schedule.steps())));
    }
    let ab = schedule.alpha_bar(t);
    let (a, b) = (F::cast(ab.sqrt()), F::cast((1.0 - ab).sqrt()));
    Ok(Zip::from(x).and(eps).map_collect(|&x, &e| a * x + b * e))
}

/// One Markov step `x_t = sqrt(1 - beta_t) x_{t-1} + sqrt(beta_t) eps`.
pub fn forward_step<F: Real>(x: &ArrayD<F>, t: usize, eps: &ArrayD<F>, schedule: &DiffusionSchedule) -> ArrayD<F> {
    let b = schedule.beta(t);
    let (a, s) = (F::cast((1.0 - b).sqrt()), F::cast(b.sqrt()));
    Zip::from(x).and(eps).map_collect(|&x, &e| a * x + s * e)
}

/// Sinusoidal encoding: entry `2i` is `sin(t w_i)` and `2i + 1` is
/// `cos(t w_i)` with `w_i = 10000^(-2i/dim)`.
pub fn timestep_embedding(t: f64, dim: usize) -> Vec<f64> {
    assert!(dim.is_multiple_of(2), "embedding width must be even");
    let mut out = vec![0.0; dim];
    for i in 0..dim / 2 {
        let w = 10000f64.powf(-((2 * i) as f64) / dim as f64);
        out[2 * i] = (t * w).sin();
        out[2 * i + 1] = (t * w).cos();
    }
    out
}

/// `(B, dim)` embeddings of per-sample steps.
pub fn timestep_batch<F: Real>(ts: &[usize], dim: usize) -> ArrayD<F> {
    let mut out = Array2::zeros((ts.len(), dim));
    for (mut row, &t) in out.rows_mut().into_iter().zip(ts) {
        for (o, v) in row.iter_mut().zip(timestep_embedding(t as f64, dim)) {
            *o = F::cast(v);
        }
    }
    out.into_dyn()
}

/// `smooth_l1(mean_b ||eps_b - eps_hat_b||)`.
pub fn diffusion_loss<'g, F: Real>(eps: Var<'g, F>, eps_hat: Var<'g, F>) -> Var<'g, F> {
    let shape = eps_hat.shape();
    let per: usize = shape[1..].iter().product();
    (eps - eps_hat)
        .reshape(&[shape[0], per])
        .norm_last()
        .mean()
        .smooth_l1()
}

/// Noise scale used by the reverse step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PosteriorVariance {
    /// `sqrt(beta_t)`.
    #[default]
    Beta,
    /// `sqrt(beta_bar_t)`.
    BetaBar,
}

impl PosteriorVariance {
    pub fn name(self) -> &'static str {
        match self {
            PosteriorVariance::Beta => "beta",
            PosteriorVariance::BetaBar => "beta_bar",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "beta" => Some(PosteriorVariance::Beta),
            "beta_bar" => Some(PosteriorVariance::BetaBar),
            _ => None,
        }
    }

    pub fn sigma(self, schedule: &DiffusionSchedule, t: usize) -> f64 {
        match self {
            PosteriorVariance::Beta => schedule.beta(t).sqrt(),
            PosteriorVariance::BetaBar => schedule.beta_bar(t).sqrt(),
        }
    }
}

/// Scalar form of one reverse step.
pub fn reverse_step_scalar(u: f64, beta: f64, alpha_bar: f64, eps_hat: f64, xi: f64, sigma: f64) -> f64 {
    (u - beta / (1.0 - alpha_bar).sqrt() * eps_hat) / (1.0 - beta).sqrt() + xi * sigma
}

/// `u_{t-1} = (u_t - beta_t / sqrt(1 - abar_t) eps_hat) / sqrt(1 - beta_t) + sigma_t xi`.
/// `xi` is ignored at `t = 1`.
pub fn reverse_step<F: Real>(
    u: &ArrayD<F>,
    t: usize,
    eps_hat: &ArrayD<F>,
    schedule: &DiffusionSchedule,
    xi: Option<&ArrayD<F>>,
    posterior: PosteriorVariance,
) -> Result<ArrayD<F>> {
    check_step(schedule, t)?;
    if u.shape() != eps_hat.shape() || xi.is_some_and(|x| x.shape() != u.shape()) {
        return Err(Error::contract("reverse step operands differ in shape"));
    }
    let beta = schedule.beta(t);
    let inv = F::cast(1.0 / (1.0 - beta).sqrt());
    let k = F::cast(beta / (1.0 - schedule.alpha_bar(t)).sqrt());
    let mut out = Zip::from(u).and(eps_hat).map_collect(|&u, &e| (u - k * e) * inv);
    if let (Some(xi), true) = (xi, t > 1) {
        let sigma = F::cast(posterior.sigma(schedule, t));
        Zip::from(&mut out).and(xi).for_each(|o, &x| *o += sigma * x);
    }
    Ok(out)
}

/// Runs the reverse chain from `u_T ~ N(0, I)` of the given shape. `noise`
/// supplies every standard-normal draw (`u_T`, then one `xi` per step above
/// 1); `eps_fn(u_t, t)` supplies the noise estimates.
pub fn sample_with<F: Real>(
    shape: &[usize],
    schedule: &DiffusionSchedule,
    posterior: PosteriorVariance,
    mut noise: impl FnMut(&[usize]) -> ArrayD<F>,
    mut eps_fn: impl FnMut(&ArrayD<F>, usize) -> ArrayD<F>,
) -> Result<ArrayD<F>> {
    let mut u = noise(shape);
    for t in (1..=schedule.steps()).rev() {
        let eps_hat = eps_fn(&u, t);
        let xi = (t > 1).then(|| noise(shape));
        u = reverse_step(&u, t, &eps_hat, schedule, xi.as_ref(), posterior)?;
    }
    Ok(u)
}

/// Noise source drawing row `m` of every `(M, ..)` array from `streams[m]`,
/// so each row depends only on its own stream.
pub fn row_noise<F: Real>(streams: &mut [RngStream]) -> impl FnMut(&[usize]) -> ArrayD<F> + '_ {
    move |shape: &[usize]| {
        assert_eq!(shape[0], streams.len(), "one stream per row");
        let rows: Vec<ArrayD<F>> = streams
            .iter_mut()
            .map(|s| s.normal_array::<F>(&shape[1..]))
            .collect();
        let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
        ndarray::stack(ndarray::Axis(0), &views).unwrap()
    }
}

/// Layout of the denoiser.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenoiserShape {
    pub joints: usize,
    /// Joint count between the pooling and unpooling maps.
    pub pooled: usize,
    pub frames: usize,
    pub channels: usize,
    /// Width of the conditioning vector from the forecaster.
    pub cond_dim: usize,
    pub temb_dim: usize,
    pub temb_hidden: usize,
    /// Output channels of the six blocks; blocks 3 to 5 run on pooled
    /// joints and block 6 also receives block 2's output.
    pub plan: [usize; 6],
}

pub const DEFAULT_PLAN: [usize; 6] = [32, 32, 64, 64, 128, 64];

impl DenoiserShape {
    pub fn standard(joints: usize, frames: usize, channels: usize, cond_dim: usize) -> Self {
        DenoiserShape {
            joints,
            pooled: pooled_joints(joints),
            frames,
            channels,
            cond_dim,
            temb_dim: 32,
            temb_hidden: 128,
            plan: DEFAULT_PLAN,
        }
    }

    fn cond_width(&self) -> usize {
        self.temb_dim + self.cond_dim
    }
}

/// `round(10 J / 17)`, at least 1.
pub fn pooled_joints(joints: usize) -> usize {
    ((joints * 10 + 8) / 17).max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub spatial: ParamId,
    pub temporal: ParamId,
    pub w: ParamId,
    pub b: ParamId,
    pub cond_w: ParamId,
    pub cond_b: ParamId,
    pub residual: Option<ParamId>,
}

/// Handles of the denoiser tensors inside a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    pub shape: DenoiserShape,
    pub temb1_w: ParamId,
    pub temb1_b: ParamId,
    pub temb2_w: ParamId,
    pub temb2_b: ParamId,
    pub blocks: Vec<BlockParams>,
    /// `(pooled, J)`.
    pub pool: ParamId,
    /// `(J, pooled)`.
    pub unpool: ParamId,
    pub out_w: ParamId,
    pub out_b: ParamId,
}

fn eye(n: usize) -> ArrayD<f64> {
    Array2::<f64>::eye(n).into_dyn()
}

impl DenoiserParams {
    pub fn register(store: &mut ParamStore<f64>, shape: DenoiserShape, rng: &mut RngStream) -> Self {
        let (j, jp, f) = (shape.joints, shape.pooled, shape.frames);
        let cw = shape.cond_width();
        let zeros = |n: usize| ArrayD::<f64>::zeros(IxDyn(&[n]));
        let skeleton = Skeleton::for_joints(j);
        let adj = skeleton.normalized_adjacency();
        let adj = Array2::from_shape_fn((j, j), |(a, b)| adj[a][b]).into_dyn();
        let temb1_w = store.register("denoiser.temb1.w", dense(rng, &[shape.temb_dim, shape.temb_hidden], shape.temb_dim));
        let temb1_b = store.register("denoiser.temb1.b", zeros(shape.temb_hidden));
        let temb2_w = store.register("denoiser.temb2.w", dense(rng, &[shape.temb_hidden, shape.temb_dim], shape.temb_hidden));
        let temb2_b = store.register("denoiser.temb2.b", zeros(shape.temb_dim));

        let p = shape.plan;
        let ins = [shape.channels, p[0], p[1], p[2], p[3], p[4] + p[1]];
        let mut blocks = Vec::with_capacity(6);
        for (i, (&cin, &cout)) in ins.iter().zip(p.iter()).enumerate() {
            let pooled = (2..5).contains(&i);
            let name = |s: &str| format!("denoiser.block{}.{s}", i + 1);
            let spatial = if pooled { eye(jp) } else { adj.clone() };
            blocks.push(BlockParams {
                spatial: store.register(name("spatial"), spatial),
                temporal: store.register(name("temporal"), eye(f)),
                w: store.register(name("w"), dense(rng, &[cin, cout], cin)),
                b: store.register(name("b"), zeros(cout)),
                cond_w: store.register(name("cond.w"), dense(rng, &[cw, cout], cw)),
                cond_b: store.register(name("cond.b"), zeros(cout)),
                residual: (cin != cout)
                    .then(|| store.register(name("residual"), dense(rng, &[cin, cout], cin))),
            });
        }
        // Pooling averages contiguous joint groups; unpooling copies back.
        let group = |a: usize| a * jp / j;
        let mut pool = Array2::<f64>::zeros((jp, j));
        for a in 0..j {
            pool[[group(a), a]] = 1.0;
        }
        let unpool = pool.t().to_owned();
        for mut row in pool.rows_mut() {
            let s = row.sum();
            row.mapv_inplace(|v| v / s);
        }
        DenoiserParams {
            shape,
            temb1_w,
            temb1_b,
            temb2_w,
            temb2_b,
            blocks,
            pool: store.register("denoiser.pool", pool.into_dyn()),
            unpool: store.register("denoiser.unpool", unpool.into_dyn()),
            out_w: store.register("denoiser.out.w", dense(rng, &[p[5], shape.channels], p[5])),
            out_b: store.register("denoiser.out.b", zeros(shape.channels)),
        }
    }

    fn block<'g, F: Real>(&self, bound: &Bound<'g, F>, i: usize, x: Var<'g, F>, cond: Var<'g, F>) -> Var<'g, F> {
        let bp = &self.blocks[i];
        let slope = F::cast(LEAKY_SLOPE);
        let b = x.shape()[0];
        let cout = self.shape.plan[i];
        let mixed = x
            .mix_axis(bound[bp.spatial], 2)
            .mix_axis(bound[bp.temporal], 1)
            .linear(bound[bp.w], Some(bound[bp.b]));
        let c = cond
            .linear(bound[bp.cond_w], Some(bound[bp.cond_b]))
            .reshape(&[b, 1, 1, cout]);
        let y = (mixed + c).leaky_relu(slope);
        let skip = match bp.residual {
            Some(r) => x.linear(bound[r], None),
            None => x,
        };
        y + skip
    }

    /// Noise estimate for `x_t` of shape `(B, F, J, C)`, with `temb` the
    /// `(B, temb_dim)` step encodings and `h` the `(B, D)` conditioning.
    pub fn predict<'g, F: Real>(
        &self,
        bound: &Bound<'g, F>,
        x_t: Var<'g, F>,
        temb: Var<'g, F>,
        h: Var<'g, F>,
    ) -> Var<'g, F> {
        let slope = F::cast(LEAKY_SLOPE);
        let ft = temb
            .linear(bound[self.temb1_w], Some(bound[self.temb1_b]))
            .leaky_relu(slope)
            .linear(bound[self.temb2_w], Some(bound[self.temb2_b]));
        let cond = Var::concat(&[ft, h], 1);
        let b1 = self.block(bound, 0, x_t, cond);
        let b2 = self.block(bound, 1, b1, cond);
        let down = b2.mix_axis(bound[self.pool], 2);
        let b3 = self.block(bound, 2, down, cond);
        let b4 = self.block(bound, 3, b3, cond);
        let b5 = self.block(bound, 4, b4, cond);
        let up = b5.mix_axis(bound[self.unpool], 2);
        let b6 = self.block(bound, 5, Var::concat(&[up, b2], 3), cond);
        b6.linear(bound[self.out_w], Some(bound[self.out_b]))
    }

    /// Evaluates the denoiser with frozen parameters.
    pub fn predict_frozen<F: Real>(
        &self,
        store: &ParamStore<F>,
        x_t: &ArrayD<F>,
        t: usize,
        h: &ArrayD<F>,
    ) -> ArrayD<F> {
        let g = Graph::new();
        let bound = store.bind_frozen(&g);
        let ts = vec![t; x_t.shape()[0]];
        self.predict(
            &bound,
            g.constant(x_t.clone()),
            g.constant(timestep_batch(&ts, self.shape.temb_dim)),
            g.constant(h.clone()),
        )
        .to_array()
    }
}

/// Draws one future block per row of `h` (`(M, D)`), row `m` driven by
/// `streams[m]`; returns `(M, F, J, C)`. Parameters are bound once and the
/// graph is rewound after every step.
pub fn sample_future<F: Real>(
    params: &DenoiserParams,
    store: &ParamStore<F>,
    h: &ArrayD<F>,
    schedule: &DiffusionSchedule,
    posterior: PosteriorVariance,
    streams: &mut [RngStream],
) -> Result<ArrayD<F>> {
    let s = params.shape;
    let m = h.shape()[0];
    if streams.len() != m {
        return Err(Error::contract(format!(
            "{} streams for {m} conditioning rows",
            streams.len()
        )));
    }
    let g = Graph::new();
    let bound = store.bind_frozen(&g);
    let hv = g.constant(h.clone());
    let temb: Vec<ArrayD<F>> = (0..=schedule.steps())
        .map(|t| timestep_batch(&vec![t; m], s.temb_dim))
        .collect();
    let mark = g.len();
    sample_with(
        &[m, s.frames, s.joints, s.channels],
        schedule,
        posterior,
        row_noise(streams),
        |u, t| {
            let out = params
                .predict(&bound, g.constant(u.clone()), g.constant(temb[t].clone()), hv)
                .to_array();
            g.truncate(mark);
            out
        },
    )
}
