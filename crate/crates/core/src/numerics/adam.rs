use ndarray::{ArrayD, Zip};

use super::params::ParamStore;
use super::Real;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates mirroring a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct OptimState<F> {
    pub m: Vec<ArrayD<F>>,
    pub v: Vec<ArrayD<F>>,
    pub step: u64,
}

impl<F: Real> OptimState<F> {
    pub fn new(store: &ParamStore<F>) -> Self {
        let zeros: Vec<_> = store
            .values()
            .iter()
            .map(|p| ArrayD::zeros(p.raw_dim()))
            .collect();
        OptimState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    pub config: AdamConfig,
    pub state: OptimState<F>,
}

impl<F: Real> Adam<F> {
    pub fn new(store: &ParamStore<F>, config: AdamConfig) -> Self {
        Adam {
            config,
            state: OptimState::new(store),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore<F>, grads: &[ArrayD<F>]) -> Result<()> {
        adam_step(store, grads, &mut self.state, &self.config)
    }
}

/// One Adam update of every parameter in `store`.
pub fn adam_step<F: Real>(
    store: &mut ParamStore<F>,
    grads: &[ArrayD<F>],
    state: &mut OptimState<F>,
    config: &AdamConfig,
) -> Result<()> {
    if grads.len() != store.len() || state.m.len() != store.len() {
        return Err(Error::contract(format!(
            "{} parameters, {} gradients, {} moment buffers",
            store.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in store.values().iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || state.m[i].shape() != p.shape() {
            return Err(Error::contract(format!(
                "gradient shape {:?} does not match parameter `{}` {:?}",
                g.shape(),
                store.name(super::ParamId(i)),
                p.shape()
            )));
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGradient(
                store.name(super::ParamId(i)).to_string(),
            ));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let b1 = config.beta1;
    let b2 = config.beta2;
    let correct1 = 1.0 - b1.powi(t);
    let correct2 = 1.0 - b2.powi(t);
    let (b1f, b2f) = (F::cast(b1), F::cast(b2));
    let (one_b1, one_b2) = (F::cast(1.0 - b1), F::cast(1.0 - b2));
    let step_size = F::cast(config.lr / correct1);
    let inv_c2 = F::cast(1.0 / correct2);
    let eps = F::cast(config.eps);

    for (i, p) in store.values_mut().iter_mut().enumerate() {
        Zip::from(p)
            .and(&grads[i])
            .and(&mut state.m[i])
            .and(&mut state.v[i])
            .for_each(|p, &g, m, v| {
                *m = b1f * *m + one_b1 * g;
                *v = b2f * *v + one_b2 * g * g;
                let v_hat = *v * inv_c2;
                *p -= step_size * *m / (v_hat.sqrt() + eps);
            });
    }
    Ok(())
}
