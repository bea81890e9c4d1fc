use std::ops::Index;

use indexmap::IndexMap;
use ndarray::ArrayD;

use super::tape::{Grads, Graph, Var};
use super::Real;
use crate::error::{Error, Result};

/// Index of a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Named trainable tensors in registration order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<F> {
    names: IndexMap<String, usize>,
    values: Vec<ArrayD<F>>,
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            names: IndexMap::new(),
            values: Vec::new(),
        }
    }

    /// Registers a tensor. Names must be unique.
    pub fn register(&mut self, name: impl Into<String>, value: ArrayD<F>) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains_key(&name),
            "parameter `{name}` registered twice"
        );
        let id = self.values.len();
        self.names.insert(name, id);
        self.values.push(value.as_standard_layout().into_owned());
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &ArrayD<F> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ArrayD<F> {
        &mut self.values[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&ArrayD<F>> {
        self.names.get(name).map(|&i| &self.values[i])
    }

    pub fn name(&self, id: ParamId) -> &str {
        self.names.get_index(id.0).map(|(n, _)| n.as_str()).unwrap()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<F>)> {
        self.names
            .iter()
            .map(move |(n, &i)| (n.as_str(), &self.values[i]))
    }

    pub fn values(&self) -> &[ArrayD<F>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [ArrayD<F>] {
        &mut self.values
    }

    /// Total number of trainable scalars.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Places every tensor on `graph` as a trainable leaf.
    pub fn bind<'g>(&self, graph: &'g Graph<F>) -> Bound<'g, F> {
        Bound {
            vars: self.values.iter().map(|v| graph.param(v.clone())).collect(),
        }
    }

    /// Places every tensor on `graph` as a constant (inference).
    pub fn bind_frozen<'g>(&self, graph: &'g Graph<F>) -> Bound<'g, F> {
        Bound {
            vars: self
                .values
                .iter()
                .map(|v| graph.constant(v.clone()))
                .collect(),
        }
    }

    /// Overwrites the value under `name`, checking the shape.
    pub fn set(&mut self, name: &str, value: ArrayD<F>) -> Result<()> {
        let &i = self
            .names
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter `{name}`")))?;
        if self.values[i].shape() != value.shape() {
            return Err(Error::Checkpoint(format!(
                "parameter `{name}` has shape {:?}, checkpoint holds {:?}",
                self.values[i].shape(),
                value.shape()
            )));
        }
        self.values[i] = value.as_standard_layout().into_owned();
        Ok(())
    }

    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        ParamStore {
            names: self.names.clone(),
            values: self
                .values
                .iter()
                .map(|v| v.mapv(|x| G::cast(x.as_f64())))
                .collect(),
        }
    }
}

/// Graph handles for every tensor of a [`ParamStore`], indexable by [`ParamId`].
pub struct Bound<'g, F: Real> {
    vars: Vec<Var<'g, F>>,
}

impl<'g, F: Real> Bound<'g, F> {
    pub fn var(&self, id: ParamId) -> Var<'g, F> {
        self.vars[id.0]
    }

    /// Gradients for every bound parameter, zeros where unreached.
    pub fn gradients(&self, grads: &Grads<F>) -> Vec<ArrayD<F>> {
        self.vars.iter().map(|&v| grads.get_or_zeros(v)).collect()
    }
}

impl<'g, F: Real> Index<ParamId> for Bound<'g, F> {
    type Output = Var<'g, F>;
    fn index(&self, id: ParamId) -> &Self::Output {
        &self.vars[id.0]
    }
}
