//! Named parameter storage and per-forward bindings.

use crate::{Gradients, Scalar, Tensor, Var};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry<T: Scalar> {
    pub name: String,
    pub value: Tensor<T>,
    pub trainable: bool,
}

/// Ordered collection of named parameters. Registration order is stable and
/// defines the serialization order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T: Scalar> {
    entries: Vec<ParamEntry<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self { entries: Vec::new() }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a trainable parameter. Panics on a duplicate name.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(
            self.find(&name).is_none(),
            "parameter {name:?} registered twice"
        );
        self.entries.push(ParamEntry {
            name,
            value,
            trainable: true,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<T>] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        for e in &mut self.entries {
            e.trainable = trainable;
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    value: e.value.cast(),
                    trainable: e.trainable,
                })
                .collect(),
        }
    }

    /// Copies values from `other` by name. Every parameter here must exist
    /// in `other` with the same shape.
    pub fn load_from(&mut self, other: &ParamStore<T>) -> Result<(), String> {
        if other.len() != self.len() {
            return Err(format!(
                "parameter count mismatch: expected {}, found {}",
                self.len(),
                other.len()
            ));
        }
        for e in &mut self.entries {
            let src = other
                .find(&e.name)
                .ok_or_else(|| format!("missing parameter {:?}", e.name))?;
            let src = other.get(src);
            if src.shape() != e.value.shape() {
                return Err(format!(
                    "parameter {:?}: expected shape {:?}, found {:?}",
                    e.name,
                    e.value.shape(),
                    src.shape()
                ));
            }
            e.value = src.clone();
        }
        Ok(())
    }
}

/// Graph leaves bound to the parameters of one store for one forward pass.
pub struct Session<T: Scalar> {
    vars: Vec<Var<T>>,
}

impl<T: Scalar> Session<T> {
    /// With `track_grads` false no parameter requires a gradient, so the
    /// forward pass records no graph.
    pub fn new(store: &ParamStore<T>, track_grads: bool) -> Self {
        Self {
            vars: store
                .entries
                .iter()
                .map(|e| Var::leaf(e.value.clone(), track_grads && e.trainable))
                .collect(),
        }
    }

    pub fn var(&self, id: ParamId) -> &Var<T> {
        &self.vars[id.0]
    }

    /// Parameter gradients in store order.
    pub fn collect_grads(&self, grads: &mut Gradients<T>) -> Vec<Option<Tensor<T>>> {
        self.vars.iter().map(|v| grads.take(v)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn load_from_checks_shapes() {
        let mut a = ParamStore::<f32>::new();
        a.add("w", Tensor::zeros(vec![2]));
        let mut b = ParamStore::<f32>::new();
        b.add("w", Tensor::zeros(vec![3]));
        assert!(a.load_from(&b).unwrap_err().contains("shape"));
    }

    #[test]
    fn frozen_session_records_no_graph() {
        let mut s = ParamStore::<f32>::new();
        let id = s.add("w", Tensor::ones(vec![2]));
        let sess = Session::new(&s, false);
        let y = crate::ops::mul(sess.var(id), sess.var(id));
        assert!(!y.requires_grad());
    }
}
