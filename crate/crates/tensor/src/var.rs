use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::{Scalar, Tensor};

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

/// Maps the output gradient to one optional gradient per parent. The mask
/// tells which parents actually need one.
pub(crate) type BackwardFn<T> =
    Box<dyn Fn(&Tensor<T>, &[Var<T>], &[bool]) -> Vec<Option<Tensor<T>>>>;

struct Node<T: Scalar> {
    id: usize,
    value: Tensor<T>,
    requires_grad: bool,
    parents: Vec<Var<T>>,
    backward: Option<BackwardFn<T>>,
}

/// A node in the computation graph.
///
/// Ids grow monotonically and a node is always created after its parents,
/// so reverse id order is a valid topological order for backpropagation.
#[derive(Clone)]
pub struct Var<T: Scalar>(Rc<Node<T>>);

impl<T: Scalar> fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.0.id)
            .field("value", &self.0.value)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl<T: Scalar> Var<T> {
    fn make(
        value: Tensor<T>,
        requires_grad: bool,
        parents: Vec<Var<T>>,
        backward: Option<BackwardFn<T>>,
    ) -> Self {
        Self(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            value,
            requires_grad,
            parents,
            backward,
        }))
    }

    /// A value that never receives a gradient.
    pub fn constant(value: Tensor<T>) -> Self {
        Self::make(value, false, Vec::new(), None)
    }

    /// A graph input; gradients are collected for it when `requires_grad`.
    pub fn leaf(value: Tensor<T>, requires_grad: bool) -> Self {
        Self::make(value, requires_grad, Vec::new(), None)
    }

    /// Records a differentiable operation. When no parent requires a
    /// gradient the result is a constant and `backward` is dropped.
    pub fn from_op<F>(value: Tensor<T>, parents: Vec<Var<T>>, backward: F) -> Self
    where
        F: Fn(&Tensor<T>, &[Var<T>], &[bool]) -> Vec<Option<Tensor<T>>> + 'static,
    {
        if parents.iter().any(Var::requires_grad) {
            Self::make(value, true, parents, Some(Box::new(backward)))
        } else {
            Self::constant(value)
        }
    }

    pub fn id(&self) -> usize {
        self.0.id
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Self {
        Self::constant(self.0.value.clone())
    }

    /// Backpropagates from a single-element output.
    pub fn backward(&self) -> Gradients<T> {
        assert_eq!(
            self.value().numel(),
            1,
            "backward() needs a scalar output; use backward_with for {:?}",
            self.shape()
        );
        self.backward_with(Tensor::ones(self.shape().to_vec()))
    }

    pub fn backward_with(&self, seed: Tensor<T>) -> Gradients<T> {
        assert_eq!(seed.shape(), self.shape(), "seed shape mismatch");
        let mut grads: HashMap<usize, Tensor<T>> = HashMap::new();
        if !self.requires_grad() {
            return Gradients { grads };
        }

        let mut nodes: Vec<Var<T>> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(v) = stack.pop() {
            if !v.requires_grad() || !seen.insert(v.id()) {
                continue;
            }
            for p in &v.0.parents {
                stack.push(p.clone());
            }
            nodes.push(v);
        }
        nodes.sort_by_key(|v| std::cmp::Reverse(v.id()));

        grads.insert(self.id(), seed);
        for node in &nodes {
            let Some(backward) = node.0.backward.as_ref() else {
                continue;
            };
            // Interior gradients are released once consumed; leaves keep theirs.
            let Some(g) = grads.remove(&node.id()) else {
                continue;
            };
            let mask: Vec<bool> = node.0.parents.iter().map(Var::requires_grad).collect();
            let parent_grads = backward(&g, &node.0.parents, &mask);
            debug_assert_eq!(parent_grads.len(), node.0.parents.len());
            for ((p, pg), need) in node.0.parents.iter().zip(parent_grads).zip(&mask) {
                let (true, Some(pg)) = (*need, pg) else {
                    continue;
                };
                assert_eq!(
                    pg.shape(),
                    p.shape(),
                    "gradient shape mismatch in backward pass"
                );
                match grads.get_mut(&p.id()) {
                    Some(acc) => acc.add_assign(&pg),
                    None => {
                        grads.insert(p.id(), pg);
                    }
                }
            }
        }
        Gradients { grads }
    }
}

/// Gradients of graph leaves keyed by node id.
#[derive(Debug, Default)]
pub struct Gradients<T: Scalar> {
    grads: HashMap<usize, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: &Var<T>) -> Option<&Tensor<T>> {
        self.grads.get(&v.id())
    }

    pub fn take(&mut self, v: &Var<T>) -> Option<Tensor<T>> {
        self.grads.remove(&v.id())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_ops_record_nothing() {
        let a = Var::<f64>::constant(Tensor::scalar(2.0));
        let b = Var::from_op(a.value().clone(), vec![a.clone()], |_, _, _| vec![None]);
        assert!(!b.requires_grad());
    }

    #[test]
    fn shared_parent_accumulates() {
        let x = Var::<f64>::leaf(Tensor::scalar(3.0), true);
        let y = crate::ops::mul(&x, &x);
        let g = y.backward();
        assert_eq!(g.get(&x).unwrap().data(), &[6.0]);
    }
}
