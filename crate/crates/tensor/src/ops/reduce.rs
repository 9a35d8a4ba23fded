use crate::{Scalar, Tensor, Var};

pub fn sum_all<T: Scalar>(x: &Var<T>) -> Var<T> {
    let value = Tensor::scalar(x.value().sum());
    Var::from_op(value, vec![x.clone()], |g, p, _| {
        vec![Some(Tensor::full(p[0].shape().to_vec(), g.data()[0]))]
    })
}

pub fn mean_all<T: Scalar>(x: &Var<T>) -> Var<T> {
    let n = T::from_usize(x.value().numel()).unwrap();
    let value = Tensor::scalar(x.value().sum() / n);
    Var::from_op(value, vec![x.clone()], move |g, p, _| {
        vec![Some(Tensor::full(p[0].shape().to_vec(), g.data()[0] / n))]
    })
}

/// Mean over the last axis, which is removed from the shape.
pub fn mean_last<T: Scalar>(x: &Var<T>) -> Var<T> {
    let shape = x.shape();
    assert!(!shape.is_empty(), "mean_last on a rank-0 tensor");
    let inner = *shape.last().unwrap();
    let out_shape: Vec<usize> = if shape.len() == 1 {
        vec![1]
    } else {
        shape[..shape.len() - 1].to_vec()
    };
    let n = T::from_usize(inner).unwrap();
    let data: Vec<T> = x
        .value()
        .data()
        .chunks(inner)
        .map(|c| c.iter().copied().sum::<T>() / n)
        .collect();
    Var::from_op(Tensor::new(out_shape, data), vec![x.clone()], move |g, p, _| {
        let mut gx = Vec::with_capacity(p[0].value().numel());
        for &gv in g.data() {
            gx.extend(std::iter::repeat_n(gv / n, inner));
        }
        vec![Some(Tensor::new(p[0].shape().to_vec(), gx))]
    })
}
