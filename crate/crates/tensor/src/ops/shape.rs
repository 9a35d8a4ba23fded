use std::rc::Rc;

use crate::tensor::numel;
use crate::{Scalar, Tensor, Var};

pub fn reshape<T: Scalar>(x: &Var<T>, shape: &[usize]) -> Var<T> {
    let value = x.value().clone().reshape(shape.to_vec());
    Var::from_op(value, vec![x.clone()], |g, p, _| {
        vec![Some(g.clone().reshape(p[0].shape().to_vec()))]
    })
}

/// Gathers `out[i] = x.flat[indices[i]]`. Indices may repeat; the backward
/// pass scatter-adds.
pub fn take<T: Scalar>(x: &Var<T>, indices: Rc<[usize]>, shape: &[usize]) -> Var<T> {
    assert_eq!(numel(shape), indices.len(), "take: shape/indices mismatch");
    let src = x.value().data();
    let data = indices.iter().map(|&i| src[i]).collect();
    Var::from_op(
        Tensor::new(shape.to_vec(), data),
        vec![x.clone()],
        move |g, p, _| {
            let mut gx = vec![T::zero(); p[0].value().numel()];
            for (&i, &gv) in indices.iter().zip(g.data()) {
                gx[i] += gv;
            }
            vec![Some(Tensor::new(p[0].shape().to_vec(), gx))]
        },
    )
}

/// Gathers whole rows: viewing `x` as `[R, row_len]`, row `i` of the
/// output is row `rows[i]` of `x`. Rows may repeat; the backward pass
/// scatter-adds.
pub fn gather_rows<T: Scalar>(x: &Var<T>, rows: Rc<[usize]>, row_len: usize, shape: &[usize]) -> Var<T> {
    assert_eq!(numel(shape), rows.len() * row_len, "gather_rows: shape/rows mismatch");
    assert_eq!(x.value().numel() % row_len, 0, "gather_rows: row length");
    let src = x.value().data();
    let mut data = Vec::with_capacity(rows.len() * row_len);
    for &r in rows.iter() {
        data.extend_from_slice(&src[r * row_len..(r + 1) * row_len]);
    }
    Var::from_op(Tensor::new(shape.to_vec(), data), vec![x.clone()], move |g, p, _| {
        let mut gx = vec![T::zero(); p[0].value().numel()];
        for (&r, gr) in rows.iter().zip(g.data().chunks(row_len)) {
            for (d, &v) in gx[r * row_len..(r + 1) * row_len].iter_mut().zip(gr) {
                *d += v;
            }
        }
        vec![Some(Tensor::new(p[0].shape().to_vec(), gx))]
    })
}

/// Source offsets for reading `shape` permuted by `axes`.
pub fn permutation_indices(shape: &[usize], axes: &[usize]) -> (Vec<usize>, Rc<[usize]>) {
    assert_eq!(shape.len(), axes.len(), "permute: rank mismatch");
    let rank = shape.len();
    let mut strides = vec![1; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let out_strides: Vec<usize> = axes.iter().map(|&a| strides[a]).collect();
    let total = numel(shape);
    let mut idx = Vec::with_capacity(total);
    let mut counter = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..total {
        idx.push(off);
        for d in (0..rank).rev() {
            counter[d] += 1;
            off += out_strides[d];
            if counter[d] < out_shape[d] {
                break;
            }
            off -= out_strides[d] * out_shape[d];
            counter[d] = 0;
        }
    }
    (out_shape, idx.into())
}

pub fn permute<T: Scalar>(x: &Var<T>, axes: &[usize]) -> Var<T> {
    let (shape, idx) = permutation_indices(x.shape(), axes);
    take(x, idx, &shape)
}

fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize) {
    (numel(&shape[..axis]), numel(&shape[axis + 1..]))
}

/// Concatenates along `axis`; all other extents must agree.
pub fn concat<T: Scalar>(xs: &[Var<T>], axis: usize) -> Var<T> {
    assert!(!xs.is_empty(), "concat of nothing");
    let first = xs[0].shape();
    for x in xs {
        assert_eq!(x.shape().len(), first.len(), "concat: rank mismatch");
        for (d, (&a, &b)) in x.shape().iter().zip(first).enumerate() {
            assert!(d == axis || a == b, "concat: {:?} vs {:?}", x.shape(), first);
        }
    }
    let extents: Vec<usize> = xs.iter().map(|x| x.shape()[axis]).collect();
    let total: usize = extents.iter().sum();
    let mut shape = first.to_vec();
    shape[axis] = total;
    let (outer, inner) = split_at_axis(first, axis);
    let mut data = Vec::with_capacity(numel(&shape));
    for o in 0..outer {
        for (x, &e) in xs.iter().zip(&extents) {
            let chunk = e * inner;
            data.extend_from_slice(&x.value().data()[o * chunk..(o + 1) * chunk]);
        }
    }
    Var::from_op(Tensor::new(shape, data), xs.to_vec(), move |g, p, need| {
        let gd = g.data();
        let mut grads: Vec<Vec<T>> = p
            .iter()
            .zip(need)
            .map(|(v, &n)| if n { Vec::with_capacity(v.value().numel()) } else { Vec::new() })
            .collect();
        let mut off = 0;
        for _ in 0..outer {
            for (i, &e) in extents.iter().enumerate() {
                let chunk = e * inner;
                if need[i] {
                    grads[i].extend_from_slice(&gd[off..off + chunk]);
                }
                off += chunk;
            }
        }
        grads
            .into_iter()
            .zip(p)
            .zip(need)
            .map(|((gv, v), &n)| n.then(|| Tensor::new(v.shape().to_vec(), gv)))
            .collect()
    })
}

/// Slice `[start, start + len)` along `axis`.
pub fn narrow<T: Scalar>(x: &Var<T>, axis: usize, start: usize, len: usize) -> Var<T> {
    let shape = x.shape().to_vec();
    let extent = shape[axis];
    assert!(start + len <= extent, "narrow out of range");
    let (outer, inner) = split_at_axis(&shape, axis);
    let mut out_shape = shape.clone();
    out_shape[axis] = len;
    let mut data = Vec::with_capacity(numel(&out_shape));
    let src = x.value().data();
    for o in 0..outer {
        let base = (o * extent + start) * inner;
        data.extend_from_slice(&src[base..base + len * inner]);
    }
    Var::from_op(Tensor::new(out_shape, data), vec![x.clone()], move |g, _, _| {
        let mut gx = vec![T::zero(); outer * extent * inner];
        let gd = g.data();
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            gx[base..base + len * inner].copy_from_slice(&gd[o * len * inner..(o + 1) * len * inner]);
        }
        vec![Some(Tensor::new(shape.clone(), gx))]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::check_gradients;
    use crate::ops::{mul, sum_all};

    #[test]
    fn permute_transposes() {
        let x = Var::constant(Tensor::<f64>::from_f64([2, 3], &[0., 1., 2., 3., 4., 5.]));
        let y = permute(&x, &[1, 0]);
        assert_eq!(y.shape(), &[3, 2]);
        assert_eq!(y.value().data(), &[0., 3., 1., 4., 2., 5.]);
    }

    #[test]
    fn concat_then_narrow_roundtrip() {
        let a = Var::constant(Tensor::<f64>::from_f64([1, 2, 2], &[1., 2., 3., 4.]));
        let b = Var::constant(Tensor::<f64>::from_f64([1, 1, 2], &[5., 6.]));
        let c = concat(&[a.clone(), b.clone()], 1);
        assert_eq!(c.value().data(), &[1., 2., 3., 4., 5., 6.]);
        assert_eq!(narrow(&c, 1, 2, 1).value().data(), b.value().data());
    }

    #[test]
    fn gather_rows_matches_take() {
        let x = Var::constant(Tensor::<f64>::from_f64([3, 2], &[0., 1., 2., 3., 4., 5.]));
        let y = gather_rows(&x, Rc::from(vec![2, 0, 2]), 2, &[3, 2]);
        assert_eq!(y.value().data(), &[4., 5., 0., 1., 4., 5.]);
        let inputs = vec![Tensor::from_f64([3, 2], &[0.1, -0.2, 0.3, 0.4, 0.5, -0.6])];
        let err = check_gradients(&inputs, 1e-5, |v| {
            let y = gather_rows(&v[0], Rc::from(vec![1, 1, 0]), 2, &[6]);
            sum_all(&mul(&y, &y))
        });
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn shape_op_gradients() {
        let inputs = vec![
            Tensor::from_f64([2, 2, 3], &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.1, 1.2]),
            Tensor::from_f64([2, 1, 3], &[-0.5, 0.25, 0.75, 1.5, -1.0, 0.5]),
        ];
        let w = Var::constant(Tensor::from_f64([3, 2, 2], &[1., -2., 3., 0.5, 0.25, 2., -1., 4., 1.5, -0.5, 0.3, 0.7]));
        let err = check_gradients(&inputs, 1e-5, |v| {
            let c = concat(&[v[0].clone(), v[1].clone()], 1);
            let p = permute(&c, &[2, 1, 0]);
            let n = narrow(&p, 1, 1, 2);
            sum_all(&mul(&mul(&n, &n), &w))
        });
        assert!(err < 1e-8, "{err}");
    }
}
