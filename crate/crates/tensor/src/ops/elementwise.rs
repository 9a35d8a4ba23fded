use crate::tensor::numel;
use crate::{Scalar, Tensor, Var};

fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    let rank = a.len().max(b.len());
    (0..rank)
        .map(|i| {
            let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
            let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
            match (da, db) {
                (x, y) if x == y => x,
                (1, y) => y,
                (x, 1) => x,
                _ => panic!("shapes {a:?} and {b:?} do not broadcast"),
            }
        })
        .collect()
}

/// Strides of `shape` laid over `out`, with zero stride on broadcast axes.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let offset = out.len() - shape.len();
    let mut strides = vec![0; out.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[offset + i] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Visits every output index with the matching input offsets. The closure
/// receives contiguous runs along the last axis: `(out, a, a_step, b, b_step, len)`.
fn for_each_run(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize, usize, usize, usize),
) {
    let total = numel(out);
    if total == 0 {
        return;
    }
    if out.is_empty() {
        f(0, 0, 0, 0, 0, 1);
        return;
    }
    let rank = out.len();
    let inner = out[rank - 1];
    let (ia, ib) = (sa[rank - 1], sb[rank - 1]);
    let mut idx = vec![0usize; rank - 1];
    let (mut oa, mut ob) = (0usize, 0usize);
    let mut o = 0;
    loop {
        f(o, oa, ia, ob, ib, inner);
        o += inner;
        if o >= total {
            break;
        }
        let mut d = rank - 1;
        loop {
            d -= 1;
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out[d] {
                break;
            }
            oa -= sa[d] * out[d];
            ob -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

/// Sums `grad` (shaped like the broadcast output) down to `shape`.
fn reduce_to<T: Scalar>(grad: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if grad.shape() == shape {
        return grad.clone();
    }
    let out = grad.shape();
    let s = broadcast_strides(shape, out);
    let zero = vec![0; out.len()];
    let mut acc = vec![T::zero(); numel(shape)];
    let g = grad.data();
    for_each_run(out, &s, &zero, |o, a, step, _, _, len| {
        for j in 0..len {
            acc[a + j * step] += g[o + j];
        }
    });
    Tensor::new(shape.to_vec(), acc)
}

fn broadcast_binary<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Tensor<T> {
    if a.shape() == b.shape() {
        return a.zip_map(b, f);
    }
    let out = broadcast_shape(a.shape(), b.shape());
    let sa = broadcast_strides(a.shape(), &out);
    let sb = broadcast_strides(b.shape(), &out);
    let mut data = vec![T::zero(); numel(&out)];
    let (ad, bd) = (a.data(), b.data());
    for_each_run(&out, &sa, &sb, |o, ia, sta, ib, stb, len| {
        for j in 0..len {
            data[o + j] = f(ad[ia + j * sta], bd[ib + j * stb]);
        }
    });
    Tensor::new(out, data)
}

/// Broadcasting addition.
pub fn add<T: Scalar>(a: &Var<T>, b: &Var<T>) -> Var<T> {
    let value = broadcast_binary(a.value(), b.value(), |x, y| x + y);
    Var::from_op(value, vec![a.clone(), b.clone()], |g, p, need| {
        vec![
            need[0].then(|| reduce_to(g, p[0].shape())),
            need[1].then(|| reduce_to(g, p[1].shape())),
        ]
    })
}

/// Broadcasting subtraction.
pub fn sub<T: Scalar>(a: &Var<T>, b: &Var<T>) -> Var<T> {
    let value = broadcast_binary(a.value(), b.value(), |x, y| x - y);
    Var::from_op(value, vec![a.clone(), b.clone()], |g, p, need| {
        vec![
            need[0].then(|| reduce_to(g, p[0].shape())),
            need[1].then(|| reduce_to(&g.map(|v| -v), p[1].shape())),
        ]
    })
}

/// Broadcasting element-wise product.
pub fn mul<T: Scalar>(a: &Var<T>, b: &Var<T>) -> Var<T> {
    let value = broadcast_binary(a.value(), b.value(), |x, y| x * y);
    Var::from_op(value, vec![a.clone(), b.clone()], |g, p, need| {
        let (av, bv) = (p[0].value(), p[1].value());
        vec![
            need[0].then(|| reduce_to(&broadcast_binary(g, bv, |x, y| x * y), av.shape())),
            need[1].then(|| reduce_to(&broadcast_binary(g, av, |x, y| x * y), bv.shape())),
        ]
    })
}

/// Applies `f` element-wise; `df(x, y)` is the local derivative given input
/// `x` and output `y`.
fn unary<T: Scalar>(
    x: &Var<T>,
    f: impl Fn(T) -> T,
    df: impl Fn(T, T) -> T + 'static,
) -> Var<T> {
    let value = x.value().map(f);
    let out = value.clone();
    Var::from_op(value, vec![x.clone()], move |g, p, _| {
        let xv = p[0].value().data();
        let data = g
            .data()
            .iter()
            .zip(xv)
            .zip(out.data())
            .map(|((&g, &x), &y)| g * df(x, y))
            .collect();
        vec![Some(Tensor::new(g.shape().to_vec(), data))]
    })
}

pub fn scale<T: Scalar>(x: &Var<T>, s: T) -> Var<T> {
    unary(x, move |v| v * s, move |_, _| s)
}

pub fn add_scalar<T: Scalar>(x: &Var<T>, s: T) -> Var<T> {
    unary(x, move |v| v + s, |_, _| T::one())
}

pub fn relu<T: Scalar>(x: &Var<T>) -> Var<T> {
    unary(
        x,
        |v| v.max(T::zero()),
        |x, _| if x > T::zero() { T::one() } else { T::zero() },
    )
}

pub fn leaky_relu<T: Scalar>(x: &Var<T>, slope: T) -> Var<T> {
    unary(
        x,
        move |v| if v > T::zero() { v } else { v * slope },
        move |x, _| if x > T::zero() { T::one() } else { slope },
    )
}

pub fn sigmoid<T: Scalar>(x: &Var<T>) -> Var<T> {
    unary(
        x,
        |v| T::one() / (T::one() + (-v).exp()),
        |_, y| y * (T::one() - y),
    )
}

/// GELU, tanh approximation.
pub fn gelu<T: Scalar>(x: &Var<T>) -> Var<T> {
    let c = T::from_f64_lossy((2.0 / std::f64::consts::PI).sqrt());
    let k = T::from_f64_lossy(0.044715);
    let half = T::from_f64_lossy(0.5);
    let three = T::from_f64_lossy(3.0);
    unary(
        x,
        move |v| half * v * (T::one() + (c * (v + k * v * v * v)).tanh()),
        move |x, _| {
            let u = c * (x + k * x * x * x);
            let t = u.tanh();
            let du = c * (T::one() + three * k * x * x);
            half * (T::one() + t) + half * x * (T::one() - t * t) * du
        },
    )
}

/// Clamps to `[lo, hi]`; the gradient is zero where clamping is active.
pub fn clamp<T: Scalar>(x: &Var<T>, lo: T, hi: T) -> Var<T> {
    unary(
        x,
        move |v| v.max(lo).min(hi),
        move |x, _| {
            if x >= lo && x <= hi {
                T::one()
            } else {
                T::zero()
            }
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::check_gradients;

    fn leaf(shape: &[usize], data: &[f64]) -> Var<f64> {
        Var::leaf(Tensor::from_f64(shape.to_vec(), data), true)
    }

    #[test]
    fn broadcast_add_matches_manual() {
        let a = leaf(&[2, 3], &[1., 2., 3., 4., 5., 6.]);
        let b = leaf(&[3], &[10., 20., 30.]);
        let c = add(&a, &b);
        assert_eq!(c.value().data(), &[11., 22., 33., 14., 25., 36.]);
        let g = crate::ops::sum_all(&c).backward();
        assert_eq!(g.get(&b).unwrap().data(), &[2., 2., 2.]);
    }

    #[test]
    fn channel_gate_broadcast() {
        // [N, C, H, W] * [N, C, 1, 1]
        let x = leaf(&[1, 2, 1, 2], &[1., 2., 3., 4.]);
        let g = leaf(&[1, 2, 1, 1], &[0.5, 2.0]);
        assert_eq!(mul(&x, &g).value().data(), &[0.5, 1.0, 6.0, 8.0]);
    }

    #[test]
    fn binary_gradients() {
        let inputs = vec![
            Tensor::from_f64([2, 1, 3], &[0.3, -0.2, 0.5, 1.1, -0.7, 0.4]),
            Tensor::from_f64([4, 1], &[0.9, -1.3, 0.2, 0.6]),
        ];
        let err = check_gradients(&inputs, 1e-5, |v| {
            let p = mul(&v[0], &v[1]);
            let q = sub(&p, &v[1]);
            crate::ops::sum_all(&mul(&q, &add(&v[0], &v[1])))
        });
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn unary_gradients() {
        let inputs = vec![Tensor::from_f64([5], &[-1.3, -0.4, 0.25, 0.7, 2.1])];
        for f in [sigmoid::<f64>, gelu::<f64>, relu::<f64>] {
            let err = check_gradients(&inputs, 1e-5, |v| {
                crate::ops::sum_all(&mul(&f(&v[0]), &v[0]))
            });
            assert!(err < 1e-7, "{err}");
        }
    }
}
