use crate::{macs, Scalar, Tensor, Var};

fn extent(rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs + (cols - 1) * cs + 1
    }
}

/// Bounds-checked strided `C = alpha * A B + beta * C`.
/// Strides are `(row_stride, col_stride)` in elements.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: &[T],
    sa: (usize, usize),
    b: &[T],
    sb: (usize, usize),
    beta: T,
    c: &mut [T],
    sc: (usize, usize),
) {
    assert!(extent(m, k, sa.0, sa.1) <= a.len(), "gemm: A out of bounds");
    assert!(extent(k, n, sb.0, sb.1) <= b.len(), "gemm: B out of bounds");
    assert!(extent(m, n, sc.0, sc.1) <= c.len(), "gemm: C out of bounds");
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: extents checked above; `c` is uniquely borrowed.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            beta,
            c.as_mut_ptr(),
            sc.0 as isize,
            sc.1 as isize,
        );
    }
}

/// Batched product of `a: [B, M, K]` with `b: [B, K, N]`, or with
/// `b: [B, N, K]` transposed when `trans_b` is set.
pub fn bmm<T: Scalar>(a: &Var<T>, b: &Var<T>, trans_b: bool) -> Var<T> {
    let (batch, m, k) = match a.shape() {
        &[bt, m, k] => (bt, m, k),
        s => panic!("bmm: lhs must be 3-D, got {s:?}"),
    };
    let n = match (b.shape(), trans_b) {
        (&[bt, n, kk], true) if bt == batch && kk == k => n,
        (&[bt, kk, n], false) if bt == batch && kk == k => n,
        (s, _) => panic!("bmm: incompatible rhs {s:?} for lhs {:?}", a.shape()),
    };
    // B viewed as K x N.
    let sb = if trans_b { (1, k) } else { (n, 1) };
    let mut out = vec![T::zero(); batch * m * n];
    let (ad, bd) = (a.value().data(), b.value().data());
    for i in 0..batch {
        gemm(
            m,
            k,
            n,
            T::one(),
            &ad[i * m * k..(i + 1) * m * k],
            (k, 1),
            &bd[i * k * n..(i + 1) * k * n],
            sb,
            T::zero(),
            &mut out[i * m * n..(i + 1) * m * n],
            (n, 1),
        );
    }
    macs::add((batch * m * k * n) as u64);
    Var::from_op(
        Tensor::new(vec![batch, m, n], out),
        vec![a.clone(), b.clone()],
        move |g, p, need| {
            let (ad, bd, gd) = (p[0].value().data(), p[1].value().data(), g.data());
            let ga = need[0].then(|| {
                let mut ga = vec![T::zero(); batch * m * k];
                // dA = G B^T; B^T viewed as N x K.
                let sbt = if trans_b { (k, 1) } else { (1, n) };
                for i in 0..batch {
                    gemm(
                        m,
                        n,
                        k,
                        T::one(),
                        &gd[i * m * n..(i + 1) * m * n],
                        (n, 1),
                        &bd[i * k * n..(i + 1) * k * n],
                        sbt,
                        T::zero(),
                        &mut ga[i * m * k..(i + 1) * m * k],
                        (k, 1),
                    );
                }
                Tensor::new(vec![batch, m, k], ga)
            });
            let gb = need[1].then(|| {
                let mut gb = vec![T::zero(); batch * k * n];
                for i in 0..batch {
                    let (gs, as_, bs) = (
                        &gd[i * m * n..(i + 1) * m * n],
                        &ad[i * m * k..(i + 1) * m * k],
                        &mut gb[i * k * n..(i + 1) * k * n],
                    );
                    if trans_b {
                        // d(b) [N, K] = G^T A
                        gemm(n, m, k, T::one(), gs, (1, n), as_, (k, 1), T::zero(), bs, (k, 1));
                    } else {
                        // d(b) [K, N] = A^T G
                        gemm(k, m, n, T::one(), as_, (1, k), gs, (n, 1), T::zero(), bs, (n, 1));
                    }
                }
                Tensor::new(p[1].shape().to_vec(), gb)
            });
            vec![ga, gb]
        },
    )
}

/// `y = x W^T + b` over the last axis of `x`; `w` is `[out, in]`.
pub fn linear<T: Scalar>(x: &Var<T>, w: &Var<T>, bias: Option<&Var<T>>) -> Var<T> {
    let (o, k) = match w.shape() {
        &[o, k] => (o, k),
        s => panic!("linear: weight must be 2-D, got {s:?}"),
    };
    let xs = x.shape().to_vec();
    assert_eq!(*xs.last().expect("linear on scalar"), k, "linear: {xs:?} vs weight {:?}", w.shape());
    if let Some(b) = bias {
        assert_eq!(b.shape(), &[o], "linear: bias shape");
    }
    let rows = x.value().numel() / k;
    let mut out = vec![T::zero(); rows * o];
    gemm(
        rows,
        k,
        o,
        T::one(),
        x.value().data(),
        (k, 1),
        w.value().data(),
        (1, k),
        T::zero(),
        &mut out,
        (o, 1),
    );
    if let Some(b) = bias {
        let bd = b.value().data();
        for row in out.chunks_mut(o) {
            for (v, &bv) in row.iter_mut().zip(bd) {
                *v += bv;
            }
        }
    }
    macs::add((rows * k * o) as u64);
    let mut out_shape = xs.clone();
    *out_shape.last_mut().unwrap() = o;
    let mut parents = vec![x.clone(), w.clone()];
    parents.extend(bias.cloned());
    Var::from_op(Tensor::new(out_shape, out), parents, move |g, p, need| {
        let gd = g.data();
        let gx = need[0].then(|| {
            let mut gx = vec![T::zero(); rows * k];
            gemm(rows, o, k, T::one(), gd, (o, 1), p[1].value().data(), (k, 1), T::zero(), &mut gx, (k, 1));
            Tensor::new(xs.clone(), gx)
        });
        let gw = need[1].then(|| {
            let mut gw = vec![T::zero(); o * k];
            gemm(o, rows, k, T::one(), gd, (1, o), p[0].value().data(), (k, 1), T::zero(), &mut gw, (k, 1));
            Tensor::new(vec![o, k], gw)
        });
        let mut res = vec![gx, gw];
        if p.len() == 3 {
            res.push(need[2].then(|| {
                let mut gb = vec![T::zero(); o];
                for row in gd.chunks(o) {
                    for (acc, &v) in gb.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                Tensor::new(vec![o], gb)
            }));
        }
        res
    })
}
