use crate::{Scalar, Tensor, Var};

/// Softmax over the last axis.
pub fn softmax_last<T: Scalar>(x: &Var<T>) -> Var<T> {
    let inner = *x.shape().last().expect("softmax on scalar");
    let mut out = x.value().data().to_vec();
    for row in out.chunks_mut(inner) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut s = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    let y = Tensor::new(x.shape().to_vec(), out);
    let saved = y.clone();
    Var::from_op(y, vec![x.clone()], move |g, _, _| {
        let mut gx = vec![T::zero(); g.numel()];
        for ((gr, yr), dst) in g
            .data()
            .chunks(inner)
            .zip(saved.data().chunks(inner))
            .zip(gx.chunks_mut(inner))
        {
            let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
            for ((d, &gv), &yv) in dst.iter_mut().zip(gr).zip(yr) {
                *d = yv * (gv - dot);
            }
        }
        vec![Some(Tensor::new(g.shape().to_vec(), gx))]
    })
}

/// Layer normalization over the last axis with affine `gamma`, `beta` of
/// that axis' length.
pub fn layer_norm_last<T: Scalar>(x: &Var<T>, gamma: &Var<T>, beta: &Var<T>, eps: f64) -> Var<T> {
    let d = *x.shape().last().expect("layer_norm on scalar");
    assert_eq!(gamma.shape(), &[d], "layer_norm: gamma shape");
    assert_eq!(beta.shape(), &[d], "layer_norm: beta shape");
    let eps = T::from_f64_lossy(eps);
    let nd = T::from_usize(d).unwrap();
    let rows = x.value().numel() / d;
    let mut xhat = vec![T::zero(); rows * d];
    let mut inv_std = vec![T::zero(); rows];
    for (r, row) in x.value().data().chunks(d).enumerate() {
        let mean = row.iter().copied().sum::<T>() / nd;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nd;
        let is = T::one() / (var + eps).sqrt();
        inv_std[r] = is;
        for (o, &v) in xhat[r * d..(r + 1) * d].iter_mut().zip(row) {
            *o = (v - mean) * is;
        }
    }
    let (gd, bd) = (gamma.value().data(), beta.value().data());
    let out: Vec<T> = xhat
        .iter()
        .enumerate()
        .map(|(i, &v)| v * gd[i % d] + bd[i % d])
        .collect();
    Var::from_op(
        Tensor::new(x.shape().to_vec(), out),
        vec![x.clone(), gamma.clone(), beta.clone()],
        move |g, p, need| {
            let gam = p[1].value().data();
            let go = g.data();
            let gx = need[0].then(|| {
                let mut gx = vec![T::zero(); rows * d];
                for r in 0..rows {
                    let xh = &xhat[r * d..(r + 1) * d];
                    let gr = &go[r * d..(r + 1) * d];
                    let mut s1 = T::zero();
                    let mut s2 = T::zero();
                    for j in 0..d {
                        let gy = gr[j] * gam[j];
                        s1 += gy;
                        s2 += gy * xh[j];
                    }
                    for j in 0..d {
                        let gy = gr[j] * gam[j];
                        gx[r * d + j] = inv_std[r] * (gy - s1 / nd - xh[j] * s2 / nd);
                    }
                }
                Tensor::new(p[0].shape().to_vec(), gx)
            });
            let ggamma = need[1].then(|| {
                let mut acc = vec![T::zero(); d];
                for (i, (&gv, &xh)) in go.iter().zip(&xhat).enumerate() {
                    acc[i % d] += gv * xh;
                }
                Tensor::new(vec![d], acc)
            });
            let gbeta = need[2].then(|| {
                let mut acc = vec![T::zero(); d];
                for (i, &gv) in go.iter().enumerate() {
                    acc[i % d] += gv;
                }
                Tensor::new(vec![d], acc)
            });
            vec![gx, ggamma, gbeta]
        },
    )
}
