use crate::{Scalar, Tensor, Var};

/// Source taps for resizing `src` samples to `dst` with half-pixel centers
/// (`align_corners = false`): `(i0, i1, weight_of_i1)`.
fn linear_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (s.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

/// Bilinear resize of `[N, C, H, W]` to `[N, C, out_h, out_w]`.
pub fn upsample_bilinear<T: Scalar>(x: &Var<T>, out_h: usize, out_w: usize) -> Var<T> {
    let (n, c, h, w) = x.value().dims4();
    if (h, w) == (out_h, out_w) {
        return x.clone();
    }
    let ty = linear_taps(h, out_h);
    let tx = linear_taps(w, out_w);
    let xd = x.value().data();
    let mut out = vec![T::zero(); n * c * out_h * out_w];
    for p in 0..n * c {
        let src = &xd[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * out_h * out_w..(p + 1) * out_h * out_w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy = T::from_f64_lossy(fy);
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let fx = T::from_f64_lossy(fx);
                let top = src[y0 * w + x0] * (T::one() - fx) + src[y0 * w + x1] * fx;
                let bot = src[y1 * w + x0] * (T::one() - fx) + src[y1 * w + x1] * fx;
                dst[oy * out_w + ox] = top * (T::one() - fy) + bot * fy;
            }
        }
    }
    Var::from_op(
        Tensor::new(vec![n, c, out_h, out_w], out),
        vec![x.clone()],
        move |g, _, _| {
            let gd = g.data();
            let mut gx = vec![T::zero(); n * c * h * w];
            for p in 0..n * c {
                let src = &gd[p * out_h * out_w..(p + 1) * out_h * out_w];
                let dst = &mut gx[p * h * w..(p + 1) * h * w];
                for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                    let fy = T::from_f64_lossy(fy);
                    for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                        let fx = T::from_f64_lossy(fx);
                        let v = src[oy * out_w + ox];
                        let (a, b) = (v * (T::one() - fy), v * fy);
                        dst[y0 * w + x0] += a * (T::one() - fx);
                        dst[y0 * w + x1] += a * fx;
                        dst[y1 * w + x0] += b * (T::one() - fx);
                        dst[y1 * w + x1] += b * fx;
                    }
                }
            }
            vec![Some(Tensor::new(vec![n, c, h, w], gx))]
        },
    )
}

/// 2x2 average pooling with stride 2; H and W must be even.
pub fn avg_pool2<T: Scalar>(x: &Var<T>) -> Var<T> {
    let (n, c, h, w) = x.value().dims4();
    assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even sizes, got {h}x{w}");
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::from_f64_lossy(0.25);
    let xd = x.value().data();
    let mut out = vec![T::zero(); n * c * oh * ow];
    for p in 0..n * c {
        let src = &xd[p * h * w..];
        for y in 0..oh {
            for xx in 0..ow {
                let s = src[2 * y * w + 2 * xx]
                    + src[2 * y * w + 2 * xx + 1]
                    + src[(2 * y + 1) * w + 2 * xx]
                    + src[(2 * y + 1) * w + 2 * xx + 1];
                out[(p * oh + y) * ow + xx] = s * quarter;
            }
        }
    }
    Var::from_op(
        Tensor::new(vec![n, c, oh, ow], out),
        vec![x.clone()],
        move |g, _, _| {
            let mut gx = vec![T::zero(); n * c * h * w];
            for (i, &gv) in g.data().iter().enumerate() {
                let p = i / (oh * ow);
                let (y, xx) = ((i / ow) % oh, i % ow);
                let base = p * h * w;
                let v = gv * quarter;
                gx[base + 2 * y * w + 2 * xx] += v;
                gx[base + 2 * y * w + 2 * xx + 1] += v;
                gx[base + (2 * y + 1) * w + 2 * xx] += v;
                gx[base + (2 * y + 1) * w + 2 * xx + 1] += v;
            }
            vec![Some(Tensor::new(vec![n, c, h, w], gx))]
        },
    )
}

/// Bilinear tap set for one fractional position; out-of-image corners carry
/// no index and contribute zero.
#[derive(Clone, Copy)]
struct Taps {
    idx: [Option<usize>; 4],
    wy: f64,
    wx: f64,
}

impl Taps {
    fn at(py: f64, px: f64, h: usize, w: usize) -> Self {
        let y0 = py.floor();
        let x0 = px.floor();
        let (wy, wx) = (py - y0, px - x0);
        let (y0, x0) = (y0 as isize, x0 as isize);
        let inside = |y: isize, x: isize| {
            (y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w)
                .then(|| y as usize * w + x as usize)
        };
        Taps {
            idx: [
                inside(y0, x0),
                inside(y0, x0 + 1),
                inside(y0 + 1, x0),
                inside(y0 + 1, x0 + 1),
            ],
            wy,
            wx,
        }
    }

    fn corner_values<T: Scalar>(&self, img: &[T]) -> [f64; 4] {
        self.idx.map(|i| i.map_or(0.0, |i| img[i].as_f64()))
    }

    fn weights(&self) -> [f64; 4] {
        let (wy, wx) = (self.wy, self.wx);
        [(1.0 - wy) * (1.0 - wx), (1.0 - wy) * wx, wy * (1.0 - wx), wy * wx]
    }
}

/// Deformable-convolution column extraction.
///
/// For `feat: [N, C, H, W]` and `offsets: [N, 2 * K * K, H, W]` (pairs of
/// `(dy, dx)` per kernel tap, tap-major), produces `[N, C * K * K, H, W]`
/// where channel `c * K * K + t` holds `feat[c]` bilinearly sampled at
/// `(y + ky * dil - pad + dy, x + kx * dil - pad + dx)`, `pad = dil * (K - 1) / 2`.
/// With all offsets zero this is exactly the stride-1 "same" im2col, so a
/// `1x1` convolution over the result equals a `KxK` convolution.
pub fn deform_columns<T: Scalar>(
    feat: &Var<T>,
    offsets: &Var<T>,
    kernel: usize,
    dilation: usize,
) -> Var<T> {
    let (n, c, h, w) = feat.value().dims4();
    let taps = kernel * kernel;
    assert_eq!(
        offsets.shape(),
        &[n, 2 * taps, h, w],
        "deform_columns: offsets must be [N, 2*K*K, H, W]"
    );
    let pad = (dilation * (kernel - 1) / 2) as f64;
    let plane = h * w;
    let sample_pos = move |od: &[T], b: usize, t: usize, y: usize, x: usize| {
        let (ky, kx) = (t / kernel, t % kernel);
        let oy = od[((b * 2 * taps + 2 * t) * h + y) * w + x].as_f64();
        let ox = od[((b * 2 * taps + 2 * t + 1) * h + y) * w + x].as_f64();
        (
            y as f64 + (ky * dilation) as f64 - pad + oy,
            x as f64 + (kx * dilation) as f64 - pad + ox,
        )
    };

    let (fd, od) = (feat.value().data(), offsets.value().data());
    let mut out = vec![T::zero(); n * c * taps * plane];
    for b in 0..n {
        for t in 0..taps {
            for y in 0..h {
                for x in 0..w {
                    let (py, px) = sample_pos(od, b, t, y, x);
                    let tp = Taps::at(py, px, h, w);
                    let wts = tp.weights();
                    for ch in 0..c {
                        let img = &fd[(b * c + ch) * plane..(b * c + ch + 1) * plane];
                        let v: f64 = tp
                            .corner_values(img)
                            .iter()
                            .zip(&wts)
                            .map(|(a, b)| a * b)
                            .sum();
                        out[((b * c + ch) * taps + t) * plane + y * w + x] = T::from_f64_lossy(v);
                    }
                }
            }
        }
    }

    Var::from_op(
        Tensor::new(vec![n, c * taps, h, w], out),
        vec![feat.clone(), offsets.clone()],
        move |g, p, need| {
            let (fd, od, gd) = (p[0].value().data(), p[1].value().data(), g.data());
            let mut gf = need[0].then(|| vec![T::zero(); n * c * plane]);
            let mut go = need[1].then(|| vec![T::zero(); n * 2 * taps * plane]);
            for b in 0..n {
                for t in 0..taps {
                    for y in 0..h {
                        for x in 0..w {
                            let (py, px) = sample_pos(od, b, t, y, x);
                            let tp = Taps::at(py, px, h, w);
                            let wts = tp.weights();
                            let (mut dy, mut dx) = (0.0, 0.0);
                            for ch in 0..c {
                                let gv = gd[((b * c + ch) * taps + t) * plane + y * w + x].as_f64();
                                if gv == 0.0 {
                                    continue;
                                }
                                let base = (b * c + ch) * plane;
                                if let Some(gf) = gf.as_mut() {
                                    for (i, wt) in tp.idx.iter().zip(&wts) {
                                        if let Some(i) = i {
                                            gf[base + i] += T::from_f64_lossy(gv * wt);
                                        }
                                    }
                                }
                                if go.is_some() {
                                    let [v00, v01, v10, v11] = tp.corner_values(&fd[base..base + plane]);
                                    dy += gv * ((1.0 - tp.wx) * (v10 - v00) + tp.wx * (v11 - v01));
                                    dx += gv * ((1.0 - tp.wy) * (v01 - v00) + tp.wy * (v11 - v10));
                                }
                            }
                            if let Some(go) = go.as_mut() {
                                go[((b * 2 * taps + 2 * t) * h + y) * w + x] += T::from_f64_lossy(dy);
                                go[((b * 2 * taps + 2 * t + 1) * h + y) * w + x] += T::from_f64_lossy(dx);
                            }
                        }
                    }
                }
            }
            vec![
                gf.map(|v| Tensor::new(vec![n, c, h, w], v)),
                go.map(|v| Tensor::new(vec![n, 2 * taps, h, w], v)),
            ]
        },
    )
}
