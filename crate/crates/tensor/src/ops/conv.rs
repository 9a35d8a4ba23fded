use crate::ops::linalg::gemm;
use crate::{macs, Scalar, Tensor, Var};

/// Stride, zero padding and dilation of a 2-D convolution (same for both axes).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dOpts {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl Default for Conv2dOpts {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
            dilation: 1,
        }
    }
}

impl Conv2dOpts {
    /// Stride 1 with "same" padding for an odd kernel.
    pub fn same(kernel: usize, dilation: usize) -> Self {
        Self {
            stride: 1,
            padding: dilation * (kernel - 1) / 2,
            dilation,
        }
    }
}

pub fn conv2d_output_size(input: usize, kernel: usize, o: Conv2dOpts) -> usize {
    let eff = o.dilation * (kernel - 1) + 1;
    assert!(input + 2 * o.padding >= eff, "conv2d: kernel larger than padded input");
    (input + 2 * o.padding - eff) / o.stride + 1
}

struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    o: Conv2dOpts,
}

impl Geometry {
    /// `[c * kh * kw, oh * ow]` column matrix for one image.
    fn im2col<T: Scalar>(&self, x: &[T], cols: &mut [T]) {
        let Geometry { c, h, w, kh, kw, oh, ow, o } = *self;
        let mut row = 0;
        for ci in 0..c {
            let img = &x[ci * h * w..(ci + 1) * h * w];
            for ky in 0..kh {
                for kx in 0..kw {
                    let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                    for oy in 0..oh {
                        let iy = (oy * o.stride + ky * o.dilation) as isize - o.padding as isize;
                        let line = &mut dst[oy * ow..(oy + 1) * ow];
                        if iy < 0 || iy >= h as isize {
                            line.fill(T::zero());
                            continue;
                        }
                        let src = &img[iy as usize * w..(iy as usize + 1) * w];
                        let shift = (kx * o.dilation) as isize - o.padding as isize;
                        if o.stride == 1 {
                            let lo = (-shift).clamp(0, ow as isize) as usize;
                            let hi = (w as isize - shift).clamp(lo as isize, ow as isize) as usize;
                            line[..lo].fill(T::zero());
                            line[hi..].fill(T::zero());
                            let s0 = (lo as isize + shift) as usize;
                            line[lo..hi].copy_from_slice(&src[s0..s0 + hi - lo]);
                        } else {
                            for (ox, v) in line.iter_mut().enumerate() {
                                let ix = (ox * o.stride) as isize + shift;
                                *v = if ix >= 0 && ix < w as isize {
                                    src[ix as usize]
                                } else {
                                    T::zero()
                                };
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    /// Adjoint of `im2col`: accumulates columns back into the image.
    fn col2im<T: Scalar>(&self, cols: &[T], dx: &mut [T]) {
        let Geometry { c, h, w, kh, kw, oh, ow, o } = *self;
        let mut row = 0;
        for ci in 0..c {
            let img = &mut dx[ci * h * w..(ci + 1) * h * w];
            for ky in 0..kh {
                for kx in 0..kw {
                    let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                    for oy in 0..oh {
                        let iy = (oy * o.stride + ky * o.dilation) as isize - o.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut img[iy as usize * w..(iy as usize + 1) * w];
                        let shift = (kx * o.dilation) as isize - o.padding as isize;
                        let line = &src[oy * ow..(oy + 1) * ow];
                        for (ox, &v) in line.iter().enumerate() {
                            let ix = (ox * o.stride) as isize + shift;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += v;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// 2-D convolution of `x: [N, C, H, W]` with `w: [O, C, KH, KW]` and an
/// optional bias `[O]`.
pub fn conv2d<T: Scalar>(x: &Var<T>, w: &Var<T>, bias: Option<&Var<T>>, o: Conv2dOpts) -> Var<T> {
    let (n, c, h, wd) = x.value().dims4();
    let (co, ci, kh, kw) = w.value().dims4();
    assert_eq!(c, ci, "conv2d: input has {c} channels, weight expects {ci}");
    if let Some(b) = bias {
        assert_eq!(b.shape(), &[co], "conv2d: bias shape");
    }
    let geo = Geometry {
        c,
        h,
        w: wd,
        kh,
        kw,
        oh: conv2d_output_size(h, kh, o),
        ow: conv2d_output_size(wd, kw, o),
        o,
    };
    let (oh, ow) = (geo.oh, geo.ow);
    let krows = c * kh * kw;
    let plane = oh * ow;
    let mut cols = vec![T::zero(); krows * plane];
    let mut out = vec![T::zero(); n * co * plane];
    let (xd, wdta) = (x.value().data(), w.value().data());
    for b in 0..n {
        geo.im2col(&xd[b * c * h * wd..(b + 1) * c * h * wd], &mut cols);
        let dst = &mut out[b * co * plane..(b + 1) * co * plane];
        gemm(co, krows, plane, T::one(), wdta, (krows, 1), &cols, (plane, 1), T::zero(), dst, (plane, 1));
        if let Some(bias) = bias {
            for (ch, &bv) in bias.value().data().iter().enumerate() {
                for v in &mut dst[ch * plane..(ch + 1) * plane] {
                    *v += bv;
                }
            }
        }
    }
    macs::add((n * co * krows * plane) as u64);

    let mut parents = vec![x.clone(), w.clone()];
    parents.extend(bias.cloned());
    Var::from_op(
        Tensor::new(vec![n, co, oh, ow], out),
        parents,
        move |g, p, need| {
            let (xd, wdta, gd) = (p[0].value().data(), p[1].value().data(), g.data());
            let mut gx = need[0].then(|| vec![T::zero(); n * c * h * wd]);
            let mut gw = need[1].then(|| vec![T::zero(); co * krows]);
            let mut cols = vec![T::zero(); krows * plane];
            for b in 0..n {
                let gb = &gd[b * co * plane..(b + 1) * co * plane];
                if let Some(gw) = gw.as_mut() {
                    geo.im2col(&xd[b * c * h * wd..(b + 1) * c * h * wd], &mut cols);
                    // dW += G cols^T
                    gemm(co, plane, krows, T::one(), gb, (plane, 1), &cols, (1, plane), T::one(), gw, (krows, 1));
                }
                if let Some(gx) = gx.as_mut() {
                    // dcols = W^T G
                    gemm(krows, co, plane, T::one(), wdta, (1, krows), gb, (plane, 1), T::zero(), &mut cols, (plane, 1));
                    geo.col2im(&cols, &mut gx[b * c * h * wd..(b + 1) * c * h * wd]);
                }
            }
            let mut res = vec![
                gx.map(|v| Tensor::new(vec![n, c, h, wd], v)),
                gw.map(|v| Tensor::new(vec![co, c, kh, kw], v)),
            ];
            if p.len() == 3 {
                res.push(need[2].then(|| {
                    let mut gbias = vec![T::zero(); co];
                    for b in 0..n {
                        for (ch, acc) in gbias.iter_mut().enumerate() {
                            let s = (b * co + ch) * plane;
                            *acc += gd[s..s + plane].iter().copied().sum::<T>();
                        }
                    }
                    Tensor::new(vec![co], gbias)
                }));
            }
            res
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::check_gradients;
    use crate::ops::{mul, sum_all};
    use rand::SeedableRng;

    fn rand_t(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Tensor::uniform(shape.to_vec(), 1.0, &mut rng)
    }

    fn naive(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, o: Conv2dOpts) -> Tensor<f64> {
        let (n, c, h, wd) = x.dims4();
        let (co, _, kh, kw) = w.dims4();
        let oh = conv2d_output_size(h, kh, o);
        let ow = conv2d_output_size(wd, kw, o);
        let mut out = Tensor::zeros(vec![n, co, oh, ow]);
        for bi in 0..n {
            for oc in 0..co {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut s = b.data()[oc];
                        for ic in 0..c {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (y * o.stride + ky * o.dilation) as isize - o.padding as isize;
                                    let ix = (xx * o.stride + kx * o.dilation) as isize - o.padding as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        s += x.get(&[bi, ic, iy as usize, ix as usize]) * w.get(&[oc, ic, ky, kx]);
                                    }
                                }
                            }
                        }
                        out.set(&[bi, oc, y, xx], s);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn matches_naive_for_stride_and_dilation() {
        let x = rand_t(&[2, 3, 9, 8], 1);
        let w = rand_t(&[4, 3, 3, 3], 2);
        let b = rand_t(&[4], 3);
        for o in [
            Conv2dOpts::same(3, 1),
            Conv2dOpts::same(3, 2),
            Conv2dOpts::same(3, 4),
            Conv2dOpts { stride: 2, padding: 1, dilation: 1 },
            Conv2dOpts { stride: 1, padding: 0, dilation: 1 },
        ] {
            let y = conv2d(&Var::constant(x.clone()), &Var::constant(w.clone()), Some(&Var::constant(b.clone())), o);
            let want = naive(&x, &w, &b, o);
            assert_eq!(y.shape(), want.shape());
            for (a, e) in y.value().data().iter().zip(want.data()) {
                assert!((a - e).abs() < 1e-12, "{o:?}");
            }
        }
    }

    #[test]
    fn gradients_for_stride_and_dilation() {
        for o in [Conv2dOpts::same(3, 2), Conv2dOpts { stride: 2, padding: 1, dilation: 1 }] {
            let inputs = vec![rand_t(&[2, 2, 6, 5], 4), rand_t(&[3, 2, 3, 3], 5), rand_t(&[3], 6)];
            let err = check_gradients(&inputs, 1e-5, |v| {
                let y = conv2d(&v[0], &v[1], Some(&v[2]), o);
                sum_all(&mul(&y, &y))
            });
            assert!(err < 1e-8, "{o:?}: {err}");
        }
    }

    #[test]
    fn counts_macs() {
        let x = Var::constant(Tensor::<f32>::zeros(vec![1, 2, 4, 4]));
        let w = Var::constant(Tensor::<f32>::zeros(vec![3, 2, 3, 3]));
        let (_, m) = crate::macs::measure(|| conv2d(&x, &w, None, Conv2dOpts::same(3, 1)));
        assert_eq!(m, 3 * 2 * 9 * 16);
    }
}
