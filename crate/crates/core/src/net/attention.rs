//! Windowed multi-head self-attention with cyclic shifts and a learned
//! relative position bias.

use std::rc::Rc;

use blindqe_tensor::ops;
use blindqe_tensor::{ParamId, ParamStore, Scalar, Session, Tensor, Var};
use rand::Rng;

use crate::nn::{LayerNorm, Linear};
use crate::{Error, Result};

/// Additive attention bias between tokens of different shifted regions.
pub const MASK_VALUE: f64 = -100.0;

/// Row maps between a `[N, H, W, C]` token grid and `[N * nW, w * w, C]`
/// windows of the grid rolled by `-shift` on both axes.
#[derive(Debug, Clone)]
pub struct WindowPlan {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub window: usize,
    pub shift: usize,
    partition: Rc<[usize]>,
    merge: Rc<[usize]>,
}

impl WindowPlan {
    pub fn new(n: usize, h: usize, w: usize, window: usize, shift: usize) -> Result<Self> {
        if window == 0 || h % window != 0 || w % window != 0 || h == 0 || w == 0 {
            return Err(Error::Shape(format!("{w}x{h} is not divisible into {window}x{window} windows")));
        }
        let mut partition = Vec::with_capacity(n * h * w);
        for b in 0..n {
            for wy in 0..h / window {
                for wx in 0..w / window {
                    for iy in 0..window {
                        for ix in 0..window {
                            let y = (wy * window + iy + shift) % h;
                            let x = (wx * window + ix + shift) % w;
                            partition.push((b * h + y) * w + x);
                        }
                    }
                }
            }
        }
        let mut merge = vec![0; partition.len()];
        for (i, &src) in partition.iter().enumerate() {
            merge[src] = i;
        }
        Ok(Self {
            n,
            h,
            w,
            window,
            shift,
            partition: partition.into(),
            merge: merge.into(),
        })
    }

    pub fn windows_per_image(&self) -> usize {
        (self.h / self.window) * (self.w / self.window)
    }

    pub fn tokens_per_window(&self) -> usize {
        self.window * self.window
    }

    pub fn partition<T: Scalar>(&self, x: &Var<T>, c: usize) -> Var<T> {
        let l = self.tokens_per_window();
        ops::gather_rows(x, self.partition.clone(), c, &[self.n * self.windows_per_image(), l, c])
    }

    pub fn merge<T: Scalar>(&self, x: &Var<T>, c: usize) -> Var<T> {
        ops::gather_rows(x, self.merge.clone(), c, &[self.n, self.h, self.w, c])
    }

    /// `[1, nW, 1, L, L]` mask separating regions that wrapped around in
    /// the cyclic shift; `None` without a shift.
    pub fn mask<T: Scalar>(&self) -> Option<Tensor<T>> {
        if self.shift == 0 {
            return None;
        }
        let (ws, s) = (self.window, self.shift);
        let region = |p: usize, extent: usize| {
            if p < extent - ws {
                0
            } else if p < extent - s {
                1
            } else {
                2
            }
        };
        let l = self.tokens_per_window();
        let nw = self.windows_per_image();
        let mut data = Vec::with_capacity(nw * l * l);
        for wy in 0..self.h / ws {
            for wx in 0..self.w / ws {
                let ids: Vec<usize> = (0..l)
                    .map(|t| region(wy * ws + t / ws, self.h) * 3 + region(wx * ws + t % ws, self.w))
                    .collect();
                for i in 0..l {
                    for j in 0..l {
                        data.push(if ids[i] == ids[j] { T::zero() } else { T::from_f64_lossy(MASK_VALUE) });
                    }
                }
            }
        }
        Some(Tensor::new(vec![1, nw, 1, l, l], data))
    }
}

/// Flat index into a `[(2w - 1)^2, heads]` bias table for each head and
/// token pair, laid out `[heads, L, L]`.
pub fn relative_position_index(window: usize, heads: usize) -> Rc<[usize]> {
    let l = window * window;
    let span = 2 * window - 1;
    let mut idx = Vec::with_capacity(heads * l * l);
    for h in 0..heads {
        for i in 0..l {
            for j in 0..l {
                let dy = i / window + window - 1 - j / window;
                let dx = i % window + window - 1 - j % window;
                idx.push((dy * span + dx) * heads + h);
            }
        }
    }
    idx.into()
}

#[derive(Debug, Clone)]
pub struct AttentionBlock {
    pub norm1: LayerNorm,
    pub qkv: Linear,
    pub bias_table: ParamId,
    pub proj: Linear,
    pub norm2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
    pub channels: usize,
    pub heads: usize,
    pub window: usize,
    /// Odd blocks shift their windows by half a window.
    pub shifted: bool,
}

impl AttentionBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        heads: usize,
        window: usize,
        mlp_ratio: usize,
        shifted: bool,
        rng: &mut R,
    ) -> Self {
        let span = 2 * window - 1;
        Self {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), channels),
            qkv: Linear::new(store, &format!("{name}.qkv"), channels, 3 * channels, 1.0, rng),
            bias_table: store.add(format!("{name}.rel_bias"), Tensor::uniform(vec![span * span, heads], 0.02, rng)),
            proj: Linear::new(store, &format!("{name}.proj"), channels, channels, 0.5, rng),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), channels),
            fc1: Linear::new(store, &format!("{name}.fc1"), channels, mlp_ratio * channels, 1.0, rng),
            fc2: Linear::new(store, &format!("{name}.fc2"), mlp_ratio * channels, channels, 0.5, rng),
            channels,
            heads,
            window,
            shifted,
        }
    }

    /// Shift actually used on an `h x w` grid: none when one window covers it.
    pub fn effective_shift(&self, h: usize, w: usize) -> usize {
        if self.shifted && (h > self.window || w > self.window) {
            self.window / 2
        } else {
            0
        }
    }

    /// Multi-head attention over the windows of `y: [N, H, W, C]`.
    pub fn attend<T: Scalar>(&self, s: &Session<T>, y: &Var<T>) -> Result<Var<T>> {
        let &[n, h, w, c] = y.shape() else {
            return Err(Error::Shape(format!("tokens must be [N, H, W, C], got {:?}", y.shape())));
        };
        if c != self.channels || c % self.heads != 0 {
            return Err(Error::Shape(format!("{c} channels for a {}-wide, {}-head block", self.channels, self.heads)));
        }
        let plan = WindowPlan::new(n, h, w, self.window, self.effective_shift(h, w))?;
        let (nw, l, heads, d) = (plan.windows_per_image(), plan.tokens_per_window(), self.heads, c / self.heads);
        let bw = n * nw;
        let win = plan.partition(y, c);
        let qkv = self.qkv.forward(s, &win);
        let qkv = ops::permute(&ops::reshape(&qkv, &[bw, l, 3, heads, d]), &[2, 0, 3, 1, 4]);
        let part = |i: usize| ops::reshape(&ops::narrow(&qkv, 0, i, 1), &[bw * heads, l, d]);
        let (q, k, v) = (part(0), part(1), part(2));
        let scores = ops::scale(&ops::bmm(&q, &k, true), T::from_f64_lossy(1.0 / (d as f64).sqrt()));
        let bias = ops::take(s.var(self.bias_table), relative_position_index(self.window, heads), &[1, 1, heads, l, l]);
        let mut scores = ops::add(&ops::reshape(&scores, &[n, nw, heads, l, l]), &bias);
        if let Some(mask) = plan.mask::<T>() {
            scores = ops::add(&scores, &Var::constant(mask));
        }
        let attn = ops::reshape(&ops::softmax_last(&scores), &[bw * heads, l, l]);
        let out = ops::bmm(&attn, &v, false);
        let out = ops::permute(&ops::reshape(&out, &[bw, heads, l, d]), &[0, 2, 1, 3]);
        let out = self.proj.forward(s, &ops::reshape(&out, &[bw, l, c]));
        Ok(plan.merge(&out, c))
    }

    /// Pre-norm attention and feed-forward sublayers, each residual.
    pub fn forward<T: Scalar>(&self, s: &Session<T>, x: &Var<T>) -> Result<Var<T>> {
        let x = ops::add(x, &self.attend(s, &self.norm1.forward(s, x))?);
        let ff = self.fc2.forward(s, &ops::gelu(&self.fc1.forward(s, &self.norm2.forward(s, &x))));
        Ok(ops::add(&x, &ff))
    }

    /// Multiply-accumulates per token.
    pub fn macs_per_pixel(&self) -> u64 {
        let c = self.channels as u64;
        let l = (self.window * self.window) as u64;
        let hidden = self.fc1.out_features as u64;
        3 * c * c + 2 * l * c + c * c + 2 * hidden * c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_and_merge_are_inverse() {
        let plan = WindowPlan::new(2, 4, 8, 4, 2).unwrap();
        let x = Var::constant(Tensor::<f64>::new(vec![2, 4, 8, 3], (0..192).map(|v| v as f64).collect()));
        let back = plan.merge(&plan.partition(&x, 3), 3);
        assert_eq!(back.value(), x.value());
    }

    #[test]
    fn unshifted_windows_are_contiguous_tiles() {
        let plan = WindowPlan::new(1, 4, 4, 2, 0).unwrap();
        let x = Var::constant(Tensor::<f64>::new(vec![1, 4, 4, 1], (0..16).map(|v| v as f64).collect()));
        let p = plan.partition(&x, 1);
        assert_eq!(&p.value().data()[..8], &[0., 1., 4., 5., 2., 3., 6., 7.]);
    }

    #[test]
    fn mask_only_blocks_wrapped_regions() {
        let plan = WindowPlan::new(1, 8, 8, 4, 2).unwrap();
        let m = plan.mask::<f64>().unwrap();
        let l = 16;
        // First window lies entirely in region (0, 0).
        assert!(m.data()[..l * l].iter().all(|&v| v == 0.0));
        // Last window mixes all four corner regions.
        let last = &m.data()[3 * l * l..];
        assert_eq!(last.iter().filter(|&&v| v == 0.0).count(), 4 * 4 * 4);
        assert!(WindowPlan::new(1, 8, 8, 4, 0).unwrap().mask::<f64>().is_none());
    }

    #[test]
    fn indivisible_grid_is_rejected() {
        assert!(matches!(WindowPlan::new(1, 6, 8, 4, 0), Err(Error::Shape(_))));
    }

    #[test]
    fn relative_index_is_symmetric_about_centre() {
        let idx = relative_position_index(2, 1);
        // Token pairs with equal displacement share a table entry.
        assert_eq!(idx[1], idx[2 * 4 + 3]);
        assert_eq!(idx[0], idx[4 + 1]);
    }
}
