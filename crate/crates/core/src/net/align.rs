//! Coarse temporal alignment with deformable sampling of neighbour features.

use blindqe_tensor::ops;
use blindqe_tensor::{ParamStore, Scalar, Session, Var};
use rand::Rng;

use super::NetConfig;
use crate::nn::{lrelu, lrelu_gain, Conv2d};
use crate::{Error, Result};

/// Deformable kernel side; `deform_points` must be its square.
pub const DEFORM_KERNEL: usize = 3;

#[derive(Debug, Clone)]
pub struct NeighbourPath {
    pub offset_hidden: Conv2d,
    /// Zero-initialized so sampling starts on the regular grid.
    pub offset_out: Conv2d,
    pub aggregate: Conv2d,
}

#[derive(Debug, Clone)]
pub struct CoarseAlign {
    pub feat: Conv2d,
    /// Offset predictor and neighbour aggregation; absent for a single frame.
    pub neighbours: Option<NeighbourPath>,
    pub fuse: Conv2d,
    pub frames: usize,
    pub channels: usize,
}

impl CoarseAlign {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, cfg: &NetConfig, rng: &mut R) -> Self {
        let (t, c) = (2 * cfg.radius + 1, cfg.feat_channels);
        let neighbours = t - 1;
        let taps = DEFORM_KERNEL * DEFORM_KERNEL;
        let g = lrelu_gain();
        let pad = ops::Conv2dOpts::same(DEFORM_KERNEL, 1);
        Self {
            feat: Conv2d::same(store, "align.feat", 1, c, 3, g, rng),
            neighbours: (neighbours > 0).then(|| NeighbourPath {
                offset_hidden: Conv2d::same(store, "align.offset.hidden", t, c, 3, g, rng),
                offset_out: Conv2d::zeros(store, "align.offset.out", c, 2 * taps * neighbours, 3, pad),
                aggregate: Conv2d::same(store, "align.aggregate", neighbours * c * taps, c, 1, g, rng),
            }),
            fuse: Conv2d::same(store, "align.fuse", if neighbours > 0 { 2 * c } else { c }, c, 3, g, rng),
            frames: t,
            channels: c,
        }
    }

    /// `frames: [N, 2r+1, H, W]` with the target in the middle, to
    /// `[N, C, H, W]`.
    pub fn forward<T: Scalar>(&self, s: &Session<T>, frames: &Var<T>) -> Result<Var<T>> {
        let sh = frames.shape();
        if sh.len() != 4 || sh[1] != self.frames {
            return Err(Error::Shape(format!("expected [N, {}, H, W] frames, got {sh:?}", self.frames)));
        }
        let (n, t, h, w) = (sh[0], sh[1], sh[2], sh[3]);
        let c = self.channels;
        let r = t / 2;
        let feats = lrelu(&self.feat.forward(s, &ops::reshape(frames, &[n * t, 1, h, w])));
        let feats = ops::reshape(&feats, &[n, t, c, h, w]);
        let frame_feat = |i: usize| ops::reshape(&ops::narrow(&feats, 1, i, 1), &[n, c, h, w]);
        let target = frame_feat(r);
        let Some(nb) = &self.neighbours else {
            return Ok(lrelu(&self.fuse.forward(s, &target)));
        };
        let offsets = nb.offset_out.forward(s, &lrelu(&nb.offset_hidden.forward(s, frames)));
        let per = 2 * DEFORM_KERNEL * DEFORM_KERNEL;
        let cols: Vec<Var<T>> = (0..t)
            .filter(|&i| i != r)
            .enumerate()
            .map(|(j, i)| {
                let off = ops::narrow(&offsets, 1, j * per, per);
                ops::deform_columns(&frame_feat(i), &off, DEFORM_KERNEL, 1)
            })
            .collect();
        let aligned = lrelu(&nb.aggregate.forward(s, &ops::concat(&cols, 1)));
        Ok(lrelu(&self.fuse.forward(s, &ops::concat(&[target, aligned], 1))))
    }
}
