//! Two-scale reconstruction head with squeeze-and-excitation gating.

use blindqe_tensor::ops::{self, Conv2dOpts};
use blindqe_tensor::{ParamStore, Scalar, Session, Var};
use rand::Rng;

use super::NetConfig;
use crate::nn::{channel_view, global_avg_pool, lrelu, lrelu_gain, Conv2d, LayerNorm, Linear};

#[derive(Debug, Clone)]
pub struct SqueezeExcite {
    pub down: Linear,
    pub up: Linear,
}

impl SqueezeExcite {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, c: usize, reduction: usize, rng: &mut R) -> Self {
        let hidden = (c / reduction.max(1)).max(1);
        Self {
            down: Linear::new(store, &format!("{name}.down"), c, hidden, 2f64.sqrt(), rng),
            up: Linear::new(store, &format!("{name}.up"), hidden, c, 1.0, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, s: &Session<T>, x: &Var<T>) -> Var<T> {
        let z = ops::relu(&self.down.forward(s, &global_avg_pool(x)));
        let g = ops::sigmoid(&self.up.forward(s, &z));
        ops::mul(x, &channel_view(&g))
    }
}

#[derive(Debug, Clone)]
pub struct QeHead {
    /// Per-pixel channel normalization; stage outputs grow with depth and
    /// the head should see the same scale at every termination level.
    pub norm: LayerNorm,
    pub full: Conv2d,
    pub full_se: SqueezeExcite,
    pub half: Conv2d,
    pub half_se: SqueezeExcite,
    pub fuse: Conv2d,
    /// Zero-initialized: an untrained head passes the target through.
    pub recon: Conv2d,
}

impl QeHead {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, cfg: &NetConfig, rng: &mut R) -> Self {
        let c = cfg.feat_channels;
        let g = lrelu_gain();
        Self {
            norm: LayerNorm::new(store, "qe.norm", c),
            full: Conv2d::same(store, "qe.full", c, c, 3, g, rng),
            full_se: SqueezeExcite::new(store, "qe.full_se", c, cfg.qe_reduction, rng),
            half: Conv2d::new(store, "qe.half", c, c, 3, Conv2dOpts { stride: 2, padding: 1, dilation: 1 }, g, rng),
            half_se: SqueezeExcite::new(store, "qe.half_se", c, cfg.qe_reduction, rng),
            fuse: Conv2d::same(store, "qe.fuse", 2 * c, c, 1, g, rng),
            recon: Conv2d::zeros(store, "qe.recon", c, 1, 3, Conv2dOpts::same(3, 1)),
        }
    }

    /// Residual `R: [N, 1, H, W]` from the final stage features.
    pub fn residual<T: Scalar>(&self, s: &Session<T>, f: &Var<T>) -> Var<T> {
        let (h, w) = (f.shape()[2], f.shape()[3]);
        let f = &ops::permute(&self.norm.forward(s, &ops::permute(f, &[0, 2, 3, 1])), &[0, 3, 1, 2]);
        let a = self.full_se.forward(s, &lrelu(&self.full.forward(s, f)));
        let b = self.half_se.forward(s, &lrelu(&self.half.forward(s, f)));
        let b = ops::upsample_bilinear(&b, h, w);
        let fused = lrelu(&self.fuse.forward(s, &ops::concat(&[a, b], 1)));
        self.recon.forward(s, &fused)
    }

    /// `clip(x_t + R)` in the unit pixel range.
    pub fn forward<T: Scalar>(&self, s: &Session<T>, f: &Var<T>, target: &Var<T>) -> Var<T> {
        ops::clamp(&ops::add(target, &self.residual(s, f)), T::zero(), T::one())
    }
}
