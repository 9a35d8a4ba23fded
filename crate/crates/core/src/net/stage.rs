//! One artifact-reduction stage: degradation-aware aggregation followed by
//! global/local fusion.

use blindqe_tensor::ops::{self, Conv2dOpts};
use blindqe_tensor::{ParamStore, Scalar, Session, Var};
use rand::Rng;

use super::attention::AttentionBlock;
use super::NetConfig;
use crate::nn::{channel_view, lrelu_gain, Conv2d, Linear};
use crate::{Error, Result};

/// Channel gate in (0, 1) from the degradation vector: `sigmoid(W f_v + b)`.
pub fn project_gate<T: Scalar>(s: &Session<T>, gate: &Linear, f_v: &Var<T>) -> Var<T> {
    ops::sigmoid(&gate.forward(s, f_v))
}

/// `f + (conv(f) + f_r) * g` with `g` broadcast over space.
pub fn stda<T: Scalar>(s: &Session<T>, conv: &Conv2d, f: &Var<T>, f_r: &Var<T>, g: &Var<T>) -> Result<Var<T>> {
    let sh = f.shape();
    if sh.len() != 4 || f_r.shape() != sh {
        return Err(Error::Shape(format!("features {sh:?} and degradation tensor {:?} differ", f_r.shape())));
    }
    if g.shape() != [sh[0], sh[1]] {
        return Err(Error::Shape(format!("gate {:?} does not match features {sh:?}", g.shape())));
    }
    let m = ops::add(&conv.forward(s, f), f_r);
    Ok(ops::add(f, &ops::mul(&m, &channel_view(g))))
}

/// `[N, C, H, W] -> [N, H, W, C]` and back.
fn to_tokens<T: Scalar>(x: &Var<T>) -> Var<T> {
    ops::permute(x, &[0, 2, 3, 1])
}

fn from_tokens<T: Scalar>(x: &Var<T>) -> Var<T> {
    ops::permute(x, &[0, 3, 1, 2])
}

#[derive(Debug, Clone)]
pub struct GlobalBranch {
    pub blocks: Vec<AttentionBlock>,
}

impl GlobalBranch {
    pub fn forward<T: Scalar>(&self, s: &Session<T>, f: &Var<T>) -> Result<Var<T>> {
        let mut x = to_tokens(f);
        for b in &self.blocks {
            x = b.forward(s, &x)?;
        }
        Ok(from_tokens(&x))
    }
}

/// `f + conv(relu(sum_d dconv_d(f)))`.
#[derive(Debug, Clone)]
pub struct LocalBranch {
    pub dilated: Vec<Conv2d>,
    pub out: Conv2d,
}

impl LocalBranch {
    pub fn forward<T: Scalar>(&self, s: &Session<T>, f: &Var<T>) -> Var<T> {
        let mut acc = self.dilated[0].forward(s, f);
        for c in &self.dilated[1..] {
            acc = ops::add(&acc, &c.forward(s, f));
        }
        ops::add(f, &self.out.forward(s, &ops::relu(&acc)))
    }
}

#[derive(Debug, Clone)]
pub struct Stage {
    pub gate: Linear,
    pub stda_conv: Conv2d,
    pub global: GlobalBranch,
    pub local: LocalBranch,
}

impl Stage {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, cfg: &NetConfig, rng: &mut R) -> Self {
        let c = cfg.feat_channels;
        let blocks = (0..cfg.attn_depth)
            .map(|i| AttentionBlock::new(store, &format!("{name}.attn{i}"), c, cfg.heads, cfg.window, cfg.mlp_ratio, i % 2 == 1, rng))
            .collect();
        let dilated = cfg
            .dilations
            .iter()
            .map(|&d| Conv2d::new(store, &format!("{name}.local.d{d}"), c, c, 3, Conv2dOpts::same(3, d), 1.0, rng))
            .collect();
        Self {
            gate: Linear::new(store, &format!("{name}.gate"), cfg.degradation_dim, c, 1.0, rng),
            stda_conv: Conv2d::same(store, &format!("{name}.stda"), c, c, 3, 0.5, rng),
            global: GlobalBranch { blocks },
            local: LocalBranch {
                dilated,
                out: Conv2d::same(store, &format!("{name}.local.out"), c, c, 3, 0.5 * lrelu_gain(), rng),
            },
        }
    }

    /// `global(f_a) + local(f_a)`.
    pub fn dglf<T: Scalar>(&self, s: &Session<T>, f_a: &Var<T>) -> Result<Var<T>> {
        Ok(ops::add(&self.global.forward(s, f_a)?, &self.local.forward(s, f_a)))
    }

    pub fn forward<T: Scalar>(&self, s: &Session<T>, f: &Var<T>, f_r: &Var<T>, f_v: &Var<T>) -> Result<Var<T>> {
        let g = project_gate(s, &self.gate, f_v);
        let f_a = stda(s, &self.stda_conv, f, f_r, &g)?;
        self.dglf(s, &f_a)
    }

    /// Analytic multiply-accumulates of one stage on one `h x w` image.
    pub fn macs(&self, h: usize, w: usize) -> u64 {
        let px = (h * w) as u64;
        let per_pixel = self.stda_conv.macs_per_pixel()
            + self.global.blocks.iter().map(AttentionBlock::macs_per_pixel).sum::<u64>()
            + self.local.dilated.iter().map(Conv2d::macs_per_pixel).sum::<u64>()
            + self.local.out.macs_per_pixel();
        px * per_pixel + (self.gate.in_features * self.gate.out_features) as u64
    }
}
