//! Degradation representation encoder: a strided residual CNN whose pooled
//! features classify compression strength and serve as a contrastive
//! embedding.

mod pretrain;

use blindqe_tensor::ops::{self, Conv2dOpts};
use blindqe_tensor::{ParamStore, Scalar, Session, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{ModelKind, ModelWeights};
use crate::nn::{self, lrelu, lrelu_gain, Conv2d, Linear};
use crate::{Error, Result};

pub use pretrain::{pretrain_drl, DrlDataset, PretrainConfig, PretrainOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrlConfig {
    pub stage_channels: Vec<usize>,
    pub residual_blocks_per_stage: usize,
    pub class_count: usize,
    pub tau: f64,
    pub lambda: f64,
    pub working_channels: usize,
    pub mlp_hidden: usize,
    /// Compression level of each class, mildest first.
    pub qp_levels: Vec<i32>,
}

impl Default for DrlConfig {
    fn default() -> Self {
        Self {
            stage_channels: vec![64, 64, 128, 256],
            residual_blocks_per_stage: 2,
            class_count: 5,
            tau: 0.07,
            lambda: 1.0,
            working_channels: 64,
            mlp_hidden: 128,
            qp_levels: vec![22, 27, 32, 37, 42],
        }
    }
}

/// Total spatial reduction of the encoder.
pub const DOWNSAMPLE: usize = 16;

impl DrlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stage_channels.len() != 4 || self.stage_channels.contains(&0) {
            return Err(Error::Config(format!(
                "stage_channels must list 4 positive widths, got {:?}",
                self.stage_channels
            )));
        }
        if self.class_count < 2 {
            return Err(Error::Config("class_count must be at least 2".into()));
        }
        if self.qp_levels.len() != self.class_count {
            return Err(Error::Config(format!(
                "class_count {} does not match {} qp_levels",
                self.class_count,
                self.qp_levels.len()
            )));
        }
        if self.qp_levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("qp_levels must be strictly increasing".into()));
        }
        if !(self.tau > 0.0) || !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::Config(format!("need tau > 0 and lambda >= 0, got {} and {}", self.tau, self.lambda)));
        }
        if self.working_channels == 0 || self.mlp_hidden == 0 {
            return Err(Error::Config("working_channels and mlp_hidden must be positive".into()));
        }
        Ok(())
    }

    /// Length of the degradation vector.
    pub fn vector_dim(&self) -> usize {
        self.stage_channels[3]
    }
}

#[derive(Debug, Clone)]
struct ResBlock {
    a: Conv2d,
    b: Conv2d,
}

#[derive(Debug, Clone)]
struct Stage {
    blocks: Vec<ResBlock>,
    down: Conv2d,
}

/// Layer layout of the encoder; parameter values live in a store.
#[derive(Debug, Clone)]
pub struct DrlArch {
    config: DrlConfig,
    stem: Conv2d,
    stages: Vec<Stage>,
    proj: Vec<Conv2d>,
    fuse: Conv2d,
    hidden: Linear,
    logits: Linear,
}

/// Batched encoder outputs for `[N, 1, H, W]` input.
#[derive(Debug, Clone)]
pub struct DegradationRepresentation<T: Scalar> {
    /// `[N, working_channels, H, W]`.
    pub f_r: Var<T>,
    /// `[N, D]`.
    pub f_v: Var<T>,
    /// `[N, C]`.
    pub logits: Var<T>,
    pub levels: Vec<usize>,
}

/// Index of the largest entry, the first one on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn levels_of<T: Scalar>(logits: &Tensor<T>) -> Vec<usize> {
    let c = logits.shape()[1];
    logits.to_f64_vec().chunks(c).map(argmax).collect()
}

impl DrlArch {
    /// Registers freshly initialized parameters in `store`.
    pub fn build<T: Scalar>(config: &DrlConfig, store: &mut ParamStore<T>, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = lrelu_gain();
        let ch = &config.stage_channels;
        let stem = Conv2d::same(store, "drl.stem", 1, ch[0], 3, g, &mut rng);
        let mut stages = Vec::new();
        let mut cin = ch[0];
        for (i, &cout) in ch.iter().enumerate() {
            let blocks = (0..config.residual_blocks_per_stage)
                .map(|j| ResBlock {
                    a: Conv2d::same(store, &format!("drl.stage{i}.res{j}.a"), cin, cin, 3, g, &mut rng),
                    // Small second conv keeps each block near identity at start.
                    b: Conv2d::same(store, &format!("drl.stage{i}.res{j}.b"), cin, cin, 3, 0.1, &mut rng),
                })
                .collect();
            let down = Conv2d::new(
                store,
                &format!("drl.stage{i}.down"),
                cin,
                cout,
                3,
                Conv2dOpts {
                    stride: 2,
                    padding: 1,
                    dilation: 1,
                },
                g,
                &mut rng,
            );
            stages.push(Stage { blocks, down });
            cin = cout;
        }
        let wc = config.working_channels;
        let proj = (1..4)
            .map(|i| Conv2d::same(store, &format!("drl.proj{i}"), ch[i], wc, 1, 1.0, &mut rng))
            .collect();
        let fuse = Conv2d::same(store, "drl.fuse", wc, wc, 3, 1.0, &mut rng);
        let hidden = Linear::new(store, "drl.mlp.hidden", ch[3], config.mlp_hidden, g, &mut rng);
        let logits = Linear::new(store, "drl.mlp.out", config.mlp_hidden, config.class_count, 1.0, &mut rng);
        Ok(Self {
            config: config.clone(),
            stem,
            stages,
            proj,
            fuse,
            hidden,
            logits,
        })
    }

    pub fn config(&self) -> &DrlConfig {
        &self.config
    }

    /// Stage features `[f_0, f_1, f_2, f_3]` of `x: [N, 1, H, W]`.
    pub fn encode<T: Scalar>(&self, s: &Session<T>, x: &Var<T>) -> Result<Vec<Var<T>>> {
        let sh = x.shape();
        if sh.len() != 4 || sh[1] != 1 {
            return Err(Error::Shape(format!("encoder input must be [N, 1, H, W], got {sh:?}")));
        }
        if sh[2] % DOWNSAMPLE != 0 || sh[3] % DOWNSAMPLE != 0 || sh[2] == 0 || sh[3] == 0 {
            return Err(Error::Shape(format!(
                "encoder input {}x{} is not divisible by {DOWNSAMPLE}",
                sh[3], sh[2]
            )));
        }
        let x = &highpass(x);
        let mut h = lrelu(&self.stem.forward(s, x));
        let mut feats = Vec::with_capacity(4);
        for st in &self.stages {
            for b in &st.blocks {
                let r = b.b.forward(s, &lrelu(&b.a.forward(s, &h)));
                h = ops::add(&h, &r);
            }
            h = lrelu(&st.down.forward(s, &h));
            feats.push(h.clone());
        }
        Ok(feats)
    }

    /// Projects `f_1..f_3` to the working width, upsamples to `(h, w)`,
    /// sums and fuses.
    pub fn degradation_tensor<T: Scalar>(&self, s: &Session<T>, feats: &[Var<T>], h: usize, w: usize) -> Result<Var<T>> {
        if feats.len() != 4 {
            return Err(Error::Shape(format!("expected 4 feature maps, got {}", feats.len())));
        }
        let mut acc: Option<Var<T>> = None;
        for (p, f) in self.proj.iter().zip(&feats[1..]) {
            let up = ops::upsample_bilinear(&p.forward(s, f), h, w);
            acc = Some(match acc {
                Some(a) => ops::add(&a, &up),
                None => up,
            });
        }
        Ok(self.fuse.forward(s, &acc.expect("three projections")))
    }

    pub fn degradation_vector<T: Scalar>(&self, f3: &Var<T>) -> Var<T> {
        nn::global_avg_pool(f3)
    }

    pub fn classify<T: Scalar>(&self, s: &Session<T>, f_v: &Var<T>) -> Var<T> {
        self.logits.forward(s, &lrelu(&self.hidden.forward(s, f_v)))
    }

    /// Vector and logits without the full-resolution tensor.
    pub fn embed<T: Scalar>(&self, s: &Session<T>, x: &Var<T>) -> Result<(Var<T>, Var<T>)> {
        let feats = self.encode(s, x)?;
        let f_v = self.degradation_vector(&feats[3]);
        let logits = self.classify(s, &f_v);
        Ok((f_v, logits))
    }

    pub fn represent<T: Scalar>(&self, s: &Session<T>, x: &Var<T>) -> Result<DegradationRepresentation<T>> {
        let feats = self.encode(s, x)?;
        let (h, w) = (x.shape()[2], x.shape()[3]);
        let f_r = self.degradation_tensor(s, &feats, h, w)?;
        let f_v = self.degradation_vector(&feats[3]);
        let logits = self.classify(s, &f_v);
        let levels = levels_of(logits.value());
        Ok(DegradationRepresentation { f_r, f_v, logits, levels })
    }
}

/// Gain on the local-contrast residual fed to the stem.
pub const HIGHPASS_GAIN: f64 = 8.0;

/// `gain * (x - mean3x3(x))` with zero padding. Compression artifacts are
/// small next to brightness and shading; without this the encoder tends to
/// shrink its features to the class prior instead of finding them.
pub fn highpass<T: Scalar>(x: &Var<T>) -> Var<T> {
    let k = Var::constant(Tensor::full(vec![1, 1, 3, 3], T::from_f64_lossy(1.0 / 9.0)));
    let blur = ops::conv2d(x, &k, None, Conv2dOpts::same(3, 1));
    ops::scale(&ops::sub(x, &blur), T::from_f64_lossy(HIGHPASS_GAIN))
}

/// Scales 8-bit samples to the unit range used by every network input.
pub fn normalize_pixels(v: f64) -> f64 {
    v / 255.0
}

/// Encoder configuration, layout and parameters together.
#[derive(Debug, Clone)]
pub struct DrlModel {
    pub arch: DrlArch,
    pub params: ParamStore<f32>,
}

impl DrlModel {
    pub fn new(config: &DrlConfig, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new();
        let arch = DrlArch::build(config, &mut params, seed)?;
        Ok(Self { arch, params })
    }

    pub fn config(&self) -> &DrlConfig {
        self.arch.config()
    }

    pub fn from_weights(w: &ModelWeights) -> Result<Self> {
        w.expect_kind(ModelKind::Drl)?;
        let config: DrlConfig = serde_json::from_str(&w.config)?;
        let mut model = Self::new(&config, 0)?;
        model.params.load_from(&w.params).map_err(Error::Compatibility)?;
        Ok(model)
    }

    pub fn to_weights(&self, meta: serde_json::Value) -> Result<ModelWeights> {
        let mut params = self.params.clone();
        params.set_trainable(false);
        ModelWeights::new(ModelKind::Drl, serde_json::to_string(self.config())?, params, None, meta)
    }

    /// Frozen forward pass over `[N, 1, H, W]` pixels already in [0, 1].
    pub fn infer(&self, x: &Tensor<f32>) -> Result<DegradationRepresentation<f32>> {
        let s = Session::new(&self.params, false);
        self.arch.represent(&s, &Var::constant(x.clone()))
    }

    /// Frozen embeddings and logits for `[N, 1, H, W]` input in [0, 1].
    pub fn embed(&self, x: &Tensor<f32>) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let s = Session::new(&self.params, false);
        let (v, l) = self.arch.embed(&s, &Var::constant(x.clone()))?;
        Ok((v.value().clone(), l.value().clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DrlConfig {
        DrlConfig {
            stage_channels: vec![4, 4, 6, 8],
            residual_blocks_per_stage: 1,
            working_channels: 3,
            mlp_hidden: 5,
            ..DrlConfig::default()
        }
    }

    #[test]
    fn encoder_shapes_follow_config() {
        let m = DrlModel::new(&DrlConfig::default(), 1).unwrap();
        let s = Session::new(&m.params, false);
        let x = Var::constant(Tensor::<f32>::zeros(vec![1, 1, 64, 64]));
        let f = m.arch.encode(&s, &x).unwrap();
        let shapes: Vec<_> = f.iter().map(|v| v.shape().to_vec()).collect();
        assert_eq!(
            shapes,
            vec![vec![1, 64, 32, 32], vec![1, 64, 16, 16], vec![1, 128, 8, 8], vec![1, 256, 4, 4]]
        );
    }

    #[test]
    fn indivisible_input_is_rejected() {
        let m = DrlModel::new(&small(), 1).unwrap();
        let x = Tensor::<f32>::zeros(vec![1, 1, 24, 32]);
        assert!(matches!(m.infer(&x), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_logits_pick_first_class() {
        assert_eq!(argmax(&[0.0; 5]), 0);
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }

    #[test]
    fn representation_shapes() {
        let m = DrlModel::new(&small(), 2).unwrap();
        let r = m.infer(&Tensor::zeros(vec![2, 1, 32, 16])).unwrap();
        assert_eq!(r.f_r.shape(), &[2, 3, 32, 16]);
        assert_eq!(r.f_v.shape(), &[2, 8]);
        assert_eq!(r.logits.shape(), &[2, 5]);
        assert_eq!(r.levels.len(), 2);
    }

    #[test]
    fn config_checks_class_count() {
        let mut c = DrlConfig::default();
        c.class_count = 4;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }
}
