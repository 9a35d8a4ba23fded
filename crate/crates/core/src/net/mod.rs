//! The enhancement network: alignment, a chain of artifact-reduction stages
//! cut short at the predicted degradation level, and a reconstruction head.

pub mod align;
pub mod attention;
mod enhance;
pub mod qe;
pub mod stage;

use std::time::Instant;

use blindqe_tensor::optim::Adam;
use blindqe_tensor::{ops, ParamStore, Scalar, Session, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{ModelKind, ModelWeights};
use crate::drl::highpass;
use crate::{Error, Result};
use align::{CoarseAlign, DEFORM_KERNEL};
use qe::QeHead;
use stage::Stage;

pub use enhance::{check_pair, enhance_frame, pad_multiple, Enhancer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub radius: usize,
    pub feat_channels: usize,
    pub max_stages: usize,
    pub window: usize,
    pub heads: usize,
    pub attn_depth: usize,
    pub mlp_ratio: usize,
    pub dilations: Vec<usize>,
    pub deform_points: usize,
    pub share_stage_weights: bool,
    /// Length of the degradation vector fed to the stage gates.
    pub degradation_dim: usize,
    pub qe_reduction: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            radius: 1,
            feat_channels: 64,
            max_stages: 5,
            window: 4,
            heads: 4,
            attn_depth: 2,
            mlp_ratio: 2,
            dilations: vec![1, 2, 4],
            deform_points: 9,
            share_stage_weights: false,
            degradation_dim: 256,
            qe_reduction: 4,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.feat_channels == 0 || self.max_stages == 0 || self.degradation_dim == 0 {
            return bad("feat_channels, max_stages and degradation_dim must be positive".into());
        }
        if self.heads == 0 || self.feat_channels % self.heads != 0 {
            return bad(format!("{} channels cannot split into {} heads", self.feat_channels, self.heads));
        }
        if self.window == 0 || (self.attn_depth > 1 && self.window < 2) {
            return bad(format!("window {} too small", self.window));
        }
        if self.dilations != [1, 2, 4] {
            return bad(format!("dilations must be [1, 2, 4], got {:?}", self.dilations));
        }
        if self.deform_points != DEFORM_KERNEL * DEFORM_KERNEL {
            return bad(format!("deform_points must be {}", DEFORM_KERNEL * DEFORM_KERNEL));
        }
        if self.mlp_ratio == 0 || self.qe_reduction == 0 {
            return bad("mlp_ratio and qe_reduction must be positive".into());
        }
        Ok(())
    }

    pub fn frames(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn hash(&self) -> String {
        crate::checkpoint::sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

/// Record of one pass through the stage chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTrace {
    pub level: usize,
    pub executed_stages: usize,
    /// Analytic multiply-accumulates of each executed stage, per frame.
    pub per_stage_cost: Vec<u64>,
    /// Seconds for the whole enhancement of the frame.
    pub wall_time: f64,
    /// Seconds spent in the stage chain.
    pub htar_wall_time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qp: Option<i32>,
}

impl StageTrace {
    pub fn total_cost(&self) -> u64 {
        self.per_stage_cost.iter().sum()
    }
}

#[derive(Debug, Clone)]
pub struct NetArch {
    config: NetConfig,
    pub align: CoarseAlign,
    pub stages: Vec<Stage>,
    pub head: QeHead,
}

impl NetArch {
    pub fn build<T: Scalar>(config: &NetConfig, store: &mut ParamStore<T>, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let align = CoarseAlign::new(store, config, &mut rng);
        let stages = if config.share_stage_weights {
            vec![Stage::new(store, "stage.shared", config, &mut rng); config.max_stages]
        } else {
            (0..config.max_stages)
                .map(|i| Stage::new(store, &format!("stage{i}"), config, &mut rng))
                .collect()
        };
        let head = QeHead::new(store, config, &mut rng);
        Ok(Self {
            config: config.clone(),
            align,
            stages,
            head,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    /// Runs stages `0..=level` and skips the rest.
    pub fn htar<T: Scalar>(
        &self,
        s: &Session<T>,
        f0: &Var<T>,
        f_r: &Var<T>,
        f_v: &Var<T>,
        level: usize,
    ) -> Result<(Var<T>, Vec<u64>)> {
        if level >= self.stages.len() {
            return Err(Error::Validation(format!(
                "level {level} outside 0..{}",
                self.stages.len()
            )));
        }
        let (h, w) = (f0.shape()[2], f0.shape()[3]);
        let mut f = f0.clone();
        let mut costs = Vec::with_capacity(level + 1);
        for st in &self.stages[..=level] {
            f = st.forward(s, &f, f_r, f_v)?;
            costs.push(st.macs(h, w));
        }
        Ok((f, costs))
    }

    /// Every stage, with no termination logic.
    pub fn all_stages<T: Scalar>(&self, s: &Session<T>, f0: &Var<T>, f_r: &Var<T>, f_v: &Var<T>) -> Result<Var<T>> {
        let mut f = f0.clone();
        for st in &self.stages {
            f = st.forward(s, &f, f_r, f_v)?;
        }
        Ok(f)
    }

    /// `frames: [N, 2r+1, H, W]` in [0, 1], degradation tensor
    /// `[N, C, H, W]` and vector `[N, D]`, to the enhanced target
    /// `[N, 1, H, W]`.
    pub fn forward<T: Scalar>(
        &self,
        s: &Session<T>,
        frames: &Var<T>,
        f_r: &Var<T>,
        f_v: &Var<T>,
        level: usize,
    ) -> Result<(Var<T>, StageTrace)> {
        let start = Instant::now();
        let f0 = self.align.forward(s, &highpass_frames(frames))?;
        let t0 = Instant::now();
        let (f, per_stage_cost) = self.htar(s, &f0, f_r, f_v, level)?;
        let htar_wall_time = t0.elapsed().as_secs_f64();
        let target = ops::narrow(frames, 1, self.config.radius, 1);
        let out = self.head.forward(s, &f, &target);
        Ok((
            out,
            StageTrace {
                level,
                executed_stages: level + 1,
                per_stage_cost,
                wall_time: start.elapsed().as_secs_f64(),
                htar_wall_time,
                qp: None,
            },
        ))
    }
}

/// The encoder's high-pass view applied to every frame of `[N, T, H, W]`.
/// Artifacts live in fine detail; raw intensities bury it under brightness.
pub fn highpass_frames<T: Scalar>(frames: &Var<T>) -> Var<T> {
    let sh = frames.shape().to_vec();
    let flat = ops::reshape(frames, &[sh[0] * sh[1], 1, sh[2], sh[3]]);
    ops::reshape(&highpass(&flat), &sh)
}

#[derive(Debug, Clone)]
pub struct QecvNet {
    pub arch: NetArch,
    pub params: ParamStore<f32>,
}

impl QecvNet {
    pub fn new(config: &NetConfig, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new();
        let arch = NetArch::build(config, &mut params, seed)?;
        Ok(Self { arch, params })
    }

    pub fn config(&self) -> &NetConfig {
        self.arch.config()
    }

    pub fn from_weights(w: &ModelWeights) -> Result<Self> {
        w.expect_kind(ModelKind::Net)?;
        let config: NetConfig = serde_json::from_str(&w.config)?;
        let mut net = Self::new(&config, 0)?;
        net.params.load_from(&w.params).map_err(Error::Compatibility)?;
        Ok(net)
    }

    pub fn to_weights(&self, optimizer: Option<Adam<f32>>, meta: serde_json::Value) -> Result<ModelWeights> {
        ModelWeights::new(ModelKind::Net, serde_json::to_string(self.config())?, self.params.clone(), optimizer, meta)
    }
}
