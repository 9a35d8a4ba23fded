//! Flat run configuration read from TOML. Every key is optional; missing
//! keys take the library defaults.

use std::fmt;
use std::path::Path;

use blindqe_core::codec::CodecConfig;
use blindqe_core::drl::{DrlConfig, PretrainConfig};
use blindqe_core::net::NetConfig;
use blindqe_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

/// Bad configuration file or key; maps to exit status 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub qp_levels: Vec<i32>,
    pub block_size: usize,

    pub drl_stage_channels: Vec<usize>,
    pub drl_residual_blocks: usize,
    pub drl_mlp_hidden: usize,
    pub drl_tau: f64,
    pub drl_lambda: f64,

    pub pretrain_epochs: usize,
    pub pretrain_batch_frames: usize,
    pub pretrain_patch: usize,
    pub pretrain_lr: f64,
    pub pretrain_patches_per_epoch: usize,

    pub net_radius: usize,
    pub net_feat_channels: usize,
    pub net_window: usize,
    pub net_heads: usize,
    pub net_attn_depth: usize,
    pub net_mlp_ratio: usize,
    pub net_qe_reduction: usize,
    pub net_share_stage_weights: bool,

    pub train_lr: f64,
    pub train_batch: usize,
    pub train_patch: usize,
    pub train_epsilon: f64,
    pub train_epochs: usize,
    pub train_samples_per_epoch: usize,
    pub train_augment: bool,

    /// Smallest mean ΔPSNR per clip accepted by `eval --assert`.
    pub eval_min_delta_psnr: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let codec = CodecConfig::default();
        let drl = DrlConfig::default();
        let pre = PretrainConfig::default();
        let net = NetConfig::default();
        let train = TrainConfig::default();
        Self {
            seed: 0,
            qp_levels: codec.qp_levels,
            block_size: codec.block_size,
            drl_stage_channels: drl.stage_channels,
            drl_residual_blocks: drl.residual_blocks_per_stage,
            drl_mlp_hidden: drl.mlp_hidden,
            drl_tau: drl.tau,
            drl_lambda: drl.lambda,
            pretrain_epochs: pre.epochs,
            pretrain_batch_frames: pre.batch_frames,
            pretrain_patch: pre.patch,
            pretrain_lr: pre.lr,
            pretrain_patches_per_epoch: pre.patches_per_epoch,
            net_radius: net.radius,
            net_feat_channels: net.feat_channels,
            net_window: net.window,
            net_heads: net.heads,
            net_attn_depth: net.attn_depth,
            net_mlp_ratio: net.mlp_ratio,
            net_qe_reduction: net.qe_reduction,
            net_share_stage_weights: net.share_stage_weights,
            train_lr: train.lr,
            train_batch: train.batch,
            train_patch: train.patch,
            train_epsilon: train.epsilon,
            train_epochs: train.epochs,
            train_samples_per_epoch: train.samples_per_epoch,
            train_augment: train.augment,
            eval_min_delta_psnr: 0.0,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError(e.message().to_string()))
    }

    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| ConfigError(format!("{}: {e}", p.display())))?;
                Self::parse(&text).map_err(|e| ConfigError(format!("{}: {e}", p.display())))
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    pub fn codec(&self) -> CodecConfig {
        CodecConfig {
            block_size: self.block_size,
            qp_levels: self.qp_levels.clone(),
        }
    }

    /// Encoder config; the working width follows the network's feature
    /// width so the two stay compatible.
    pub fn drl(&self) -> DrlConfig {
        DrlConfig {
            stage_channels: self.drl_stage_channels.clone(),
            residual_blocks_per_stage: self.drl_residual_blocks,
            class_count: self.qp_levels.len(),
            tau: self.drl_tau,
            lambda: self.drl_lambda,
            working_channels: self.net_feat_channels,
            mlp_hidden: self.drl_mlp_hidden,
            qp_levels: self.qp_levels.clone(),
        }
    }

    pub fn pretrain(&self) -> PretrainConfig {
        PretrainConfig {
            epochs: self.pretrain_epochs,
            batch_frames: self.pretrain_batch_frames,
            patch: self.pretrain_patch,
            lr: self.pretrain_lr,
            patches_per_epoch: self.pretrain_patches_per_epoch,
            seed: self.seed,
        }
    }

    /// Network config matched to an encoder of `degradation_dim` outputs.
    pub fn net(&self, degradation_dim: usize) -> NetConfig {
        NetConfig {
            radius: self.net_radius,
            feat_channels: self.net_feat_channels,
            max_stages: self.qp_levels.len(),
            window: self.net_window,
            heads: self.net_heads,
            attn_depth: self.net_attn_depth,
            mlp_ratio: self.net_mlp_ratio,
            share_stage_weights: self.net_share_stage_weights,
            degradation_dim,
            qe_reduction: self.net_qe_reduction,
            ..NetConfig::default()
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            lr: self.train_lr,
            batch: self.train_batch,
            patch: self.train_patch,
            epsilon: self.train_epsilon,
            epochs: self.train_epochs,
            seed: self.seed,
            samples_per_epoch: self.train_samples_per_epoch,
            augment: self.train_augment,
        }
    }
}
