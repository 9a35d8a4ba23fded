use blindqe_tensor::optim::Adam;
use blindqe_tensor::{ops, Session, Var};
use serde::{Deserialize, Serialize};

use super::{DrlConfig, DrlModel};
use crate::codec::Clip;
use crate::data::{make_patch_batch, PatchBatch};
use crate::losses::{cross_entropy_var, drl_total_loss, info_nce_var};
use crate::train::LossPoint;
use crate::{Error, Result};

/// Labelled compressed clips.
pub type DrlDataset = [Clip];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub epochs: usize,
    /// Frames per batch; each contributes two patches.
    pub batch_frames: usize,
    pub patch: usize,
    pub lr: f64,
    pub patches_per_epoch: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1,
            batch_frames: 8,
            patch: 32,
            lr: 1e-4,
            patches_per_epoch: 1000,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn steps_per_epoch(&self) -> usize {
        self.patches_per_epoch.div_ceil(2 * self.batch_frames).max(1)
    }
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub model: DrlModel,
    pub optimizer: Adam<f32>,
    pub curve: Vec<LossPoint>,
    /// Joint loss on fixed probe batches before training.
    pub initial_probe_loss: f64,
    /// The same probe after training.
    pub final_probe_loss: f64,
}

const PROBE_BATCHES: u64 = 4;

fn batch_seed(seed: u64, epoch: usize, step: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(((epoch as u64) << 32) | step as u64)
}

/// Joint classification and contrastive loss of one batch under `model`.
fn batch_loss(model: &DrlModel, s: &Session<f32>, batch: &PatchBatch) -> Result<(Var<f32>, f64, f64)> {
    let cfg = model.config();
    let (f_v, logits) = model.arch.embed(s, &Var::constant(batch.tensor()))?;
    let ce = cross_entropy_var(&logits, &batch.labels)?;
    let nce = info_nce_var(&f_v, &batch.positives, cfg.tau)?;
    let (cev, ncev) = (ce.value().data()[0] as f64, nce.value().data()[0] as f64);
    let total = ops::add(&ce, &ops::scale(&nce, cfg.lambda as f32));
    Ok((total, cev, ncev))
}

fn probe_loss(model: &DrlModel, probes: &[PatchBatch]) -> Result<f64> {
    let s = Session::new(&model.params, false);
    let mut acc = 0.0;
    for b in probes {
        let (_, ce, nce) = batch_loss(model, &s, b)?;
        acc += drl_total_loss(ce, nce, model.config().lambda);
    }
    Ok(acc / probes.len() as f64)
}

/// Adam on the joint objective over freshly sampled patch batches.
/// Fully determined by the configs.
pub fn pretrain_drl(data: &DrlDataset, cfg: &DrlConfig, pc: &PretrainConfig) -> Result<PretrainOutcome> {
    if data.is_empty() {
        return Err(Error::Config("pretraining dataset is empty".into()));
    }
    if data.iter().any(|c| c.label.is_some_and(|l| l >= cfg.class_count)) {
        return Err(Error::Config("clip label outside the class range".into()));
    }
    let mut model = DrlModel::new(cfg, pc.seed)?;
    let probes = (0..PROBE_BATCHES)
        .map(|k| make_patch_batch(data, pc.batch_frames, pc.patch, batch_seed(!pc.seed, usize::MAX, k as usize)))
        .collect::<Result<Vec<_>>>()?;
    let initial_probe_loss = probe_loss(&model, &probes)?;
    let mut optimizer = Adam::new(&model.params, pc.lr);
    let mut curve = Vec::new();
    for epoch in 0..pc.epochs {
        for step in 0..pc.steps_per_epoch() {
            let batch = make_patch_batch(data, pc.batch_frames, pc.patch, batch_seed(pc.seed, epoch, step))?;
            let s = Session::new(&model.params, true);
            let (total, ce, nce) = batch_loss(&model, &s, &batch)?;
            let mut grads = total.backward();
            let g = s.collect_grads(&mut grads);
            optimizer.step(&mut model.params, &g);
            curve.push(LossPoint {
                epoch,
                step,
                loss: drl_total_loss(ce, nce, cfg.lambda),
            });
        }
    }
    let final_probe_loss = if pc.epochs == 0 {
        initial_probe_loss
    } else {
        probe_loss(&model, &probes)?
    };
    Ok(PretrainOutcome {
        model,
        optimizer,
        curve,
        initial_probe_loss,
        final_probe_loss,
    })
}
