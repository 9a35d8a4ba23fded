//! Enhancement-network training with a frozen degradation encoder.

use std::path::Path;

use blindqe_tensor::optim::Adam;
use blindqe_tensor::{ops, Session, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{param_digest, ModelWeights};
use crate::codec::manifest::ClipPair;
use crate::data::{enhance_tensors, sample_enhance, EnhanceSample};
use crate::drl::{DrlModel, DOWNSAMPLE};
use crate::losses::charbonnier_var;
use crate::net::{check_pair, pad_multiple, NetConfig, QecvNet};
use crate::{Error, Result};

/// One optimizer step of a loss curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
}

/// Writes `epoch,step,loss` rows.
pub fn write_loss_curve(path: impl AsRef<Path>, curve: &[LossPoint]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Validation(format!("{other:?}")),
    })?;
    for p in curve {
        w.serialize(p)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Optimizer and sampling settings for [`train_blind`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub patch: usize,
    pub epsilon: f64,
    pub epochs: usize,
    pub seed: u64,
    pub samples_per_epoch: usize,
    /// Random flips and quarter turns, identical across a sample's frames.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch: 4,
            patch: 48,
            epsilon: 1e-6,
            epochs: 1,
            seed: 0,
            samples_per_epoch: 200,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.patch == 0 || self.patch % DOWNSAMPLE != 0 {
            return Err(Error::Config(format!("patch {} is not a multiple of {DOWNSAMPLE}", self.patch)));
        }
        if self.batch == 0 || !(self.lr > 0.0) {
            return Err(Error::Config("batch and lr must be positive".into()));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.samples_per_epoch.div_ceil(self.batch).max(1)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: QecvNet,
    pub optimizer: Adam<f32>,
    pub curve: Vec<LossPoint>,
    pub initial_probe_loss: f64,
    pub final_probe_loss: f64,
    /// Digest of the encoder checkpoint's parameters; the run verifies the
    /// loaded copy is unchanged at the end.
    pub drl_digest: String,
}

impl TrainOutcome {
    /// Network checkpoint tied to the encoder it was trained against.
    pub fn weights(&self, drl: &ModelWeights) -> Result<ModelWeights> {
        self.net.to_weights(
            Some(self.optimizer.clone()),
            serde_json::json!({
                "drl_config_hash": drl.config_hash(),
                "drl_param_digest": self.drl_digest,
                "final_probe_loss": self.final_probe_loss,
            }),
        )
    }
}

const PROBE_BATCHES: usize = 2;

/// Rows `idx` of the leading axis.
fn select(t: &Tensor<f32>, idx: &[usize]) -> Tensor<f32> {
    let row: usize = t.shape()[1..].iter().product();
    let mut data = Vec::with_capacity(idx.len() * row);
    for &i in idx {
        data.extend_from_slice(&t.data()[i * row..(i + 1) * row]);
    }
    let mut shape = t.shape().to_vec();
    shape[0] = idx.len();
    Tensor::new(shape, data)
}

/// Charbonnier loss of one batch, each sample running the depth the
/// encoder predicts for its target frame. Samples sharing a level share a
/// forward pass; group losses are weighted so the total is the per-pixel
/// mean over the batch.
fn batch_loss(net: &QecvNet, s: &Session<f32>, drl: &DrlModel, samples: &[EnhanceSample], eps: f64) -> Result<Var<f32>> {
    let (inputs, targets) = enhance_tensors(samples);
    let r = net.config().radius;
    let (n, t, h, w) = inputs.dims4();
    let mut centre = Vec::with_capacity(n * h * w);
    for i in 0..n {
        let off = (i * t + r) * h * w;
        centre.extend_from_slice(&inputs.data()[off..off + h * w]);
    }
    let rep = drl.infer(&Tensor::new(vec![n, 1, h, w], centre))?;
    let (f_r, f_v) = (rep.f_r.value(), rep.f_v.value());
    let mut total: Option<Var<f32>> = None;
    let mut levels = rep.levels.clone();
    levels.sort_unstable();
    levels.dedup();
    for level in levels {
        let idx: Vec<usize> = (0..n).filter(|&i| rep.levels[i] == level).collect();
        let (out, _) = net.arch.forward(
            s,
            &Var::constant(select(&inputs, &idx)),
            &Var::constant(select(f_r, &idx)),
            &Var::constant(select(f_v, &idx)),
            level,
        )?;
        let loss = ops::scale(
            &charbonnier_var(&out, &select(&targets, &idx), eps)?,
            idx.len() as f32 / n as f32,
        );
        total = Some(match total {
            Some(acc) => ops::add(&acc, &loss),
            None => loss,
        });
    }
    Ok(total.expect("non-empty batch"))
}

fn draw(pairs: &[ClipPair], radius: usize, tc: &TrainConfig, augment: bool, rng: &mut ChaCha8Rng) -> Result<Vec<EnhanceSample>> {
    (0..tc.batch)
        .map(|_| sample_enhance(pairs, radius, tc.patch, augment, rng))
        .collect()
}

fn probe_loss(net: &QecvNet, drl: &DrlModel, probes: &[Vec<EnhanceSample>], eps: f64) -> Result<f64> {
    let s = Session::new(&net.params, false);
    let mut acc = 0.0;
    for b in probes {
        acc += batch_loss(net, &s, drl, b, eps)?.value().data()[0] as f64;
    }
    Ok(acc / probes.len() as f64)
}

/// Adam on the Charbonnier loss with the encoder frozen.
pub fn train_blind(pairs: &[ClipPair], drl_weights: &ModelWeights, net_cfg: &NetConfig, tc: &TrainConfig) -> Result<TrainOutcome> {
    tc.validate()?;
    net_cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::Config("training dataset is empty".into()));
    }
    let m = pad_multiple(net_cfg.window);
    if tc.patch % m != 0 {
        return Err(Error::Config(format!("patch {} is not a multiple of {m}", tc.patch)));
    }
    let drl = DrlModel::from_weights(drl_weights)?;
    check_pair(drl.config(), net_cfg)?;
    let drl_digest = param_digest(&drl_weights.params);
    let loaded_digest = param_digest(&drl.params);

    let mut net = QecvNet::new(net_cfg, tc.seed)?;
    let mut probe_rng = ChaCha8Rng::seed_from_u64(!tc.seed);
    let probes = (0..PROBE_BATCHES)
        .map(|_| draw(pairs, net_cfg.radius, tc, false, &mut probe_rng))
        .collect::<Result<Vec<_>>>()?;
    let initial_probe_loss = probe_loss(&net, &drl, &probes, tc.epsilon)?;

    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut optimizer = Adam::new(&net.params, tc.lr);
    let mut curve = Vec::new();
    for epoch in 0..tc.epochs {
        for step in 0..tc.steps_per_epoch() {
            let samples = draw(pairs, net_cfg.radius, tc, tc.augment, &mut rng)?;
            let s = Session::new(&net.params, true);
            let loss = batch_loss(&net, &s, &drl, &samples, tc.epsilon)?;
            let mut grads = loss.backward();
            let g = s.collect_grads(&mut grads);
            optimizer.step(&mut net.params, &g);
            curve.push(LossPoint {
                epoch,
                step,
                loss: loss.value().data()[0] as f64,
            });
        }
    }
    let final_probe_loss = if tc.epochs == 0 {
        initial_probe_loss
    } else {
        probe_loss(&net, &drl, &probes, tc.epsilon)?
    };
    if param_digest(&drl.params) != loaded_digest {
        return Err(Error::Validation("encoder parameters changed during training".into()));
    }
    Ok(TrainOutcome {
        net,
        optimizer,
        curve,
        initial_probe_loss,
        final_probe_loss,
        drl_digest,
    })
}
