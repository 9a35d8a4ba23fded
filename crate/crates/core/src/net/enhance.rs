use std::time::Instant;

use blindqe_tensor::{Session, Tensor, Var};

use super::{NetConfig, QecvNet, StageTrace};
use crate::checkpoint::ModelWeights;
use crate::codec::{Clip, Frame};
use crate::drl::{normalize_pixels, DrlModel, DOWNSAMPLE};
use crate::{Error, Result};

/// Side multiple that satisfies both the encoder and the attention windows.
pub fn pad_multiple(window: usize) -> usize {
    let (mut a, mut b) = (DOWNSAMPLE, window.max(1));
    while b != 0 {
        (a, b) = (b, a % b);
    }
    DOWNSAMPLE / a * window.max(1)
}

/// Frozen encoder plus enhancement network, checked for compatibility.
#[derive(Debug, Clone)]
pub struct Enhancer {
    pub drl: DrlModel,
    pub net: QecvNet,
}

impl Enhancer {
    pub fn new(drl_weights: &ModelWeights, net_weights: &ModelWeights, cfg: &NetConfig) -> Result<Self> {
        if net_weights.config_hash() != cfg.hash() {
            return Err(Error::Compatibility(
                "network weights were trained with a different configuration".into(),
            ));
        }
        if let Some(h) = net_weights.meta.get("drl_config_hash").and_then(|v| v.as_str()) {
            if h != drl_weights.config_hash() {
                return Err(Error::Compatibility(
                    "network weights were trained against a different degradation encoder".into(),
                ));
            }
        }
        let drl = DrlModel::from_weights(drl_weights)?;
        let net = QecvNet::from_weights(net_weights)?;
        Self::from_models(drl, net)
    }

    pub fn from_models(drl: DrlModel, net: QecvNet) -> Result<Self> {
        check_pair(drl.config(), net.config())?;
        Ok(Self { drl, net })
    }

    pub fn config(&self) -> &NetConfig {
        self.net.config()
    }

    /// Enhances the middle frame of `frames` (`2r + 1` of them).
    /// `override_level` replaces the predicted level.
    pub fn enhance(&self, frames: &[Frame], override_level: Option<usize>) -> Result<(Frame, StageTrace)> {
        let start = Instant::now();
        let cfg = self.config();
        if frames.len() != cfg.frames() {
            return Err(Error::Shape(format!("expected {} frames, got {}", cfg.frames(), frames.len())));
        }
        if frames.iter().any(|f| !f.same_size(&frames[0])) {
            return Err(Error::Shape("frames differ in size".into()));
        }
        let (w, h) = (frames[0].width(), frames[0].height());
        let m = pad_multiple(cfg.window);
        let padded: Vec<Frame> = frames.iter().map(|f| f.pad_to_multiple(m)).collect();
        let (pw, ph) = (padded[0].width(), padded[0].height());
        let mut data = Vec::with_capacity(padded.len() * pw * ph);
        for f in &padded {
            data.extend(f.data().iter().map(|&v| normalize_pixels(v) as f32));
        }
        let t = frames.len();
        let stack = Tensor::new(vec![1, t, ph, pw], data);
        let r = cfg.radius;
        let target = Tensor::new(vec![1, 1, ph, pw], stack.data()[r * pw * ph..(r + 1) * pw * ph].to_vec());
        let rep = self.drl.infer(&target)?;
        let level = override_level.unwrap_or(rep.levels[0]);
        let s = Session::new(&self.net.params, false);
        let (out, mut trace) = self.net.arch.forward(&s, &Var::constant(stack), &rep.f_r, &rep.f_v, level)?;
        let full = Frame::new(pw, ph, out.value().data().iter().map(|&v| v as f64 * 255.0).collect())?;
        trace.wall_time = start.elapsed().as_secs_f64();
        Ok((full.crop(0, 0, w, h)?, trace))
    }

    /// Enhances every frame, clamping the temporal window at the ends.
    pub fn enhance_clip(&self, clip: &Clip, override_level: Option<usize>) -> Result<(Clip, Vec<StageTrace>)> {
        let mut frames = Vec::with_capacity(clip.len());
        let mut traces = Vec::with_capacity(clip.len());
        for t in 0..clip.len() {
            let window: Vec<Frame> = clip
                .window_indices(t, self.config().radius)
                .into_iter()
                .map(|i| clip.frame(i).clone())
                .collect();
            let (f, mut tr) = self.enhance(&window, override_level)?;
            tr.qp = clip.qp;
            frames.push(f);
            traces.push(tr);
        }
        Ok((Clip::new(frames)?.with_qp(clip.qp, clip.label), traces))
    }
}

/// Checks that the encoder outputs fit the network inputs.
pub fn check_pair(drl: &crate::drl::DrlConfig, net: &NetConfig) -> Result<()> {
    if drl.vector_dim() != net.degradation_dim {
        return Err(Error::Compatibility(format!(
            "encoder vector has {} entries, network expects {}",
            drl.vector_dim(),
            net.degradation_dim
        )));
    }
    if drl.working_channels != net.feat_channels {
        return Err(Error::Compatibility(format!(
            "encoder tensor has {} channels, network expects {}",
            drl.working_channels, net.feat_channels
        )));
    }
    if drl.class_count != net.max_stages {
        return Err(Error::Compatibility(format!(
            "encoder predicts {} levels for {} stages",
            drl.class_count, net.max_stages
        )));
    }
    Ok(())
}

/// One-shot enhancement of the middle frame of `frames`.
pub fn enhance_frame(
    frames: &[Frame],
    drl_weights: &ModelWeights,
    net_weights: &ModelWeights,
    cfg: &NetConfig,
) -> Result<(Frame, StageTrace)> {
    Enhancer::new(drl_weights, net_weights, cfg)?.enhance(frames, None)
}
