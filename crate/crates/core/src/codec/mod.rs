//! Block-DCT quantization codec standing in for a QP-controlled video encoder.

mod dct;
mod frame;
pub mod manifest;
pub mod synth;
pub mod yuv;

use serde::{Deserialize, Serialize};

pub use dct::DctBasis;
pub use frame::{Clip, Frame};

use crate::{Error, Result};

pub const QP_MIN: i32 = 4;
pub const QP_MAX: i32 = 51;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecConfig {
    pub block_size: usize,
    pub qp_levels: Vec<i32>,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            block_size: 8,
            qp_levels: vec![22, 27, 32, 37, 42],
        }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<()> {
        if self.block_size == 0 {
            return Err(Error::Config("block_size must be positive".into()));
        }
        if self.qp_levels.is_empty() {
            return Err(Error::Config("qp_levels is empty".into()));
        }
        if self.qp_levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "qp_levels must be strictly increasing, got {:?}",
                self.qp_levels
            )));
        }
        for &qp in &self.qp_levels {
            qp_to_qstep(qp)?;
        }
        Ok(())
    }

    pub fn class_count(&self) -> usize {
        self.qp_levels.len()
    }

    /// Index of the nearest configured level; equidistant QPs go to the
    /// higher level.
    pub fn level_for_qp(&self, qp: i32) -> usize {
        let mut best = 0;
        for (i, &l) in self.qp_levels.iter().enumerate() {
            if (qp - l).abs() <= (qp - self.qp_levels[best]).abs() {
                best = i;
            }
        }
        best
    }
}

/// Quantizer step size, doubling every 6 QP.
pub fn qp_to_qstep(qp: i32) -> Result<f64> {
    if !(QP_MIN..=QP_MAX).contains(&qp) {
        return Err(Error::Domain(format!("qp {qp} outside {QP_MIN}..={QP_MAX}")));
    }
    Ok(2f64.powf((qp - QP_MIN) as f64 / 6.0))
}

/// Quantize every block of `frame` without the final clip to [0, 255].
pub fn degrade_frame_unclipped(frame: &Frame, qp: i32, cfg: &CodecConfig) -> Result<Frame> {
    let qstep = qp_to_qstep(qp)?;
    let b = cfg.block_size;
    let (w, h) = (frame.width(), frame.height());
    if b == 0 || w % b != 0 || h % b != 0 {
        return Err(Error::Shape(format!(
            "frame {w}x{h} is not a multiple of block size {b}"
        )));
    }
    let basis = DctBasis::new(b);
    let mut out = frame.clone();
    let mut block = vec![0.0; b * b];
    for by in (0..h).step_by(b) {
        for bx in (0..w).step_by(b) {
            for y in 0..b {
                for x in 0..b {
                    block[y * b + x] = frame.at(bx + x, by + y);
                }
            }
            let rec = basis.requantize(&block, qstep);
            let dst = out.data_mut();
            for y in 0..b {
                dst[(by + y) * w + bx..(by + y) * w + bx + b].copy_from_slice(&rec[y * b..(y + 1) * b]);
            }
        }
    }
    Ok(out)
}

pub fn degrade_frame(frame: &Frame, qp: i32, cfg: &CodecConfig) -> Result<Frame> {
    Ok(degrade_frame_unclipped(frame, qp, cfg)?.clamped())
}

/// Degrades every frame, reflect-padding to whole blocks and cropping back.
/// The result is labelled with the nearest configured level.
pub fn degrade_clip(clip: &Clip, qp: i32, cfg: &CodecConfig) -> Result<Clip> {
    cfg.validate()?;
    let (w, h) = (clip.width(), clip.height());
    let frames = clip
        .frames()
        .iter()
        .map(|f| {
            let padded = f.pad_to_multiple(cfg.block_size);
            degrade_frame(&padded, qp, cfg)?.crop(0, 0, w, h)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Clip::new(frames)?.with_qp(Some(qp), Some(cfg.level_for_qp(qp))))
}
