//! Patch sampling for pretraining and for enhancement training.

use blindqe_tensor::Tensor;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::manifest::ClipPair;
use crate::codec::{Clip, Frame};
use crate::drl::normalize_pixels;
use crate::{Error, Result};

/// `2N` patches where rows `2i` and `2i + 1` come from the same frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchBatch {
    pub patches: Vec<Frame>,
    pub labels: Vec<usize>,
    /// Index of each patch's positive partner.
    pub positives: Vec<usize>,
    /// `(clip, frame)` each patch was cut from.
    pub sources: Vec<(usize, usize)>,
    /// Top-left corner of each crop.
    pub origins: Vec<(usize, usize)>,
}

impl PatchBatch {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    /// `[2N, 1, p, p]` scaled to [0, 1].
    pub fn tensor(&self) -> Tensor<f32> {
        frames_tensor(&self.patches)
    }
}

/// Stacks equally sized frames into `[N, 1, H, W]` scaled to [0, 1].
pub fn frames_tensor(frames: &[Frame]) -> Tensor<f32> {
    let (w, h) = (frames[0].width(), frames[0].height());
    let mut data = Vec::with_capacity(frames.len() * w * h);
    for f in frames {
        assert!(f.width() == w && f.height() == h, "frames differ in size");
        data.extend(f.data().iter().map(|&v| normalize_pixels(v) as f32));
    }
    Tensor::new(vec![frames.len(), 1, h, w], data)
}

/// Samples `n_frames` distinct `(clip, frame)` sources and crops two
/// independently placed `patch`-sized squares from each.
pub fn make_patch_batch(clips: &[Clip], n_frames: usize, patch: usize, seed: u64) -> Result<PatchBatch> {
    if n_frames < 2 {
        return Err(Error::Config(format!("need at least 2 frames per batch, got {n_frames}")));
    }
    if patch == 0 {
        return Err(Error::Config("patch size must be positive".into()));
    }
    for (i, c) in clips.iter().enumerate() {
        if c.width() < patch || c.height() < patch {
            return Err(Error::Config(format!(
                "clip {i} is {}x{}, smaller than the {patch}px patch",
                c.width(),
                c.height()
            )));
        }
        if c.label.is_none() {
            return Err(Error::Config(format!("clip {i} has no degradation label")));
        }
    }
    let sources: Vec<(usize, usize)> = clips
        .iter()
        .enumerate()
        .flat_map(|(ci, c)| (0..c.len()).map(move |fi| (ci, fi)))
        .collect();
    if sources.len() < n_frames {
        return Err(Error::Config(format!(
            "{} frames available, {n_frames} requested",
            sources.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = index::sample(&mut rng, sources.len(), n_frames);
    let mut out = PatchBatch {
        patches: Vec::with_capacity(2 * n_frames),
        labels: Vec::with_capacity(2 * n_frames),
        positives: Vec::with_capacity(2 * n_frames),
        sources: Vec::with_capacity(2 * n_frames),
        origins: Vec::with_capacity(2 * n_frames),
    };
    for (k, pick) in picks.iter().enumerate() {
        let (ci, fi) = sources[pick];
        let clip = &clips[ci];
        for j in 0..2 {
            let x = rng.random_range(0..=clip.width() - patch);
            let y = rng.random_range(0..=clip.height() - patch);
            out.patches.push(clip.frame(fi).crop(x, y, patch, patch)?);
            out.labels.push(clip.label.expect("checked above"));
            out.positives.push(2 * k + 1 - j);
            out.sources.push((ci, fi));
            out.origins.push((x, y));
        }
    }
    Ok(out)
}

/// Flip and quarter-turn applied identically to every frame of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Augment {
    pub flip_h: bool,
    pub flip_v: bool,
    pub quarter_turns: u8,
}

impl Augment {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            flip_h: rng.random_bool(0.5),
            flip_v: rng.random_bool(0.5),
            quarter_turns: rng.random_range(0..4),
        }
    }

    pub fn apply(&self, f: &Frame) -> Frame {
        let mut out = f.clone();
        if self.flip_h {
            out = out.flip_horizontal();
        }
        if self.flip_v {
            out = out.flip_vertical();
        }
        for _ in 0..self.quarter_turns {
            out = out.rotate90();
        }
        out
    }
}

/// One training example: `2r + 1` compressed crops centred on the target
/// and the matching raw crop.
#[derive(Debug, Clone, PartialEq)]
pub struct EnhanceSample {
    pub inputs: Vec<Frame>,
    pub target: Frame,
    pub qp: Option<i32>,
}

/// Draws a crop from a random clip pair, frame and position.
pub fn sample_enhance<R: Rng + ?Sized>(
    pairs: &[ClipPair],
    radius: usize,
    patch: usize,
    augment: bool,
    rng: &mut R,
) -> Result<EnhanceSample> {
    if pairs.is_empty() {
        return Err(Error::Config("no training clips".into()));
    }
    let pair = &pairs[rng.random_range(0..pairs.len())];
    let (w, h) = (pair.raw.width(), pair.raw.height());
    if w < patch || h < patch {
        return Err(Error::Config(format!("clip {w}x{h} is smaller than the {patch}px patch")));
    }
    let t = rng.random_range(0..pair.raw.len());
    let x = rng.random_range(0..=w - patch);
    let y = rng.random_range(0..=h - patch);
    let aug = if augment { Augment::random(rng) } else { Augment::default() };
    let inputs = pair
        .compressed
        .window_indices(t, radius)
        .into_iter()
        .map(|i| Ok(aug.apply(&pair.compressed.frame(i).crop(x, y, patch, patch)?)))
        .collect::<Result<Vec<_>>>()?;
    let target = aug.apply(&pair.raw.frame(t).crop(x, y, patch, patch)?);
    Ok(EnhanceSample {
        inputs,
        target,
        qp: pair.qp(),
    })
}

/// `[N, T, H, W]` inputs and `[N, 1, H, W]` targets, scaled to [0, 1].
pub fn enhance_tensors(samples: &[EnhanceSample]) -> (Tensor<f32>, Tensor<f32>) {
    let t = samples[0].inputs.len();
    let (w, h) = (samples[0].target.width(), samples[0].target.height());
    let mut x = Vec::with_capacity(samples.len() * t * w * h);
    for s in samples {
        for f in &s.inputs {
            x.extend(f.data().iter().map(|&v| normalize_pixels(v) as f32));
        }
    }
    let targets: Vec<Frame> = samples.iter().map(|s| s.target.clone()).collect();
    (Tensor::new(vec![samples.len(), t, h, w], x), frames_tensor(&targets))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labelled(n: usize, frames: usize, size: usize) -> Vec<Clip> {
        (0..n)
            .map(|i| {
                let fr = (0..frames)
                    .map(|k| Frame::from_fn(size, size, |x, y| ((x + 3 * y + 17 * k + 5 * i) % 256) as f64))
                    .collect();
                Clip::new(fr).unwrap().with_qp(Some(22), Some(i % 5))
            })
            .collect()
    }

    #[test]
    fn batch_counts_and_pairs() {
        let clips = labelled(3, 2, 40);
        let b = make_patch_batch(&clips, 2, 16, 7).unwrap();
        assert_eq!(b.len(), 4);
        assert_eq!(b.positives, vec![1, 0, 3, 2]);
        assert_eq!(b.sources[0], b.sources[1]);
        assert_ne!(b.sources[0], b.sources[2]);
        assert_eq!(b, make_patch_batch(&clips, 2, 16, 7).unwrap());
        assert_eq!(b.tensor().shape(), &[4, 1, 16, 16]);
    }

    #[test]
    fn batch_errors() {
        let clips = labelled(1, 2, 40);
        assert!(matches!(make_patch_batch(&clips, 1, 16, 0), Err(Error::Config(_))));
        assert!(matches!(make_patch_batch(&clips, 3, 16, 0), Err(Error::Config(_))));
        assert!(matches!(make_patch_batch(&clips, 2, 48, 0), Err(Error::Config(_))));
    }

    #[test]
    fn augmentation_is_shared_by_inputs_and_target() {
        let raw = labelled(1, 3, 24).remove(0);
        let pair = ClipPair::new(raw.clone(), raw).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let s = sample_enhance(std::slice::from_ref(&pair), 1, 8, true, &mut rng).unwrap();
            assert_eq!(s.inputs.len(), 3);
            // Identical source clips: the centre input equals the target.
            assert_eq!(s.inputs[1], s.target);
        }
    }
}
