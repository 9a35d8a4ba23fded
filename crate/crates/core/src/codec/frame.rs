use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Single-channel (luma) picture with real-valued samples, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

/// Mirror index without repeating the edge sample (`-1 -> 1`).
pub(crate) fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

impl Frame {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Shape(format!("empty frame {width}x{height}")));
        }
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "frame {width}x{height} needs {} samples, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn same_size(&self, other: &Frame) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn in_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=255.0).contains(v))
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Frame> {
        if x0 + width > self.width || y0 + height > self.height || width == 0 || height == 0 {
            return Err(Error::Shape(format!(
                "crop {width}x{height}+{x0}+{y0} outside {}x{}",
                self.width, self.height
            )));
        }
        Ok(Frame::from_fn(width, height, |x, y| self.at(x0 + x, y0 + y)))
    }

    /// Reflect-pads on the right and bottom up to the next multiple of `m`.
    pub fn pad_to_multiple(&self, m: usize) -> Frame {
        let w = self.width.div_ceil(m) * m;
        let h = self.height.div_ceil(m) * m;
        if (w, h) == (self.width, self.height) {
            return self.clone();
        }
        Frame::from_fn(w, h, |x, y| {
            self.at(
                reflect_index(x as isize, self.width),
                reflect_index(y as isize, self.height),
            )
        })
    }

    pub fn clamped(&self) -> Frame {
        Frame {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| v.clamp(0.0, 255.0)).collect(),
        }
    }

    /// Rounded and saturated to 8-bit samples.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| v.round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn flip_horizontal(&self) -> Frame {
        Frame::from_fn(self.width, self.height, |x, y| self.at(self.width - 1 - x, y))
    }

    pub fn flip_vertical(&self) -> Frame {
        Frame::from_fn(self.width, self.height, |x, y| self.at(x, self.height - 1 - y))
    }

    /// Rotation by 90 degrees counter-clockwise.
    pub fn rotate90(&self) -> Frame {
        let (w, h) = (self.width, self.height);
        Frame::from_fn(h, w, |x, y| self.at(w - 1 - y, x))
    }
}

/// Ordered luma frames of one sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clip {
    frames: Vec<Frame>,
    width: usize,
    height: usize,
    /// Quantization parameter the clip was compressed with, when known.
    pub qp: Option<i32>,
    /// Degradation class index, when known.
    pub label: Option<usize>,
}

impl Clip {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::Shape("clip has no frames".into()))?;
        let (width, height) = (first.width, first.height);
        if let Some((i, f)) = frames.iter().enumerate().find(|(_, f)| !f.same_size(first)) {
            return Err(Error::Shape(format!(
                "frame {i} is {}x{}, expected {width}x{height}",
                f.width, f.height
            )));
        }
        if let Some(i) = frames.iter().position(|f| !f.in_range()) {
            return Err(Error::Domain(format!("frame {i} has samples outside [0, 255]")));
        }
        Ok(Self {
            frames,
            width,
            height,
            qp: None,
            label: None,
        })
    }

    pub fn with_qp(mut self, qp: Option<i32>, label: Option<usize>) -> Self {
        self.qp = qp;
        self.label = label;
        self
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn frame(&self, i: usize) -> &Frame {
        &self.frames[i]
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Indices of the `2r + 1` frames centred on `t`, clamped at the clip ends.
    pub fn window_indices(&self, t: usize, radius: usize) -> Vec<usize> {
        let last = self.frames.len() as isize - 1;
        (-(radius as isize)..=radius as isize)
            .map(|d| (t as isize + d).clamp(0, last) as usize)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_padding_mirrors_without_edge_repeat() {
        let f = Frame::from_fn(3, 1, |x, _| x as f64);
        let p = f.pad_to_multiple(4);
        assert_eq!(p.width(), 4);
        assert_eq!(&p.data()[..4], &[0.0, 1.0, 2.0, 1.0]);
        assert_eq!(reflect_index(-1, 5), 1);
        assert_eq!(reflect_index(5, 5), 3);
    }

    #[test]
    fn clip_rejects_mixed_sizes_and_range() {
        let a = Frame::filled(4, 4, 0.0);
        let b = Frame::filled(4, 2, 0.0);
        assert!(matches!(Clip::new(vec![a.clone(), b]), Err(Error::Shape(_))));
        assert!(matches!(
            Clip::new(vec![Frame::filled(4, 4, 300.0)]),
            Err(Error::Domain(_))
        ));
        assert!(Clip::new(vec![a]).is_ok());
    }

    #[test]
    fn four_rotations_are_identity() {
        let f = Frame::from_fn(3, 2, |x, y| (x * 10 + y) as f64);
        let r = f.rotate90();
        assert_eq!((r.width(), r.height()), (2, 3));
        assert_eq!(r.rotate90().rotate90().rotate90(), f);
    }

    #[test]
    fn window_clamps_at_ends() {
        let c = Clip::new(vec![Frame::filled(2, 2, 0.0); 3]).unwrap();
        assert_eq!(c.window_indices(0, 1), vec![0, 0, 1]);
        assert_eq!(c.window_indices(2, 2), vec![0, 1, 2, 2, 2]);
    }
}
