//! Planar 8-bit YUV 4:2:0 files. Only the luma plane is kept.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Clip, Frame};
use crate::{Error, Result};

/// Bytes of one 4:2:0 frame, chroma planes rounded up for odd sizes.
pub fn frame_bytes(width: usize, height: usize) -> usize {
    width * height + 2 * width.div_ceil(2) * height.div_ceil(2)
}

pub fn load_yuv(path: impl AsRef<Path>, width: usize, height: usize, frames: usize) -> Result<Clip> {
    let path = path.as_ref();
    if width == 0 || height == 0 || frames == 0 {
        return Err(Error::Shape(format!(
            "{}: invalid geometry {width}x{height} x {frames}",
            path.display()
        )));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let per = frame_bytes(width, height);
    let expected = per * frames;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: expected as u64,
            actual: bytes.len() as u64,
        });
    }
    let luma = width * height;
    let frames = bytes
        .chunks_exact(per)
        .take(frames)
        .map(|chunk| Frame::new(width, height, chunk[..luma].iter().map(|&b| b as f64).collect()))
        .collect::<Result<Vec<_>>>()?;
    Clip::new(frames)
}

/// Writes the clip as 4:2:0 with neutral (128) chroma.
pub fn write_yuv(path: impl AsRef<Path>, clip: &Clip) -> Result<()> {
    let path = path.as_ref();
    let chroma = frame_bytes(clip.width(), clip.height()) - clip.width() * clip.height();
    let mut buf = Vec::with_capacity(clip.len() * frame_bytes(clip.width(), clip.height()));
    for f in clip.frames() {
        buf.extend(f.to_u8());
        buf.extend(std::iter::repeat_n(128u8, chroma));
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}
