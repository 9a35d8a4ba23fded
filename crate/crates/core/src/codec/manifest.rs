//! JSON dataset manifests listing raw clips and, optionally, their
//! compressed counterparts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{yuv, Clip, CodecConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub raw_path: PathBuf,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qp: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compressed_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
}

/// A manifest plus the directory its relative paths resolve against.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub base: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

/// A raw clip and its compressed version.
#[derive(Debug, Clone)]
pub struct ClipPair {
    pub raw: Clip,
    pub compressed: Clip,
}

impl ClipPair {
    pub fn new(raw: Clip, compressed: Clip) -> Result<Self> {
        if raw.len() != compressed.len()
            || raw.width() != compressed.width()
            || raw.height() != compressed.height()
        {
            return Err(Error::Shape(format!(
                "raw clip {}x{}x{} does not match compressed {}x{}x{}",
                raw.width(),
                raw.height(),
                raw.len(),
                compressed.width(),
                compressed.height(),
                compressed.len()
            )));
        }
        Ok(Self { raw, compressed })
    }

    pub fn qp(&self) -> Option<i32> {
        self.compressed.qp
    }

    pub fn label(&self) -> Option<usize> {
        self.compressed.label
    }
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let entries: Vec<ManifestEntry> = serde_json::from_str(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { base, entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self.entries)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    /// Loads the raw clip of every entry.
    pub fn load_raw(&self) -> Result<Vec<Clip>> {
        self.entries
            .iter()
            .map(|e| yuv::load_yuv(self.resolve(&e.raw_path), e.width, e.height, e.frames))
            .collect()
    }

    /// Loads every entry that has a compressed file. Labels missing from
    /// the manifest are derived from the QP.
    pub fn load_pairs(&self, codec: &CodecConfig) -> Result<Vec<ClipPair>> {
        let mut out = Vec::new();
        for e in &self.entries {
            let Some(cp) = &e.compressed_path else {
                continue;
            };
            let raw = yuv::load_yuv(self.resolve(&e.raw_path), e.width, e.height, e.frames)?;
            let label = e.label.or_else(|| e.qp.map(|qp| codec.level_for_qp(qp)));
            let comp = yuv::load_yuv(self.resolve(cp), e.width, e.height, e.frames)?.with_qp(e.qp, label);
            out.push(ClipPair::new(raw, comp)?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::Frame;

    #[test]
    fn round_trips_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let clip = Clip::new(vec![Frame::from_fn(8, 8, |x, y| (x + 8 * y) as f64); 2]).unwrap();
        yuv::write_yuv(dir.path().join("raw.yuv"), &clip).unwrap();
        yuv::write_yuv(dir.path().join("c.yuv"), &clip).unwrap();
        let m = Manifest {
            base: dir.path().to_path_buf(),
            entries: vec![ManifestEntry {
                raw_path: "raw.yuv".into(),
                width: 8,
                height: 8,
                frames: 2,
                qp: Some(37),
                compressed_path: Some("c.yuv".into()),
                label: None,
            }],
        };
        let p = dir.path().join("m.json");
        m.save(&p).unwrap();
        let back = Manifest::load(&p).unwrap();
        assert_eq!(back, m);
        let pairs = back.load_pairs(&CodecConfig::default()).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].label(), Some(3));
        assert_eq!(pairs[0].raw, clip);
    }
}
