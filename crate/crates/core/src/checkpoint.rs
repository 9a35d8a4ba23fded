//! Versioned binary weight container.
//!
//! Layout (little endian): magic `BQEW`, format version, model kind, config
//! JSON with its SHA-256, metadata JSON, parameters (name, trainable flag,
//! shape, f32 values), optional Adam state, and a SHA-256 of everything
//! before it.

use std::fmt;
use std::fs;
use std::path::Path;

use blindqe_tensor::optim::Adam;
use blindqe_tensor::{ParamStore, Tensor};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"BQEW";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Drl,
    Net,
}

impl ModelKind {
    fn code(self) -> u8 {
        match self {
            ModelKind::Drl => 1,
            ModelKind::Net => 2,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            1 => Ok(ModelKind::Drl),
            2 => Ok(ModelKind::Net),
            _ => Err(Error::Corrupt(format!("unknown model kind {c}"))),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Drl => "degradation encoder",
            ModelKind::Net => "enhancement network",
        })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Digest of parameter names, flags and value bytes.
pub fn param_digest(params: &ParamStore<f32>) -> String {
    let mut h = Sha256::new();
    for e in params.entries() {
        h.update(e.name.as_bytes());
        h.update([e.trainable as u8]);
        for &d in e.value.shape() {
            h.update((d as u64).to_le_bytes());
        }
        for v in e.value.data() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub kind: ModelKind,
    /// Config echo as JSON.
    pub config: String,
    pub params: ParamStore<f32>,
    pub optimizer: Option<Adam<f32>>,
    pub meta: serde_json::Value,
}

impl ModelWeights {
    pub fn new(
        kind: ModelKind,
        config: String,
        params: ParamStore<f32>,
        optimizer: Option<Adam<f32>>,
        meta: serde_json::Value,
    ) -> Result<Self> {
        serde_json::from_str::<serde_json::Value>(&config)?;
        if let Some(opt) = &optimizer {
            if opt.m.len() != params.len() || opt.v.len() != params.len() {
                return Err(Error::Validation("optimizer state does not match parameters".into()));
            }
        }
        Ok(Self {
            kind,
            config,
            params,
            optimizer,
            meta,
        })
    }

    pub fn config_hash(&self) -> String {
        sha256_hex(self.config.as_bytes())
    }

    pub fn expect_kind(&self, kind: ModelKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::WrongModelKind {
                expected: kind.to_string(),
                found: self.kind.to_string(),
            });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        b.push(self.kind.code());
        put_bytes(&mut b, self.config.as_bytes());
        b.extend_from_slice(&Sha256::digest(self.config.as_bytes()));
        put_bytes(&mut b, self.meta.to_string().as_bytes());
        b.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for e in self.params.entries() {
            put_bytes(&mut b, e.name.as_bytes());
            b.push(e.trainable as u8);
            put_tensor(&mut b, &e.value);
        }
        match &self.optimizer {
            None => b.push(0),
            Some(opt) => {
                b.push(1);
                for x in [opt.lr, opt.beta1, opt.beta2, opt.eps] {
                    b.extend_from_slice(&x.to_le_bytes());
                }
                b.extend_from_slice(&opt.step.to_le_bytes());
                for t in opt.m.iter().chain(&opt.v) {
                    put_tensor(&mut b, t);
                }
            }
        }
        let digest = Sha256::digest(&b);
        b.extend_from_slice(&digest);
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { b: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Corrupt("not a weight container".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                expected: FORMAT_VERSION,
                found: version,
            });
        }
        let kind = ModelKind::from_code(r.u8()?)?;
        let config = r.bytes()?.to_vec();
        let hash = r.take(32)?;
        if Sha256::digest(&config).as_slice() != hash {
            return Err(Error::HashMismatch);
        }
        if bytes.len() < r.pos + 32 {
            return Err(Error::Corrupt("container truncated".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != tail {
            return Err(Error::Corrupt("content digest mismatch".into()));
        }
        let config = String::from_utf8(config).map_err(|_| Error::Corrupt("config is not UTF-8".into()))?;
        let meta: serde_json::Value = serde_json::from_slice(r.bytes()?)?;
        let n = r.u32()? as usize;
        let mut params = ParamStore::new();
        for _ in 0..n {
            let name = String::from_utf8(r.bytes()?.to_vec()).map_err(|_| Error::Corrupt("parameter name is not UTF-8".into()))?;
            let trainable = r.u8()? != 0;
            let t = r.tensor()?;
            if params.find(&name).is_some() {
                return Err(Error::Corrupt(format!("duplicate parameter {name:?}")));
            }
            params.add(name, t);
            params.entries_mut().last_mut().expect("just added").trainable = trainable;
        }
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let (lr, beta1, beta2, eps) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
                let step = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
                let mut m = Vec::with_capacity(n);
                for _ in 0..n {
                    m.push(r.tensor()?);
                }
                let mut v = Vec::with_capacity(n);
                for _ in 0..n {
                    v.push(r.tensor()?);
                }
                Some(Adam {
                    lr,
                    beta1,
                    beta2,
                    eps,
                    step,
                    m,
                    v,
                })
            }
            f => return Err(Error::Corrupt(format!("bad optimizer flag {f}"))),
        };
        if r.pos != body.len() {
            return Err(Error::Corrupt("trailing bytes".into()));
        }
        ModelWeights::new(kind, config, params, optimizer, meta)
    }
}

pub fn save_checkpoint(weights: &ModelWeights, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, weights.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelWeights> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    ModelWeights::from_bytes(&bytes)
}

/// Loads and checks the model kind.
pub fn load_checkpoint_of(path: impl AsRef<Path>, kind: ModelKind) -> Result<ModelWeights> {
    let w = load_checkpoint(path)?;
    w.expect_kind(kind)?;
    Ok(w)
}

fn put_bytes(b: &mut Vec<u8>, data: &[u8]) {
    b.extend_from_slice(&(data.len() as u32).to_le_bytes());
    b.extend_from_slice(data);
}

fn put_tensor(b: &mut Vec<u8>, t: &Tensor<f32>) {
    b.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        b.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        b.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.b.len())
            .ok_or_else(|| Error::Corrupt(format!("unexpected end of data at byte {}", self.pos)))?;
        let s = &self.b[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    fn tensor(&mut self) -> Result<Tensor<f32>> {
        let nd = self.u32()? as usize;
        if nd > 8 {
            return Err(Error::Corrupt(format!("tensor rank {nd}")));
        }
        let mut shape = Vec::with_capacity(nd);
        for _ in 0..nd {
            shape.push(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")) as usize);
        }
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| Error::Corrupt("tensor too large".into()))?;
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::Corrupt("tensor too large".into()))?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        Ok(Tensor::new(shape, data))
    }
}
