//! Binary checkpoint ("IRCN" format, little-endian throughout).
//!
//! ```text
//! magic    "IRCN"
//! version  u32
//! config   u32 length + UTF-8 JSON of the run config
//! epoch    u64 completed epochs
//! tensors  u32 count, then per tensor:
//!            u32 name length + name, u8 dtype tag, 4 x u32 dims, elements
//! optim    u64 t, f64 d, u8 has_prev + f64 prev_loss,
//!          u32 count + (u64 len + f64s) for first, same for second
//! norm     u8 present, u32 channels, f64 means, f64 stds
//! rng      u64 seed, u128 word position
//! ```

use std::path::Path;

use crate::data::Normalization;
use crate::error::{Error, Result};
use crate::layers::RngState;
use crate::tensor::{DType, Scalar, Shape, Tensor};
use crate::train::OptimizerState;

pub const MAGIC: &[u8; 4] = b"IRCN";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_json: String,
    pub epoch: u64,
    pub tensors: Vec<(String, Tensor<f32>)>,
    pub optimizer: OptimizerState,
    pub normalization: Option<Normalization>,
    pub rng: RngState,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend(v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend(v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend(v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.0.extend(b);
    }
    fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        v.iter().for_each(|&x| self.f64(x));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!("checkpoint truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("checkpoint string is not UTF-8".into()))
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        if n > (self.buf.len() - self.pos) / 8 {
            return Err(Error::Format(format!("checkpoint buffer length {n} exceeds file size")));
        }
        (0..n).map(|_| self.f64()).collect()
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend(MAGIC);
        w.u32(VERSION);
        w.bytes(self.config_json.as_bytes());
        w.u64(self.epoch);
        w.u32(self.tensors.len() as u32);
        for (name, t) in &self.tensors {
            w.bytes(name.as_bytes());
            w.u8(f32::DTYPE.tag());
            t.shape().dims().iter().for_each(|&d| w.u32(d as u32));
            t.data().iter().for_each(|v| w.0.extend(v.to_le_bytes()));
        }
        let o = &self.optimizer;
        w.u64(o.t);
        w.f64(o.d);
        w.u8(o.prev_loss.is_some() as u8);
        w.f64(o.prev_loss.unwrap_or(0.0));
        for bufs in [&o.first, &o.second] {
            w.u32(bufs.len() as u32);
            bufs.iter().for_each(|b| w.f64s(b));
        }
        match &self.normalization {
            None => w.u8(0),
            Some(n) => {
                w.u8(1);
                w.u32(n.mean.len() as u32);
                n.mean.iter().chain(&n.std).for_each(|&v| w.f64(v));
            }
        }
        w.u64(self.rng.seed);
        w.0.extend(self.rng.word_pos.to_le_bytes());
        w.0
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Checkpoint> {
        let mut r = Reader { buf, pos: 0 };
        let magic = r.take(4).map_err(|_| Error::Format("file too short for a checkpoint".into()))?;
        if magic != MAGIC {
            return Err(Error::Format(format!("bad checkpoint magic {magic:?} (expected \"IRCN\")")));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let config_json = r.string()?;
        let epoch = r.u64()?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name = r.string()?;
            let tag = r.u8()?;
            let dtype = DType::from_tag(tag).ok_or_else(|| Error::Format(format!("unknown dtype tag {tag} for '{name}'")))?;
            let dims: Vec<usize> = (0..4).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_>>()?;
            let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
            let bytes = r.take(shape.len().checked_mul(dtype.size()).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
            let data: Vec<f32> = match dtype {
                DType::F32 => bytes.chunks_exact(4).map(f32::read_le).collect(),
                DType::F64 => bytes.chunks_exact(8).map(|b| f64::read_le(b) as f32).collect(),
            };
            tensors.push((name, Tensor::new(shape, data)?));
        }
        let t = r.u64()?;
        let d = r.f64()?;
        let has_prev = r.u8()? != 0;
        let prev = r.f64()?;
        let mut bufs = Vec::new();
        for _ in 0..2 {
            let n = r.u32()? as usize;
            bufs.push((0..n).map(|_| r.f64s()).collect::<Result<Vec<_>>>()?);
        }
        let second = bufs.pop().unwrap();
        let first = bufs.pop().unwrap();
        let normalization = match r.u8()? {
            0 => None,
            _ => {
                let c = r.u32()? as usize;
                let mean = (0..c).map(|_| r.f64()).collect::<Result<_>>()?;
                let std = (0..c).map(|_| r.f64()).collect::<Result<_>>()?;
                Some(Normalization { mean, std })
            }
        };
        let rng = RngState { seed: r.u64()?, word_pos: r.u128()? };
        if r.pos != buf.len() {
            return Err(Error::Format(format!("{} trailing bytes after checkpoint", buf.len() - r.pos)));
        }
        Ok(Checkpoint {
            config_json,
            epoch,
            tensors,
            optimizer: OptimizerState { t, first, second, d, prev_loss: has_prev.then_some(prev) },
            normalization,
            rng,
        })
    }

    /// Writes through a temporary file and a rename, so an interrupted save
    /// never leaves a torn checkpoint behind.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}
