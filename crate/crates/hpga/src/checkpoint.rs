//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "HPGACKPT"
//! version    u32      = 1
//! epochs     u64      epochs trained
//! config     u32 length + UTF-8 TOML of the run config
//! groups     u32 count, then per group:
//!   name     u32 length + UTF-8
//!   tensors  u32 count, then per tensor:
//!     name   u32 length + UTF-8
//!     rank   u32, then rank x u32 dims
//!     data   prod(dims) x f32
//! ```

use std::path::Path;

use hpga_core::autodiff::ModelParams;

use crate::config::RunConfig;
use crate::error::{format_err, io_err, Result};

pub const MAGIC: &[u8; 8] = b"HPGACKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub epochs: u64,
    pub config: RunConfig,
    pub groups: Vec<(String, Vec<TensorRecord>)>,
}

impl Checkpoint {
    pub fn from_params(params: &ModelParams, config: &RunConfig, epochs: u64) -> Self {
        let groups = params
            .groups()
            .iter()
            .map(|g| {
                let ts = g
                    .tensors
                    .iter()
                    .map(|t| TensorRecord {
                        name: t.name.clone(),
                        shape: t.shape.clone(),
                        data: t.data.iter().map(|&v| v as f32).collect(),
                    })
                    .collect();
                (g.name.clone(), ts)
            })
            .collect();
        Self { epochs, config: config.clone(), groups }
    }

    /// Copies stored values into `params`, which must have the same layout.
    pub fn load_into(&self, params: &mut ModelParams) -> std::result::Result<(), String> {
        let layout: Vec<(String, Vec<(String, Vec<usize>)>)> = params
            .groups()
            .iter()
            .map(|g| (g.name.clone(), g.tensors.iter().map(|t| (t.name.clone(), t.shape.clone())).collect()))
            .collect();
        if layout.len() != self.groups.len() {
            return Err(format!("{} parameter groups, checkpoint has {}", layout.len(), self.groups.len()));
        }
        for ((gname, ts), (cname, cts)) in layout.iter().zip(&self.groups) {
            if gname != cname || ts.len() != cts.len() {
                return Err(format!("group `{gname}` does not match checkpoint group `{cname}`"));
            }
            for ((tn, ts), c) in ts.iter().zip(cts) {
                if *tn != c.name || *ts != c.shape {
                    return Err(format!("tensor {gname}/{tn} {ts:?} vs checkpoint {}/{} {:?}", cname, c.name, c.shape));
                }
            }
        }
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let rec = &self.groups[id.group].1[id.index];
            let t = params.tensor_mut(id);
            for (d, &s) in t.data.iter_mut().zip(&rec.data) {
                *d = f64::from(s);
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.epochs.to_le_bytes());
        put_str(&mut out, &self.config.to_toml());
        put_u32(&mut out, self.groups.len());
        for (name, ts) in &self.groups {
            put_str(&mut out, name);
            put_u32(&mut out, ts.len());
            for t in ts {
                put_str(&mut out, &t.name);
                put_u32(&mut out, t.shape.len());
                for &d in &t.shape {
                    put_u32(&mut out, d);
                }
                for v in &t.data {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err("not a checkpoint (bad magic)".into());
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(format!("checkpoint version {version} not supported"));
        }
        let epochs = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
        let config = RunConfig::from_toml(&r.string()?).map_err(|e| format!("embedded config: {e}"))?;
        let n_groups = r.u32()? as usize;
        let mut groups = Vec::new();
        for _ in 0..n_groups {
            let name = r.string()?;
            let n = r.u32()? as usize;
            let mut ts = Vec::new();
            for _ in 0..n {
                let tname = r.string()?;
                let rank = r.u32()? as usize;
                let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
                let len: usize = shape.iter().product();
                let raw = r.take(len.checked_mul(4).ok_or("tensor too large")?)?;
                let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
                ts.push(TensorRecord { name: tname, shape, data });
            }
            groups.push((name, ts));
        }
        if r.pos != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - r.pos));
        }
        Ok(Self { epochs, config, groups })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        Self::from_bytes(&bytes).map_err(|m| format_err(path, m))
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("fits in u32").to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("truncated checkpoint")?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> std::result::Result<String, String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| e.to_string())
    }
}
