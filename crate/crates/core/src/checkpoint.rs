//! Little-endian checkpoint format.
//!
//! ```text
//! "HRMCKPT1" | version u32
//! tensors:   count u64, then per tensor: name_len u32, UTF-8 name, rank u32,
//!            dims u64 × rank, f64 × numel (row-major)
//! optimizer: first moments and second moments in the same scheme
//! step u64
//! ```

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tensor::Tensor;
use crate::trainer::AdamW;

pub const MAGIC: &[u8; 8] = b"HRMCKPT1";
pub const VERSION: u32 = 1;

pub type NamedTensors = Vec<(String, Tensor)>;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: NamedTensors,
    pub moment1: NamedTensors,
    pub moment2: NamedTensors,
    pub step: u64,
}

impl Checkpoint {
    /// Snapshot of parameters and optimizer moments; frozen tensors have no
    /// moments and are omitted from the optimizer sections.
    pub fn capture(params: &ParamSet, optimizer: &AdamW, step: u64) -> Self {
        let moments = |slots: &[Option<Tensor>]| {
            params
                .iter()
                .zip(slots)
                .filter_map(|(p, s)| s.as_ref().map(|t| (p.name.clone(), t.clone())))
                .collect()
        };
        Checkpoint {
            params: params.named_tensors(),
            moment1: moments(&optimizer.m),
            moment2: moments(&optimizer.v),
            step,
        }
    }

    /// Writes the snapshot back. Any name or shape difference is a schema
    /// error naming the first differing tensor.
    pub fn restore(&self, params: &mut ParamSet, optimizer: &mut AdamW) -> Result<()> {
        let mut staged = params.clone();
        staged.load_values(&self.params)?;
        let expected: Vec<(String, Vec<usize>)> = params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| (p.name.clone(), p.value.shape().to_vec()))
            .collect();
        for moments in [&self.moment1, &self.moment2] {
            check_moments(&expected, moments)?;
        }
        let mut m = self.moment1.iter();
        let mut v = self.moment2.iter();
        for (i, p) in params.iter().enumerate() {
            if p.trainable {
                optimizer.m[i] = m.next().map(|(_, t)| t.clone());
                optimizer.v[i] = v.next().map(|(_, t)| t.clone());
            }
        }
        optimizer.t = self.step;
        *params = staged;
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for section in [&self.params, &self.moment1, &self.moment2] {
            write_section(&mut out, section);
        }
        out.extend_from_slice(&self.step.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic bytes".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let params = read_section(&mut r)?;
        let moment1 = read_section(&mut r)?;
        let moment2 = read_section(&mut r)?;
        let step = r.u64()?;
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint {
            params,
            moment1,
            moment2,
            step,
        })
    }
}

fn check_moments(expected: &[(String, Vec<usize>)], got: &NamedTensors) -> Result<()> {
    for (i, (name, shape)) in expected.iter().enumerate() {
        match got.get(i) {
            Some((n, t)) if n == name && t.shape() == shape.as_slice() => {}
            _ => {
                return Err(Error::Schema {
                    name: name.clone(),
                    detail: "optimizer state does not match".into(),
                })
            }
        }
    }
    if let Some((extra, _)) = got.get(expected.len()) {
        return Err(Error::Schema {
            name: extra.clone(),
            detail: "optimizer state for a tensor not in the model".into(),
        });
    }
    Ok(())
}

fn write_section(out: &mut Vec<u8>, tensors: &NamedTensors) {
    out.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &dim in t.shape() {
            out.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        out.extend_from_slice(&t.to_le_bytes());
    }
}

fn read_section(r: &mut Reader<'_>) -> Result<NamedTensors> {
    let count = r.u64()?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = core::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .into();
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let bytes = numel
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Checkpoint(format!("tensor `{name}` is too large")))?;
        let data = r
            .take(bytes)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let t = Tensor::new(&shape, data).map_err(|e| Error::Checkpoint(format!("tensor `{name}`: {e}")))?;
        out.push((name, t));
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
