//! `SOR1` named-tensor container.
//!
//! Layout: magic `SOR1`; u32 entry count; per entry a u16 name length, the
//! UTF-8 name, a u8 rank, `rank` u32 extents, then the f32 values row-major.
//! All integers and floats are little-endian.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"SOR1";

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamContainer {
    pub entries: Vec<ParamEntry>,
}

impl ParamContainer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a 64-bit tensor, rounding its values to f32.
    pub fn push_tensor(&mut self, name: &str, t: &Tensor) -> Result<()> {
        self.push(ParamEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            values: t.data().iter().map(|&v| v as f32).collect(),
        })
    }

    pub fn push(&mut self, entry: ParamEntry) -> Result<()> {
        if self.get(&entry.name).is_some() {
            return Err(Error::Validation(format!("duplicate parameter {:?}", entry.name)));
        }
        if entry.name.len() > u16::MAX as usize {
            return Err(Error::Validation("parameter name too long".into()));
        }
        if entry.shape.len() > u8::MAX as usize || entry.shape.iter().any(|&e| e > u32::MAX as usize) {
            return Err(Error::Validation(format!(
                "{}: shape {:?} not encodable",
                entry.name, entry.shape
            )));
        }
        if entry.shape.iter().product::<usize>() != entry.values.len() {
            return Err(Error::Validation(format!(
                "{}: {} values for shape {:?}",
                entry.name,
                entry.values.len(),
                entry.shape
            )));
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// The named entry widened to a 64-bit tensor.
    pub fn tensor(&self, name: &str) -> Option<Tensor> {
        self.get(name).map(|e| {
            Tensor::new(e.shape.clone(), e.values.iter().map(|&v| v as f64).collect()).expect("shape checked on insert")
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(e.shape.len() as u8);
            for &d in &e.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &e.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err("bad magic, expected SOR1".into());
        }
        let n = r.u32()?;
        let mut c = Self::new();
        for i in 0..n {
            let len = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| format!("entry {i}: name is not UTF-8"))?
                .to_string();
            let rank = r.take(1)?[0] as usize;
            let shape = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let count = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| format!("{name}: shape overflows"))?;
            let raw = r.take(count.checked_mul(4).ok_or("entry too large")?)?;
            let values = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            c.push(ParamEntry { name, shape, values }).map_err(|e| e.to_string())?;
        }
        if r.pos != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - r.pos));
        }
        Ok(c)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        super::write_atomic(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|msg| Error::format(path, msg))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
