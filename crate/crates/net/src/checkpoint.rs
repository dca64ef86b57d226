//! Binary checkpoint container: magic `DRCK`, a `u32` version, a
//! length-prefixed `key=value` text block, then named `f32` tensors.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{NetError, Result};
use crate::model::Params;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"DRCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub config: BTreeMap<String, String>,
    pub records: Vec<(String, Tensor)>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| NetError::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| NetError::Format(e.to_string()))
    }
}

fn push_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| NetError::Format(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        self.config.insert(key.into(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.config
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| NetError::Format(format!("missing config key {key}")))
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.get(key)?;
        raw.parse()
            .map_err(|_| NetError::Format(format!("bad value {raw:?} for {key}")))
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.records.push((name.into(), tensor));
    }

    pub fn record(&self, name: &str) -> Result<&Tensor> {
        self.records
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| NetError::Format(format!("missing record {name}")))
    }

    pub fn has_record(&self, name: &str) -> bool {
        self.records.iter().any(|(n, _)| n == name)
    }

    /// Stores every tensor of `params` under `prefix/name`.
    pub fn push_params(&mut self, prefix: &str, params: &Params) {
        for (name, t) in params.iter() {
            self.push(format!("{prefix}/{name}"), t.clone());
        }
    }

    /// Fills a copy of `template` from records under `prefix`.
    pub fn read_params(&self, prefix: &str, template: &Params) -> Result<Params> {
        let mut loaded = Params::new();
        for (name, t) in template.iter() {
            let r = self.record(&format!("{prefix}/{name}"))?;
            if r.shape() != t.shape() {
                return Err(NetError::Format(format!(
                    "{prefix}/{name}: stored shape {:?}, model expects {:?}",
                    r.shape(),
                    t.shape()
                )));
            }
            loaded.insert(name, r.clone())?;
        }
        let mut out = template.clone();
        out.load_from(&loaded)?;
        Ok(out)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let mut text = String::new();
        for (k, v) in &self.config {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(NetError::Format(format!("config entry {k:?} cannot be encoded")));
            }
            text.push_str(k);
            text.push('=');
            text.push_str(v);
            text.push('\n');
        }
        push_u32(&mut out, text.len())?;
        out.extend_from_slice(text.as_bytes());
        push_u32(&mut out, self.records.len())?;
        for (name, t) in &self.records {
            push_u32(&mut out, name.len())?;
            out.extend_from_slice(name.as_bytes());
            for d in t.shape() {
                push_u32(&mut out, d)?;
            }
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(NetError::Format("not a DRCK checkpoint".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(NetError::Format(format!("unsupported version {version}")));
        }
        let mut config = BTreeMap::new();
        for line in r.string()?.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| NetError::Format(format!("bad config line {line:?}")))?;
            config.insert(k.to_string(), v.to_string());
        }
        let count = r.u32()? as usize;
        let mut records = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = r.string()?;
            let mut shape = [0usize; 4];
            for d in &mut shape {
                *d = r.u32()? as usize;
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| NetError::Format(format!("{name}: shape overflow")))?;
            let raw = r.take(n.checked_mul(4).ok_or_else(|| NetError::Format("size overflow".into()))?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect();
            records.push((name, Tensor::new(shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(NetError::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { config, records })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::new();
        c.set("a.depth", 3);
        c.set("b.lr", 5e-4);
        c.push("w", Tensor::new([1, 2, 1, 3], vec![0.1, -2.0, 3.5, 1e-7, 0.0, 7.25]).unwrap());
        c.push("s", Tensor::scalar(1.0 / 3.0));
        c
    }

    #[test]
    fn bytes_round_trip() {
        let bytes = sample().to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(back.parse::<usize>("a.depth").unwrap(), 3);
        assert_eq!(back.parse::<f64>("b.lr").unwrap(), 5e-4);
        assert_eq!(back.record("w").unwrap().data()[1], -2.0);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }
}
