//! Binary parameter container: `TXSP`, version, tensors as f32 LE, CRC-32.
//!
//! The model configuration travels as an extra tensor named `__config__`,
//! so a checkpoint alone rebuilds its model.

use std::fs;
use std::path::Path;

use crate::error::{CheckpointError, Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor::{Float, ParamStore};

pub const MAGIC: &[u8; 4] = b"TXSP";
pub const VERSION: u32 = 1;
pub const CONFIG_TENSOR: &str = "__config__";

/// One named tensor as stored.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

pub fn encode(records: &[Record]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for r in records {
        out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
        out.extend_from_slice(r.name.as_bytes());
        out.extend_from_slice(&(r.shape.len() as u32).to_le_bytes());
        for &d in &r.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &r.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> std::result::Result<&[u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Parse and verify a container. Magic and version are checked before the
/// CRC so that foreign files are reported as such.
pub fn decode(bytes: &[u8]) -> std::result::Result<Vec<Record>, CheckpointError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(if bytes.len() < 4 && MAGIC.starts_with(bytes) {
            CheckpointError::Truncated
        } else {
            CheckpointError::BadMagic
        });
    }
    let mut head = Cursor { buf: bytes, pos: 4 };
    let version = head.u32()?;
    if version != VERSION {
        return Err(CheckpointError::Version { found: version, expected: VERSION });
    }
    if bytes.len() < 16 {
        return Err(CheckpointError::Truncated);
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    let mut c = Cursor { buf: body, pos: 8 };
    let parsed = (|| {
        let count = c.u32()? as usize;
        let mut records = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = c.u32()? as usize;
            let name = std::str::from_utf8(c.take(len)?).map_err(|_| CheckpointError::BadName)?.to_string();
            let rank = c.u32()? as usize;
            let shape = (0..rank).map(|_| c.u32().map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
            let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or(CheckpointError::Truncated)?;
            let raw = c.take(n.checked_mul(4).ok_or(CheckpointError::Truncated)?)?;
            let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect();
            records.push(Record { name, shape, data });
        }
        if c.pos != body.len() {
            return Err(CheckpointError::Truncated);
        }
        Ok(records)
    })();
    match parsed {
        Err(CheckpointError::Truncated) => Err(CheckpointError::Truncated),
        _ if stored != computed => Err(CheckpointError::Crc { stored, computed }),
        p => p,
    }
}

fn to_f32(v: &[Float]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

pub fn records_of(model: &Model) -> Vec<Record> {
    let cfg = model.config.to_vec();
    let mut out = vec![Record { name: CONFIG_TENSOR.into(), shape: vec![cfg.len()], data: to_f32(&cfg) }];
    for (_, p) in model.store.iter() {
        out.push(Record { name: p.name.clone(), shape: p.shape.clone(), data: to_f32(p.data()) });
    }
    out
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, encode(&records_of(model))).map_err(|e| Error::io(path, e))
}

/// Copy records into `store`; every store tensor must be present with its
/// exact shape, and no record may be unknown.
pub fn load_into(store: &mut ParamStore, records: &[Record]) -> std::result::Result<(), CheckpointError> {
    let unknown: Vec<String> = records
        .iter()
        .filter(|r| r.name != CONFIG_TENSOR && store.find(&r.name).is_none())
        .map(|r| r.name.clone())
        .collect();
    if !unknown.is_empty() {
        return Err(CheckpointError::UnknownTensors(unknown));
    }
    let missing: Vec<String> = store
        .iter()
        .filter(|(_, p)| !records.iter().any(|r| r.name == p.name))
        .map(|(_, p)| p.name.clone())
        .collect();
    if !missing.is_empty() {
        return Err(CheckpointError::MissingTensors(missing));
    }
    for r in records.iter().filter(|r| r.name != CONFIG_TENSOR) {
        let id = store.find(&r.name).expect("checked above");
        let p = store.get(id);
        if p.shape != r.shape {
            return Err(CheckpointError::ShapeMismatch { name: r.name.clone(), found: r.shape.clone(), expected: p.shape.clone() });
        }
    }
    for r in records.iter().filter(|r| r.name != CONFIG_TENSOR) {
        let id = store.find(&r.name).expect("checked above");
        let dst = store.get_mut(id).data_mut();
        for (d, &s) in dst.iter_mut().zip(&r.data) {
            *d = s as Float;
        }
    }
    Ok(())
}

fn read(path: &Path) -> Result<Vec<Record>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|kind| Error::Checkpoint { path: path.to_path_buf(), kind })
}

/// Overwrite `model`'s parameters from `path`.
pub fn load_weights(model: &mut Model, path: &Path) -> Result<()> {
    let records = read(path)?;
    load_into(&mut model.store, &records).map_err(|kind| Error::Checkpoint { path: path.to_path_buf(), kind })
}

/// Rebuild the model described by the checkpoint and load its weights.
pub fn load(path: &Path) -> Result<Model> {
    let records = read(path)?;
    let cfg = records
        .iter()
        .find(|r| r.name == CONFIG_TENSOR)
        .ok_or_else(|| Error::Checkpoint { path: path.to_path_buf(), kind: CheckpointError::MissingTensors(vec![CONFIG_TENSOR.into()]) })?;
    let values: Vec<Float> = cfg.data.iter().map(|&v| v as Float).collect();
    let config = ModelConfig::from_vec(&values)?;
    let mut model = Model::new(config, 0)?;
    load_into(&mut model.store, &records).map_err(|kind| Error::Checkpoint { path: path.to_path_buf(), kind })?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Model {
        Model::new(ModelConfig::desk(), 9).unwrap()
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
        let m = small();
        save(&m, &a).unwrap();
        let back = load(&a).unwrap();
        save(&back, &b).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        assert_eq!(back.config, m.config);
        for ((_, p), (_, q)) in m.store.iter().zip(back.store.iter()) {
            assert!(p.data().iter().zip(q.data()).all(|(x, y)| (*x as f32) as Float == *y));
        }
    }

    #[test]
    fn corruption_is_reported_distinctly() {
        let m = small();
        let bytes = encode(&records_of(&m));
        let mut flipped = bytes.clone();
        flipped[bytes.len() / 2] ^= 0x10;
        assert!(matches!(decode(&flipped), Err(CheckpointError::Crc { .. })));
        assert_eq!(decode(&bytes[..bytes.len() - 9]), Err(CheckpointError::Truncated));
        assert_eq!(decode(&bytes[..2]), Err(CheckpointError::Truncated));
        let mut v = bytes.clone();
        v[4] = 7;
        assert_eq!(decode(&v), Err(CheckpointError::Version { found: 7, expected: VERSION }));
        let mut magic = bytes;
        magic[0] = b'X';
        assert_eq!(decode(&magic), Err(CheckpointError::BadMagic));
    }

    #[test]
    fn shape_and_name_checks() {
        let m = small();
        let mut records = records_of(&m);
        let mut other = Model::new(ModelConfig { tdn: crate::tdn::TdnConfig { fc: 32 }, ..ModelConfig::desk() }, 0).unwrap();
        match load_into(&mut other.store, &records) {
            Err(CheckpointError::ShapeMismatch { name, .. }) => assert!(name.starts_with("tdn."), "{name}"),
            e => panic!("{e:?}"),
        }
        records.push(Record { name: "extra.w".into(), shape: vec![1], data: vec![0.0] });
        let mut store = m.store.clone();
        assert_eq!(load_into(&mut store, &records), Err(CheckpointError::UnknownTensors(vec!["extra.w".into()])));
        records.pop();
        records.remove(1);
        assert!(matches!(load_into(&mut store, &records), Err(CheckpointError::MissingTensors(_))));
    }
}
