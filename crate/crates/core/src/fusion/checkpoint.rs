//! Checkpoint container, little-endian:
//!
//! ```text
//! magic "MMCK" | version u8 | config_len u32 | config text (canonical key=value)
//! n_tensors u32 | per tensor: name_len u32 | name | rank u32 | dims u32[rank] | f32[numel]
//! ```
//!
//! Tensors appear in parameter-store order. Loading rebuilds the layout from
//! the config block and requires names and shapes to match it exactly.

use std::fs;
use std::path::Path;

use super::{Approach, FusionModel, ModelConfig};
use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"MMCK";
pub const CHECKPOINT_VERSION: u8 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::contract(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn config_block(model: &FusionModel<f32>) -> KeyValues {
    let mut kv = KeyValues::new();
    kv.set("approach", model.approach);
    model.config.to_kv(&mut kv);
    kv
}

pub fn encode_checkpoint(model: &FusionModel<f32>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.push(CHECKPOINT_VERSION);
    let config = config_block(model).to_canonical();
    put_u32(&mut out, config.len())?;
    out.extend_from_slice(config.as_bytes());
    put_u32(&mut out, model.store.len())?;
    for (name, tensor) in model.store.iter() {
        put_u32(&mut out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, tensor.rank())?;
        for &d in tensor.shape() {
            put_u32(&mut out, d)?;
        }
        for v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_checkpoint(model: &FusionModel<f32>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_checkpoint(model)?)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.offset < n {
            return Err(Error::Length {
                offset: self.bytes.len() as u64,
                context: format!(
                    "checkpoint {what} needs {n} bytes at offset {}",
                    self.offset
                ),
            });
        }
        let out = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<FusionModel<f32>> {
    let mut c = Cursor { bytes, offset: 0 };
    if c.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::format("not a checkpoint (bad magic)"));
    }
    let version = c.take(1, "version")?[0];
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(format!(
            "unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let config_len = c.u32("config length")?;
    let text = std::str::from_utf8(c.take(config_len, "config")?)
        .map_err(|_| Error::format("checkpoint config is not UTF-8"))?;
    let kv =
        KeyValues::parse(text).map_err(|e| Error::format(format!("checkpoint config: {e}")))?;
    let mut allowed = ModelConfig::KEYS.to_vec();
    allowed.push("approach");
    kv.reject_unknown(&allowed)
        .map_err(|e| Error::format(format!("checkpoint config: {e}")))?;
    let approach: Approach = kv
        .require::<String>("approach")
        .and_then(|s| s.parse())
        .map_err(|e| Error::format(format!("checkpoint config: {e}")))?;
    let config =
        ModelConfig::from_kv(&kv).map_err(|e| Error::format(format!("checkpoint config: {e}")))?;
    let mut model = FusionModel::<f32>::new(config, approach, 0)?;

    let n = c.u32("tensor count")?;
    if n != model.store.len() {
        return Err(Error::format(format!(
            "checkpoint holds {n} tensors, {approach} layout has {}",
            model.store.len()
        )));
    }
    let ids: Vec<_> = (0..n)
        .map(|i| {
            model
                .store
                .find(model.store.iter().nth(i).unwrap().0)
                .unwrap()
        })
        .collect();
    for id in ids {
        let name_len = c.u32("tensor name length")?;
        let name = std::str::from_utf8(c.take(name_len, "tensor name")?)
            .map_err(|_| Error::format("tensor name is not UTF-8"))?;
        if name != model.store.name(id) {
            return Err(Error::format(format!(
                "expected tensor {:?}, found {name:?}",
                model.store.name(id)
            )));
        }
        let rank = c.u32("tensor rank")?;
        let shape = (0..rank)
            .map(|_| c.u32("tensor shape"))
            .collect::<Result<Vec<_>>>()?;
        if shape != model.store.get(id).shape() {
            return Err(Error::format(format!(
                "tensor {name:?} has shape {shape:?}, layout expects {:?}",
                model.store.get(id).shape()
            )));
        }
        let numel: usize = shape.iter().product();
        let raw = c.take(4 * numel, "tensor data")?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let tensor = Tensor::new(shape, data)?;
        if !tensor.all_finite() {
            return Err(Error::format(format!(
                "tensor {name:?} holds non-finite values"
            )));
        }
        model.store.assign(id, &tensor)?;
    }
    if c.offset != bytes.len() {
        return Err(Error::format("trailing bytes after checkpoint tensors"));
    }
    Ok(model)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<FusionModel<f32>> {
    decode_checkpoint(&fs::read(path)?)
}
