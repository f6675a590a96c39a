//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "DRAC" | u32 version | u32 config length | config JSON
//! u32 tensor count
//! per tensor: u32 name length | name | u8 dtype | u32 rank | u64 extents[rank] | u64 offset
//! raw tensor data, offsets relative to the start of this section
//! ```

use std::io::Write;
use std::path::Path;

use crate::dit::{Dit, ModelConfig};
use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"DRAC";
pub const VERSION: u32 = 1;

pub fn encode_checkpoint<T: Scalar>(params: &ParamStore<T>, config: &ModelConfig) -> Result<Vec<u8>> {
    let cfg = serde_json::to_vec(config)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(&cfg);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    let mut offset = 0u64;
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(T::DTYPE_CODE);
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &e in t.shape() {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        out.extend_from_slice(&offset.to_le_bytes());
        offset += (t.len() * std::mem::size_of::<T>()) as u64;
    }
    for (_, t) in params.iter() {
        out.extend_from_slice(&T::to_le_bytes_vec(t.data()));
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format("checkpoint is truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint<T: Scalar>(buf: &[u8]) -> Result<(ModelConfig, ParamStore<T>)> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "checkpoint version {version}, expected {VERSION}"
        )));
    }
    let n = r.u32()? as usize;
    let config: ModelConfig =
        serde_json::from_slice(r.take(n)?).map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
    let count = r.u32()? as usize;
    let mut table = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let dtype = r.take(1)?[0];
        if dtype != T::DTYPE_CODE {
            return Err(Error::Format(format!(
                "tensor `{name}` has dtype code {dtype}, expected {}",
                T::DTYPE_CODE
            )));
        }
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|e| e as usize))
            .collect::<Result<Vec<_>>>()?;
        let offset = r.u64()? as usize;
        table.push((name, shape, offset));
    }
    let data = &buf[r.pos..];
    let size = std::mem::size_of::<T>();
    let mut params = ParamStore::new();
    for (name, shape, offset) in table {
        let bytes = shape.iter().product::<usize>() * size;
        let chunk = offset
            .checked_add(bytes)
            .and_then(|end| data.get(offset..end))
            .ok_or_else(|| Error::Format(format!("checkpoint is truncated in tensor `{name}`")))?;
        params.insert(name, Tensor::from_vec(&shape, T::from_le_bytes_slice(chunk))?);
    }
    Ok((config, params))
}

pub fn save_checkpoint<T: Scalar>(model: &Dit<T>, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(&model.params, &model.config)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    std::fs::rename(tmp, path)?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Dit<T>> {
    let bytes = std::fs::read(path)?;
    let (config, params) = decode_checkpoint(&bytes)?;
    let mut model = Dit::new(config, 0)?;
    restore_params(&mut model, &params)?;
    Ok(model)
}

/// Copies `params` into `model`, which must already hold every tensor with
/// the same shape.
pub fn restore_params<T: Scalar>(model: &mut Dit<T>, params: &ParamStore<T>) -> Result<()> {
    for id in 0..model.params.len() {
        let name = model.params.name(id).to_string();
        let src = params
            .get(&name)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor `{name}`")))?;
        let dst = model.params.tensor_mut(id);
        if src.shape() != dst.shape() {
            return Err(Error::Shape {
                name,
                expected: dst.shape().to_vec(),
                found: src.shape().to_vec(),
            });
        }
        *dst = src.clone();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            image_size: 16,
            dim: 32,
            heads: 2,
            layers: 1,
            mlp_hidden: 32,
            lora_rank: 2,
            ..Default::default()
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut m = Dit::<f32>::new(tiny(), 3).unwrap();
        m.randomize(&mut crate::numerics::Rng::new(3, 3), 0.5);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        save_checkpoint(&m, &p).unwrap();
        let back: Dit<f32> = load_checkpoint(&p).unwrap();
        assert_eq!(back.config, m.config);
        for ((na, a), (nb, b)) in m.params.iter().zip(back.params.iter()) {
            assert_eq!(na, nb);
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn corrupt_and_truncated_files() {
        let m = Dit::<f32>::new(tiny(), 0).unwrap();
        let mut bytes = encode_checkpoint(&m.params, &m.config).unwrap();
        assert!(matches!(
            decode_checkpoint::<f32>(&bytes[..bytes.len() - 3]),
            Err(Error::Format(_))
        ));
        let mut v2 = bytes.clone();
        v2[4] = 9;
        assert!(matches!(decode_checkpoint::<f32>(&v2), Err(Error::Format(_))));
        bytes[0] = b'X';
        assert!(matches!(decode_checkpoint::<f32>(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn mismatched_width_names_tensor() {
        let m = Dit::<f32>::new(tiny(), 0).unwrap();
        let mut other = Dit::<f32>::new(ModelConfig { dim: 64, ..tiny() }, 0).unwrap();
        match restore_params(&mut other, &m.params) {
            Err(Error::Shape { name, .. }) => assert_eq!(name, "embed.visual.w"),
            r => panic!("{r:?}"),
        }
    }
}
