use super::TrainError;
use crate::numeric::{Element, ParamStore, Tensor};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"EBDS";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Serializes every parameter and buffer in store order as 32-bit floats.
pub fn encode_checkpoint<T: Element>(store: &ParamStore<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u64).to_le_bytes());
    for (_, p) in store.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.rank() as u32).to_le_bytes());
        for &d in p.value.dims() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], (usize, String)> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err((self.pos, format!("truncated while reading {what}"))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32, (usize, String)> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, (usize, String)> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Parses a checkpoint into named tensors. Errors carry the byte offset.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<(String, Tensor<f32>)>, (usize, String)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err((0, "bad magic".into()));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err((4, format!("unsupported version {version}")));
    }
    let count = r.u64("tensor count")?;
    let mut out = Vec::new();
    for _ in 0..count {
        let at = r.pos;
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| (at + 4, "name is not UTF-8".to_string()))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        let mut dims = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            dims.push(r.u64("dims")? as usize);
        }
        let n = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or((r.pos, format!("tensor {name} is too large")))?;
        let data = r
            .take(n, "tensor data")?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(&dims, data).map_err(|e| (at, e.to_string()))?;
        out.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err((r.pos, "trailing bytes".into()));
    }
    Ok(out)
}

pub fn save_checkpoint<T: Element>(store: &ParamStore<T>, path: &Path) -> Result<(), TrainError> {
    std::fs::write(path, encode_checkpoint(store)).map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, Tensor<f32>)>, TrainError> {
    let bytes = std::fs::read(path).map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_checkpoint(&bytes).map_err(|(offset, reason)| TrainError::Checkpoint {
        path: path.to_path_buf(),
        offset,
        reason,
    })
}

/// Copies checkpoint tensors into a store with exactly the same names and
/// shapes.
pub fn restore<T: Element>(store: &mut ParamStore<T>, entries: &[(String, Tensor<f32>)]) -> Result<(), TrainError> {
    if entries.len() != store.len() {
        return Err(TrainError::Config(format!(
            "checkpoint has {} tensors, model expects {}",
            entries.len(),
            store.len()
        )));
    }
    for (name, t) in entries {
        let id = store
            .id(name)
            .ok_or_else(|| TrainError::Config(format!("checkpoint tensor {name} is not a model parameter")))?;
        if store.value(id).dims() != t.dims() {
            return Err(TrainError::Config(format!(
                "checkpoint tensor {name} has dims {:?}, model expects {:?}",
                t.dims(),
                store.value(id).dims()
            )));
        }
        store.set_value(id, t.cast())?;
    }
    Ok(())
}
