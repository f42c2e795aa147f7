//! Binary checkpoint archive. Layout, little-endian throughout:
//!
//! ```text
//! magic "LDCK" | version u32 | config_len u32 | config JSON
//! tensor_count u64
//! per tensor: name_len u16 | name | ndim u8 | dims u32 each | f32 payload
//! ```
//!
//! Tensors are stored in the model's canonical visit order under the
//! prefixes `student.`, `teacher.`, `pool.`, `adapter.`. Values are cast
//! to f32 on save, so a save/load/save cycle is byte-identical and a
//! freshly initialized model (whose draws are f32-snapped) round-trips
//! exactly in memory too.

use super::params::{collect, Params};
use super::{ModelPair, NetworkConfig, NetworkError};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LDCK";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn checkpoint_bytes(model: &ModelPair) -> Result<Vec<u8>, NetworkError> {
    let config_json = serde_json::to_vec(&model.config)?;
    let tensors = collect(model, "");
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(config_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&config_json);
    out.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
    for (name, view) in &tensors {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(view.ndim() as u8);
        for &d in view.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in view.iter() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_checkpoint(model: &ModelPair, path: &Path) -> Result<(), NetworkError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let bytes = checkpoint_bytes(model)?;
    let mut file = std::fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], NetworkError> {
        if self.at + n > self.buf.len() {
            return Err(NetworkError::Truncated {
                what: format!(
                    "{what} needs {n} bytes, {} remain",
                    self.buf.len() - self.at
                ),
            });
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16, NetworkError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32, NetworkError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, NetworkError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn checkpoint_from_bytes(buf: &[u8]) -> Result<ModelPair, NetworkError> {
    let mut r = Reader { buf, at: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(NetworkError::BadMagic);
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(NetworkError::BadVersion(version));
    }
    let config_len = r.u32("config length")? as usize;
    let config: NetworkConfig = serde_json::from_slice(r.take(config_len, "config JSON")?)?;
    config.validate()?;
    let count = r.u64("tensor count")? as usize;

    let mut stored: BTreeMap<String, (Vec<usize>, Vec<f64>)> = BTreeMap::new();
    for i in 0..count {
        let name_len = r.u16(&format!("tensor {i} name length"))? as usize;
        let name = std::str::from_utf8(r.take(name_len, &format!("tensor {i} name"))?)
            .map_err(|_| NetworkError::Truncated {
                what: format!("tensor {i} name is not UTF-8"),
            })?
            .to_string();
        let ndim = r.take(1, &format!("tensor {name} ndim"))?[0] as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(r.u32(&format!("tensor {name} dims"))? as usize);
        }
        let len: usize = dims.iter().product();
        let payload = r.take(len * 4, &format!("tensor {name} payload"))?;
        let values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        stored.insert(name, (dims, values));
    }
    if r.at != buf.len() {
        return Err(NetworkError::TrailingBytes(buf.len() - r.at));
    }

    let mut model = ModelPair::zeroed(&config)?;
    let mut views = Vec::new();
    model.visit_mut("", &mut views);
    for (name, view) in views.iter_mut() {
        let (dims, values) = stored
            .remove(name)
            .ok_or_else(|| NetworkError::MissingTensor(name.clone()))?;
        if dims != view.shape() {
            return Err(NetworkError::TensorShape {
                name: name.clone(),
                got: dims,
                want: view.shape().to_vec(),
            });
        }
        for (slot, v) in view.iter_mut().zip(values) {
            *slot = v;
        }
    }
    if let Some((name, _)) = stored.into_iter().next() {
        return Err(NetworkError::UnknownTensor(name));
    }
    Ok(model)
}

pub fn load_checkpoint(path: &Path) -> Result<ModelPair, NetworkError> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    checkpoint_from_bytes(&buf)
}
