//! Parameter checkpoints.
//!
//! Layout: one line of JSON (the header) terminated by `\n`, followed by the
//! raw little-endian `f32` payload of every tensor in header order. Each
//! header entry records the tensor name, shape and byte offset into the
//! payload. The header also carries free-form metadata (model config,
//! vocabulary, calibrated threshold).

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{DmnError, Result};

const FORMAT: &str = "dmn-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    #[serde(default)]
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore, meta: serde_json::Value) -> Self {
        let tensors = store
            .ids()
            .map(|id| {
                let t = store.get(id);
                (store.name(id).to_string(), Tensor::from_parts(t.shape().to_vec(), t.data().to_vec()))
            })
            .collect();
        Checkpoint { meta, tensors }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0u64;
        let entries = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let e = TensorEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    offset,
                };
                offset += 4 * t.len() as u64;
                e
            })
            .collect();
        let header = Header {
            format: FORMAT.to_string(),
            version: VERSION,
            meta: self.meta.clone(),
            tensors: entries,
        };
        let mut out = serde_json::to_vec(&header).expect("header serializes");
        out.push(b'\n');
        for (_, t) in &self.tensors {
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_reader(reader: impl Read, origin: &Path) -> Result<Self> {
        let mut reader = BufReader::new(reader);
        let mut line = Vec::new();
        reader
            .read_until(b'\n', &mut line)
            .map_err(|e| DmnError::io(origin, e))?;
        if line.last() != Some(&b'\n') {
            return Err(DmnError::format(origin, "checkpoint header is not newline-terminated"));
        }
        let header: Header = serde_json::from_slice(&line[..line.len() - 1])
            .map_err(|e| DmnError::format(origin, format!("bad checkpoint header: {e}")))?;
        if header.format != FORMAT || header.version != VERSION {
            return Err(DmnError::format(
                origin,
                format!("unsupported checkpoint {} v{}", header.format, header.version),
            ));
        }
        let mut payload = Vec::new();
        reader
            .read_to_end(&mut payload)
            .map_err(|e| DmnError::io(origin, e))?;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in header.tensors {
            let n: usize = entry.shape.iter().product();
            let start = entry.offset as usize;
            let end = start + 4 * n;
            if end > payload.len() {
                return Err(DmnError::format(
                    origin,
                    format!("tensor {} extends past the end of the payload", entry.name),
                ));
            }
            let data = payload[start..end]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect();
            let t = Tensor::new(&entry.shape, data)
                .map_err(|e| DmnError::format(origin, format!("tensor {}: {e}", entry.name)))?;
            tensors.push((entry.name, t));
        }
        Ok(Checkpoint {
            meta: header.meta,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| DmnError::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| DmnError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = fs::File::open(path).map_err(|e| DmnError::io(path, e))?;
        Self::from_reader(f, path)
    }

    /// Copies every stored tensor into the same-named parameter of `store`.
    /// Names missing from either side, or differing shapes, are errors.
    pub fn restore_into(&self, store: &mut ParamStore) -> Result<()> {
        let mut problems = Vec::new();
        for (name, t) in &self.tensors {
            match store.id(name) {
                None => problems.push(format!("{name}: not in model")),
                Some(id) if store.get(id).shape() != t.shape() => problems.push(format!(
                    "{name}: checkpoint shape {:?}, model shape {:?}",
                    t.shape(),
                    store.get(id).shape()
                )),
                Some(_) => {}
            }
        }
        for id in store.ids() {
            if !self.tensors.iter().any(|(n, _)| n == store.name(id)) {
                problems.push(format!("{}: missing from checkpoint", store.name(id)));
            }
        }
        if !problems.is_empty() {
            return Err(DmnError::Contract(format!(
                "checkpoint does not match model: {}",
                problems.join("; ")
            )));
        }
        for (name, t) in &self.tensors {
            let id = store.id(name).expect("checked");
            store.get_mut(id).data_mut().copy_from_slice(t.data());
        }
        Ok(())
    }
}
