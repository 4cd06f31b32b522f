//! Flat binary container of named `f64` arrays behind a JSON header.
//!
//! Layout: magic `SBLABCK1`, header length as `u64` LE, the UTF-8 JSON
//! header, then every array's values as `f64` LE in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::grad::Tensor;
use crate::nets::{DecoderKind, ExtractorSpec, Model, Param};
use crate::Error;

const MAGIC: &[u8; 8] = b"SBLABCK1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset in values (not bytes) from the start of the data section.
    offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    meta: Value,
    arrays: Vec<ArrayEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub meta: Value,
    pub arrays: Vec<(String, Tensor)>,
}

impl Container {
    pub fn new(meta: Value) -> Self {
        Self { meta, arrays: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.arrays.push((name.into(), t));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, Error> {
        let mut offset = 0;
        let entries = self
            .arrays
            .iter()
            .map(|(name, t)| {
                let e = ArrayEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    offset,
                };
                offset += t.len();
                e
            })
            .collect();
        let header = serde_json::to_vec(&Header {
            meta: self.meta.clone(),
            arrays: entries,
        })?;
        let mut out = Vec::with_capacity(16 + header.len() + offset * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, t) in &self.arrays {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &str) -> Result<Self, Error> {
        let fail = |offset: usize, msg: String| Error::Format {
            path: path.to_string(),
            offset: offset as u64,
            msg,
        };
        if bytes.len() < 16 {
            return Err(fail(bytes.len(), "truncated container preamble".into()));
        }
        if &bytes[..8] != MAGIC {
            return Err(fail(0, format!("bad magic {:?}, expected {:?}", &bytes[..8], MAGIC)));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let data_start = 16usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| fail(8, format!("header length {hlen} exceeds file size {}", bytes.len())))?;
        let header: Header =
            serde_json::from_slice(&bytes[16..data_start]).map_err(|e| fail(16, format!("bad header: {e}")))?;
        let data = &bytes[data_start..];
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for e in header.arrays {
            let n: usize = e.shape.iter().product();
            let (lo, hi) = (e.offset * 8, (e.offset + n) * 8);
            if hi > data.len() {
                return Err(fail(data_start + data.len(), format!("array `{}` truncated", e.name)));
            }
            let vals = data[lo..hi]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(e.shape, vals).map_err(|err| fail(data_start + lo, err.to_string()))?;
            arrays.push((e.name, t));
        }
        Ok(Self {
            meta: header.meta,
            arrays,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), Error> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, Error> {
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ModelMeta {
    extractor: ExtractorSpec,
    classes: usize,
    decoder: DecoderKind,
    trainable: Vec<bool>,
    provenance: Vec<String>,
}

/// Serializes a model; `provenance` lists the phases that produced it.
pub fn model_to_container(model: &Model, provenance: &[String]) -> Result<Container, Error> {
    let meta = ModelMeta {
        extractor: model.extractor.spec.clone(),
        classes: model.classes(),
        decoder: model.decoder.kind,
        trainable: model.params().map(|p| p.trainable).collect(),
        provenance: provenance.to_vec(),
    };
    let mut c = Container::new(serde_json::json!({ "kind": "model", "model": meta }));
    for p in model.params() {
        c.push(p.name.clone(), p.value.clone());
    }
    Ok(c)
}

/// Inverse of [`model_to_container`]; returns the model and its provenance.
pub fn model_from_container(c: &Container) -> Result<(Model, Vec<String>), Error> {
    let meta: ModelMeta = serde_json::from_value(
        c.meta
            .get("model")
            .cloned()
            .ok_or_else(|| Error::InvalidInput("container does not hold a model".into()))?,
    )?;
    let mut model = Model::new(&meta.extractor, meta.classes, meta.decoder, 0)?;
    let count = model.params().count();
    if count != c.arrays.len() || meta.trainable.len() != count {
        return Err(Error::InvalidInput(format!(
            "model expects {count} arrays, container has {}",
            c.arrays.len()
        )));
    }
    let fill = |p: &mut Param, (name, t): &(String, Tensor), trainable: bool| -> Result<(), Error> {
        if &p.name != name || p.value.shape() != t.shape() {
            return Err(Error::InvalidInput(format!(
                "array `{name}` {:?} does not match parameter `{}` {:?}",
                t.shape(),
                p.name,
                p.value.shape()
            )));
        }
        p.value = t.clone();
        p.trainable = trainable;
        Ok(())
    };
    let mut i = 0;
    for p in model.extractor.params.iter_mut() {
        fill(p, &c.arrays[i], meta.trainable[i])?;
        i += 1;
    }
    fill(&mut model.head.weight, &c.arrays[i], meta.trainable[i])?;
    i += 1;
    for p in model.decoder.params.iter_mut() {
        fill(p, &c.arrays[i], meta.trainable[i])?;
        i += 1;
    }
    Ok((model, meta.provenance))
}

pub fn save_model(path: &Path, model: &Model, provenance: &[String]) -> Result<(), Error> {
    model_to_container(model, provenance)?.write(path)
}

pub fn load_model(path: &Path) -> Result<(Model, Vec<String>), Error> {
    model_from_container(&Container::read(path)?)
}
