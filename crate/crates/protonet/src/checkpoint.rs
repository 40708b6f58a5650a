//! Model checkpoints: a binary blob of named tensors plus a JSON sidecar.
//!
//! Blob layout, little-endian: magic `PSCK`, `u32` version, `u32` tensor
//! count, then per tensor a `u32` name length, the UTF-8 name, a `u32` rank,
//! `rank` `u32` dims and the `f32` values. Names follow torchvision, so a
//! blob exported from a torchvision state dict loads as pretrained weights.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use protonet_core::baseline::Classifier;
use protonet_core::dataset::ClassKey;
use protonet_core::experiment::{CellModel, ExperimentConfig, Mode};
use protonet_core::nn::{Encoder, EncoderKind, Layer, Param};
use protonet_core::Real;

use crate::error::{io, json, Error, Result};

const MAGIC: &[u8; 4] = b"PSCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub backbone: EncoderKind,
    pub dim: usize,
    pub pretrained: bool,
    pub mode: Mode,
    pub config_hash: String,
    pub step: usize,
    #[serde(default)]
    pub final_loss: Option<f64>,
    /// Output classes of a baseline head.
    #[serde(default)]
    pub classes: Option<Vec<ClassKey>>,
    #[serde(default)]
    pub config: Option<ExperimentConfig>,
    pub artifact_version: String,
}

pub fn write_tensors(path: &Path, tensors: &[NamedTensor]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path).map_err(io(path))?);
    let mut put = |b: &[u8]| w.write_all(b).map_err(io(path));
    let u32_of = |v: usize| u32::try_from(v).map_err(|_| Error::format(path, "size exceeds u32"));
    put(MAGIC)?;
    put(&VERSION.to_le_bytes())?;
    put(&u32_of(tensors.len())?.to_le_bytes())?;
    for t in tensors {
        if t.values.len() != t.shape.iter().product::<usize>() {
            return Err(Error::format(path, format!("tensor {} does not match its shape", t.name)));
        }
        put(&u32_of(t.name.len())?.to_le_bytes())?;
        put(t.name.as_bytes())?;
        put(&u32_of(t.shape.len())?.to_le_bytes())?;
        for &d in &t.shape {
            put(&u32_of(d)?.to_le_bytes())?;
        }
        for v in &t.values {
            put(&v.to_le_bytes())?;
        }
    }
    w.flush().map_err(io(path))
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format(self.path, "truncated checkpoint"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

pub fn read_tensors(path: &Path) -> Result<Vec<NamedTensor>> {
    let bytes = fs::read(path).map_err(io(path))?;
    let mut c = Cursor { path, bytes: &bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::format(path, "not a checkpoint blob"));
    }
    let version = c.u32()?;
    if version != VERSION as usize {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
    }
    let n = c.u32()?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let len = c.u32()?;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| Error::format(path, "tensor name is not UTF-8"))?
            .to_string();
        let rank = c.u32()?;
        let shape = (0..rank).map(|_| c.u32()).collect::<Result<Vec<_>>>()?;
        let count: usize = shape.iter().product();
        let values = c
            .take(count * 4)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        out.push(NamedTensor { name, shape, values });
    }
    if c.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after the last tensor"));
    }
    Ok(out)
}

fn collect<T: Real>(visit: impl FnOnce(&mut dyn FnMut(&str, &Param<T>))) -> Vec<NamedTensor> {
    let mut out = Vec::new();
    visit(&mut |name, p| {
        out.push(NamedTensor {
            name: name.to_string(),
            shape: p.shape.clone(),
            values: p.value.iter().map(|v| v.as_f64() as f32).collect(),
        })
    });
    out
}

/// Blob and sidecar paths for a checkpoint stem.
pub fn checkpoint_paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("bin"), stem.with_extension("json"))
}

/// Saves a trained cell model and returns the blob path.
pub fn save_model<T: Real>(stem: &Path, model: &CellModel<T>, meta: &CheckpointMeta) -> Result<PathBuf> {
    let tensors = match model {
        CellModel::Prototypical(e) => collect(|f| e.visit(f)),
        CellModel::Baseline(c) => collect(|f| c.visit(f)),
    };
    let (blob, sidecar) = checkpoint_paths(stem);
    if let Some(dir) = blob.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io(dir))?;
    }
    write_tensors(&blob, &tensors)?;
    let text = serde_json::to_string_pretty(meta).map_err(json(&sidecar))?;
    fs::write(&sidecar, text).map_err(io(&sidecar))?;
    Ok(blob)
}

fn to_state<T: Real>(tensors: Vec<NamedTensor>) -> BTreeMap<String, Vec<T>> {
    tensors
        .into_iter()
        .map(|t| (t.name, t.values.into_iter().map(|v| T::from_f64(f64::from(v))).collect()))
        .collect()
}

/// Loads a checkpoint written by [`save_model`].
pub fn load_model<T: Real>(stem: &Path) -> Result<(CellModel<T>, CheckpointMeta)> {
    let (blob, sidecar) = checkpoint_paths(stem);
    let text = fs::read_to_string(&sidecar).map_err(io(&sidecar))?;
    let meta: CheckpointMeta = serde_json::from_str(&text).map_err(json(&sidecar))?;
    let mut encoder = Encoder::<T>::new(meta.backbone, 0);
    if encoder.dim != meta.dim {
        return Err(Error::format(&sidecar, format!("{} has D={}, sidecar says {}", meta.backbone, encoder.dim, meta.dim)));
    }
    encoder.pretrained = meta.pretrained;
    let mut rest = to_state::<T>(read_tensors(&blob)?);
    let encoder_names: Vec<String> = encoder.state().into_iter().map(|(n, _, _)| n).collect();
    let own: BTreeMap<String, Vec<T>> = encoder_names
        .iter()
        .filter_map(|n| rest.remove_entry(n))
        .collect();
    encoder.load_state(own)?;
    let model = match meta.mode {
        Mode::Prototypical => CellModel::Prototypical(encoder),
        Mode::Baseline => {
            let classes = meta
                .classes
                .clone()
                .ok_or_else(|| Error::format(&sidecar, "baseline checkpoint lists no classes"))?;
            let mut classifier = Classifier::new(encoder, classes, 0);
            let mut failure = None;
            classifier.head.visit_mut("fc", &mut |name, p| match rest.remove(name) {
                Some(v) if v.len() == p.value.len() => p.value = v,
                _ => failure = Some(name.to_string()),
            });
            if let Some(name) = failure {
                return Err(protonet_core::Error::UnknownParameter(name).into());
            }
            CellModel::Baseline(classifier)
        }
    };
    if let Some(name) = rest.keys().next() {
        return Err(Error::format(&blob, format!("unexpected tensor `{name}`")));
    }
    Ok((model, meta))
}

/// Overwrites `encoder` with weights from a blob keyed by torchvision
/// names and marks it pretrained. Returns the ignored entries (the ImageNet
/// classifier, `num_batches_tracked` counters).
pub fn load_pretrained<T: Real>(encoder: &mut Encoder<T>, blob: &Path) -> Result<Vec<String>> {
    let ignored = encoder.load_state(to_state(read_tensors(blob)?))?;
    encoder.pretrained = true;
    Ok(ignored)
}
