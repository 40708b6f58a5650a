//! Embedding dumps for an external projection step.
//!
//! Binary layout, little-endian: magic `PSEMB1`, `u32` rows `M`, `u32` width
//! `D`, the view and the config hash as `u16`-length-prefixed UTF-8, `M·D`
//! `f32` values row-major, then `M` label bytes (class index). The text
//! variant has a `#` header line and one `CLASS v1 v2 …` line per row, with
//! shortest round-trip float formatting.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use protonet_core::dataset::{ClassKey, DatasetManifest, PatchSource, Split, View};
use protonet_core::metrics::EmbeddingDump;
use protonet_core::nn::{Encoder, Tensor};
use protonet_core::proto::patch_batch;
use protonet_core::Real;

use crate::error::{io, Error, Result};

const MAGIC: &[u8; 6] = b"PSEMB1";
const BATCH: usize = 32;

/// Eval-mode embeddings of every patch in `split` (all patches if `None`).
pub fn project<T: Real>(
    encoder: &Encoder<T>,
    manifest: &DatasetManifest,
    split: Option<Split>,
    config_hash: &str,
) -> Result<EmbeddingDump> {
    let records: Vec<usize> = (0..manifest.len())
        .filter(|&i| split.is_none_or(|s| manifest.split_of(i) == s))
        .collect();
    let mut vectors = Vec::with_capacity(records.len() * encoder.dim);
    for chunk in records.chunks(BATCH) {
        let input: Tensor<T> = patch_batch(manifest, chunk)?;
        vectors.extend(encoder.forward(&input).data.iter().map(|v| v.as_f64() as f32));
    }
    let labels = records.iter().map(|&i| manifest.class_of(i)).collect();
    Ok(EmbeddingDump::new(encoder.dim, vectors, labels, manifest.view, config_hash.to_string())?)
}

fn short_str(path: &Path, s: &str) -> Result<[u8; 2]> {
    u16::try_from(s.len())
        .map(u16::to_le_bytes)
        .map_err(|_| Error::format(path, "header string too long"))
}

pub fn write_psemb(path: &Path, dump: &EmbeddingDump) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path).map_err(io(path))?);
    let mut put = |b: &[u8]| w.write_all(b).map_err(io(path));
    put(MAGIC)?;
    put(&(dump.rows() as u32).to_le_bytes())?;
    put(&(dump.dim as u32).to_le_bytes())?;
    for s in [dump.view.as_str(), dump.config_hash.as_str()] {
        put(&short_str(path, s)?)?;
        put(s.as_bytes())?;
    }
    for v in &dump.vectors {
        put(&v.to_le_bytes())?;
    }
    let labels: Vec<u8> = dump.labels.iter().map(|c| c.index() as u8).collect();
    put(&labels)?;
    w.flush().map_err(io(path))
}

pub fn read_psemb(path: &Path) -> Result<EmbeddingDump> {
    let bytes = fs::read(path).map_err(io(path))?;
    let mut pos = 0;
    let mut take = |n: usize| -> Result<&[u8]> {
        let out = bytes
            .get(pos..pos + n)
            .ok_or_else(|| Error::format(path, "truncated embedding dump"))?;
        pos += n;
        Ok(out)
    };
    if take(6)? != MAGIC {
        return Err(Error::format(path, "not a PSEMB1 file"));
    }
    let rows = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let mut strings = Vec::with_capacity(2);
    for _ in 0..2 {
        let len = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
        let s = std::str::from_utf8(take(len)?).map_err(|_| Error::format(path, "header is not UTF-8"))?;
        strings.push(s.to_string());
    }
    let vectors = take(rows * dim * 4)?
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let labels = take(rows)?
        .iter()
        .map(|&b| ClassKey::from_index(b as usize).ok_or_else(|| Error::format(path, format!("bad label byte {b}"))))
        .collect::<Result<Vec<_>>>()?;
    if pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after the labels"));
    }
    let view: View = strings[0].parse()?;
    Ok(EmbeddingDump::new(dim, vectors, labels, view, strings.swap_remove(1))?)
}

pub fn write_psemb_text(path: &Path, dump: &EmbeddingDump) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path).map_err(io(path))?);
    let mut out = format!(
        "# PSEMB1 view={} config_hash={} rows={} dim={}\n",
        dump.view,
        dump.config_hash,
        dump.rows(),
        dump.dim
    );
    for i in 0..dump.rows() {
        out.push_str(dump.labels[i].as_str());
        for v in dump.row(i) {
            out.push(' ');
            out.push_str(&v.to_string());
        }
        out.push('\n');
        w.write_all(out.as_bytes()).map_err(io(path))?;
        out.clear();
    }
    w.write_all(out.as_bytes()).map_err(io(path))?;
    w.flush().map_err(io(path))
}

pub fn read_psemb_text(path: &Path) -> Result<EmbeddingDump> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .and_then(|h| h.strip_prefix("# PSEMB1 "))
        .ok_or_else(|| Error::format(path, "missing PSEMB1 header"))?;
    let field = |key: &str| -> Result<&str> {
        header
            .split_whitespace()
            .find_map(|kv| kv.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
            .ok_or_else(|| Error::format(path, format!("header lacks `{key}`")))
    };
    let parse_n = |key: &str| -> Result<usize> {
        field(key)?
            .parse()
            .map_err(|_| Error::format(path, format!("bad `{key}` in header")))
    };
    let (rows, dim) = (parse_n("rows")?, parse_n("dim")?);
    let view: View = field("view")?.parse()?;
    let config_hash = field("config_hash")?.to_string();
    let mut vectors = Vec::with_capacity(rows * dim);
    let mut labels = Vec::with_capacity(rows);
    for (n, line) in lines.enumerate() {
        let mut parts = line.split_whitespace();
        let class: ClassKey = parts
            .next()
            .ok_or_else(|| Error::format(path, format!("empty row {n}")))?
            .parse()?;
        let before = vectors.len();
        for p in parts {
            vectors.push(p.parse::<f32>().map_err(|_| Error::format(path, format!("bad value `{p}` in row {n}")))?);
        }
        if vectors.len() - before != dim {
            return Err(Error::format(path, format!("row {n} has {} values, expected {dim}", vectors.len() - before)));
        }
        labels.push(class);
    }
    if labels.len() != rows {
        return Err(Error::format(path, format!("header says {rows} rows, found {}", labels.len())));
    }
    Ok(EmbeddingDump::new(dim, vectors, labels, view, config_hash)?)
}
