//! Manifest files: a JSON descriptor plus patch payloads, either one PNG per
//! patch or a single packed `PSC1` file.
//!
//! `PSC1` layout, all little-endian: magic `PSC1`, then `u32` count, height,
//! width and channels, then `count·h·w·c` `f32` values in record order with
//! pixels interleaved.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use protonet_core::dataset::{
    ChannelStats, ClassKey, DatasetManifest, ImageView, PatchRecord, Pixels, Split, View, CHANNELS,
};

use crate::error::{io, json, Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PATCH_DIR: &str = "patches";
pub const PACKED_FILE: &str = "patches.psc1";
const FORMAT: &str = "protonet-manifest/1";
const PSC1_MAGIC: &[u8; 4] = b"PSC1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Payload {
    Png,
    Psc1,
}

impl std::str::FromStr for Payload {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "png" => Ok(Payload::Png),
            "psc1" | "packed" => Ok(Payload::Psc1),
            _ => Err(Error::Invalid(format!("unknown payload format `{s}`"))),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    format: String,
    view: View,
    seed: u64,
    split_id: String,
    channel_stats: ChannelStats,
    patch_size: usize,
    payload: Payload,
    records: Vec<RecordEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordEntry {
    patch_id: String,
    source_image_id: String,
    class: ClassKey,
    view: ImageView,
    split: Split,
    origin: [usize; 2],
}

/// A packed patch file.
#[derive(Debug, Clone, PartialEq)]
pub struct Packed {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Packed {
    pub fn item_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn item(&self, i: usize) -> &[f32] {
        let n = self.item_len();
        &self.data[i * n..(i + 1) * n]
    }
}

pub fn write_psc1(path: &Path, packed: &Packed) -> Result<()> {
    if packed.data.len() != packed.count * packed.item_len() {
        return Err(Error::format(path, "packed data length does not match the header"));
    }
    let mut w = BufWriter::new(fs::File::create(path).map_err(io(path))?);
    w.write_all(PSC1_MAGIC).map_err(io(path))?;
    for v in [packed.count, packed.height, packed.width, packed.channels] {
        let v = u32::try_from(v).map_err(|_| Error::format(path, "dimension exceeds u32"))?;
        w.write_all(&v.to_le_bytes()).map_err(io(path))?;
    }
    for v in &packed.data {
        w.write_all(&v.to_le_bytes()).map_err(io(path))?;
    }
    w.flush().map_err(io(path))
}

pub fn read_psc1(path: &Path) -> Result<Packed> {
    let mut bytes = Vec::new();
    fs::File::open(path).map_err(io(path))?.read_to_end(&mut bytes).map_err(io(path))?;
    if bytes.len() < 20 || &bytes[..4] != PSC1_MAGIC {
        return Err(Error::format(path, "not a PSC1 file"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (count, height, width, channels) = (word(0), word(1), word(2), word(3));
    let n = count * height * width * channels;
    let body = &bytes[20..];
    if body.len() != n * 4 {
        return Err(Error::format(path, format!("expected {n} values, file holds {} bytes", body.len())));
    }
    let data = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(Packed {
        count,
        height,
        width,
        channels,
        data,
    })
}

fn raw(record: &PatchRecord) -> Result<&[u8]> {
    match &record.pixels {
        Pixels::Raw(p) => Ok(p),
        Pixels::Standardized(_) => Err(Error::Invalid(format!(
            "patch {} is standardized; manifests store raw pixels",
            record.patch_id
        ))),
    }
}

fn patch_file(dir: &Path, patch_id: &str) -> Result<PathBuf> {
    if patch_id.is_empty() || patch_id.contains(['/', '\\']) || patch_id.starts_with('.') {
        return Err(Error::Invalid(format!("patch id `{patch_id}` is not usable as a file name")));
    }
    Ok(dir.join(PATCH_DIR).join(format!("{patch_id}.png")))
}

/// Writes `manifest` into `dir` and returns the descriptor path.
pub fn write_manifest(dir: &Path, manifest: &DatasetManifest, payload: Payload) -> Result<PathBuf> {
    let size = manifest.patch_size().ok_or_else(|| Error::Invalid("manifest has no records".into()))?;
    if let Some(r) = manifest.records.iter().find(|r| r.size != size) {
        return Err(Error::Invalid(format!("patch {} is {}px, expected {size}px", r.patch_id, r.size)));
    }
    fs::create_dir_all(dir).map_err(io(dir))?;
    match payload {
        Payload::Png => {
            let patches = dir.join(PATCH_DIR);
            fs::create_dir_all(&patches).map_err(io(&patches))?;
            for r in &manifest.records {
                let path = patch_file(dir, &r.patch_id)?;
                image::save_buffer(&path, raw(r)?, size as u32, size as u32, image::ColorType::Rgb8)
                    .map_err(|source| Error::Image { path, source })?;
            }
        }
        Payload::Psc1 => {
            let mut data = Vec::with_capacity(manifest.len() * size * size * CHANNELS);
            for r in &manifest.records {
                data.extend(raw(r)?.iter().map(|&v| f32::from(v)));
            }
            let packed = Packed {
                count: manifest.len(),
                height: size,
                width: size,
                channels: CHANNELS,
                data,
            };
            write_psc1(&dir.join(PACKED_FILE), &packed)?;
        }
    }
    let file = ManifestFile {
        format: FORMAT.into(),
        view: manifest.view,
        seed: manifest.seed,
        split_id: manifest.split_id.clone(),
        channel_stats: manifest.channel_stats.clone(),
        patch_size: size,
        payload,
        records: manifest
            .records
            .iter()
            .map(|r| RecordEntry {
                patch_id: r.patch_id.clone(),
                source_image_id: r.source_image_id.clone(),
                class: r.class_key,
                view: r.view,
                split: manifest.split[&r.patch_id],
                origin: [r.origin.0, r.origin.1],
            })
            .collect(),
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&file).map_err(json(&path))?;
    fs::write(&path, text).map_err(io(&path))?;
    Ok(path)
}

fn to_u8(path: &Path, v: f32) -> Result<u8> {
    if v.fract() == 0.0 && (0.0..=255.0).contains(&v) {
        Ok(v as u8)
    } else {
        Err(Error::format(path, format!("packed value {v} is not an 8-bit pixel")))
    }
}

/// Reads a manifest from its directory or its descriptor file.
pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let (dir, descriptor) = if path.is_dir() {
        (path.to_path_buf(), path.join(MANIFEST_FILE))
    } else {
        (path.parent().unwrap_or(Path::new(".")).to_path_buf(), path.to_path_buf())
    };
    let text = fs::read_to_string(&descriptor).map_err(io(&descriptor))?;
    let file: ManifestFile = serde_json::from_str(&text).map_err(json(&descriptor))?;
    if file.format != FORMAT {
        return Err(Error::format(&descriptor, format!("unsupported format `{}`", file.format)));
    }
    let size = file.patch_size;
    let item = size * size * CHANNELS;
    let packed = match file.payload {
        Payload::Psc1 => {
            let p_path = dir.join(PACKED_FILE);
            let p = read_psc1(&p_path)?;
            if p.count != file.records.len() || p.height != size || p.width != size || p.channels != CHANNELS {
                return Err(Error::format(&p_path, "packed header does not match the manifest"));
            }
            Some((p_path, p))
        }
        Payload::Png => None,
    };

    let mut records = Vec::with_capacity(file.records.len());
    let mut split = BTreeMap::new();
    for (i, e) in file.records.into_iter().enumerate() {
        let pixels = match &packed {
            Some((p_path, p)) => p.item(i).iter().map(|&v| to_u8(p_path, v)).collect::<Result<Vec<u8>>>()?,
            None => {
                let png = patch_file(&dir, &e.patch_id)?;
                let img = image::open(&png)
                    .map_err(|source| Error::Image {
                        path: png.clone(),
                        source,
                    })?
                    .to_rgb8();
                if img.dimensions() != (size as u32, size as u32) {
                    return Err(Error::format(&png, format!("expected a {size}x{size} patch")));
                }
                img.into_raw()
            }
        };
        debug_assert_eq!(pixels.len(), item);
        if split.insert(e.patch_id.clone(), e.split).is_some() {
            return Err(protonet_core::Error::DuplicatePatchId(e.patch_id).into());
        }
        records.push(PatchRecord {
            patch_id: e.patch_id,
            source_image_id: e.source_image_id,
            class_key: e.class,
            view: e.view,
            origin: (e.origin[0], e.origin[1]),
            size,
            pixels: Pixels::Raw(pixels),
        });
    }
    Ok(DatasetManifest::new(
        file.view,
        records,
        split,
        file.split_id,
        file.channel_stats,
        file.seed,
    )?)
}

/// Debug listing of episodes: one JSON object per line with the patch ids
/// of every role.
pub fn write_episode_dump(
    path: &Path,
    episodes: &[protonet_core::episode::Episode],
    manifest: &DatasetManifest,
) -> Result<()> {
    #[derive(Serialize)]
    struct Item<'a> {
        patch_id: &'a str,
        label: usize,
    }
    #[derive(Serialize)]
    struct Line<'a> {
        index: u64,
        classes: &'a [ClassKey],
        support: Vec<Item<'a>>,
        query: Vec<Item<'a>>,
    }
    let items = |v: &[protonet_core::episode::EpisodeItem]| -> Vec<Item<'_>> {
        v.iter()
            .map(|i| Item {
                patch_id: &manifest.records[i.record].patch_id,
                label: i.label,
            })
            .collect()
    };
    let mut w = BufWriter::new(fs::File::create(path).map_err(io(path))?);
    for e in episodes {
        if let Some(bad) = e.support.iter().chain(&e.query).find(|i| i.record >= manifest.len()) {
            return Err(protonet_core::Error::UnknownPatch(format!("#{}", bad.record)).into());
        }
        let line = Line {
            index: e.index,
            classes: &e.classes,
            support: items(&e.support),
            query: items(&e.query),
        };
        serde_json::to_writer(&mut w, &line).map_err(json(path))?;
        w.write_all(b"\n").map_err(io(path))?;
    }
    w.flush().map_err(io(path))
}
