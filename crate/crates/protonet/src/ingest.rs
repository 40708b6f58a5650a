//! Source images on disk, laid out as `<root>/<SUR|SEC>/<class>/<file>`.

use std::fs;
use std::path::{Path, PathBuf};

use protonet_core::dataset::{ClassKey, ImageView, SourceImage};

use crate::error::{io, Error, Result};

#[derive(Debug, Default)]
pub struct Ingested {
    pub images: Vec<SourceImage>,
    /// One entry per skipped file or missing directory.
    pub warnings: Vec<String>,
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io(dir))? {
        out.push(entry.map_err(io(dir))?.path());
    }
    out.sort();
    Ok(out)
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
}

fn decode(path: &Path, class: ClassKey, view: ImageView) -> Result<SourceImage> {
    let rgb = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
    let id = format!("{view}_{class}_{stem}");
    let (w, h) = rgb.dimensions();
    Ok(SourceImage::new(id, class, view, w as usize, h as usize, rgb.into_raw())?)
}

/// Decodes every image of one view, in lexicographic path order. Files that
/// cannot be decoded are skipped with a warning; a directory that is not a
/// class key is an error.
pub fn ingest_images(root: &Path, view: ImageView) -> Result<Ingested> {
    let mut out = Ingested::default();
    let dir = root.join(view.as_str());
    if !dir.is_dir() {
        out.warnings.push(format!("{} does not exist; no images", dir.display()));
        return Ok(out);
    }
    for class_dir in sorted_entries(&dir)? {
        if !class_dir.is_dir() {
            out.warnings.push(format!("skipping stray file {}", class_dir.display()));
            continue;
        }
        let name = class_dir.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let class: ClassKey = name.parse().map_err(|_| Error::UnknownClass(class_dir.clone()))?;
        for file in sorted_entries(&class_dir)? {
            if !file.is_file() {
                continue;
            }
            if !is_image(&file) {
                out.warnings.push(format!("skipping {}: not a png or jpeg file", file.display()));
                continue;
            }
            match decode(&file, class, view) {
                Ok(img) => out.images.push(img),
                Err(e) => out.warnings.push(format!("skipping unreadable image: {e}")),
            }
        }
    }
    if out.images.is_empty() {
        out.warnings.push(format!("no images found under {}", dir.display()));
    }
    Ok(out)
}

/// Writes images as PNG into the layout [`ingest_images`] reads.
pub fn write_images(root: &Path, images: &[SourceImage]) -> Result<Vec<PathBuf>> {
    let mut written = Vec::with_capacity(images.len());
    for img in images {
        let dir = root.join(img.view.as_str()).join(img.class_key.as_str());
        fs::create_dir_all(&dir).map_err(io(&dir))?;
        let path = dir.join(format!("{}.png", img.image_id));
        image::save_buffer(&path, &img.pixels, img.width as u32, img.height as u32, image::ColorType::Rgb8)
            .map_err(|source| Error::Image {
                path: path.clone(),
                source,
            })?;
        written.push(path);
    }
    Ok(written)
}
