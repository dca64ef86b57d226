//! RF32 raster files and plain-text stack manifests.
//!
//! RF32 layout (all little-endian): the 4-byte magic `RF32`, `u32` width,
//! `u32` height, `f32` pixel pitch, then `width * height` `f32` samples in
//! row-major order. Samples are narrowed to `f32` on save, so a round trip
//! is bit-exact for any image whose samples are already `f32`-representable.
//!
//! A stack manifest holds one `dz_micrometers<TAB>relative_path` line per
//! plane, sorted by ascending dz. Blank lines and lines starting with `#` are
//! ignored.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{ImagingError, Result};
use crate::image::{Image, ZStack};

pub const RF32_MAGIC: &[u8; 4] = b"RF32";
const HEADER_LEN: usize = 16;

pub fn encode_rf32(image: &Image) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * image.len());
    out.extend_from_slice(RF32_MAGIC);
    out.extend_from_slice(&(image.width() as u32).to_le_bytes());
    out.extend_from_slice(&(image.height() as u32).to_le_bytes());
    out.extend_from_slice(&(image.pixel_pitch() as f32).to_le_bytes());
    for &v in image.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_rf32(bytes: &[u8]) -> Result<Image> {
    if bytes.len() < HEADER_LEN {
        return Err(ImagingError::Format(format!(
            "truncated header: {} bytes",
            bytes.len()
        )));
    }
    if &bytes[0..4] != RF32_MAGIC {
        return Err(ImagingError::Format(format!(
            "bad magic {:?}",
            String::from_utf8_lossy(&bytes[0..4])
        )));
    }
    let word = |i: usize| [bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]];
    let width = u32::from_le_bytes(word(4)) as usize;
    let height = u32::from_le_bytes(word(8)) as usize;
    let pitch = f32::from_le_bytes(word(12)) as f64;
    if width == 0 || height == 0 {
        return Err(ImagingError::Format(format!(
            "zero dimension {width}x{height}"
        )));
    }
    let expected = HEADER_LEN + 4 * width * height;
    if bytes.len() != expected {
        return Err(ImagingError::Format(format!(
            "payload is {} bytes, header implies {expected}",
            bytes.len()
        )));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Image::new(width, height, pitch, data).map_err(|e| ImagingError::Format(e.to_string()))
}

pub fn save_rf32(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_rf32(image))?;
    Ok(())
}

pub fn load_rf32(path: impl AsRef<Path>) -> Result<Image> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_rf32(&bytes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub dz: f64,
    pub path: PathBuf,
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let (dz, path) = line.split_once('\t').ok_or_else(|| {
            ImagingError::Format(format!("manifest line {}: missing tab", lineno + 1))
        })?;
        let dz: f64 = dz.trim().parse().map_err(|_| {
            ImagingError::Format(format!("manifest line {}: bad dz {dz:?}", lineno + 1))
        })?;
        entries.push(ManifestEntry {
            dz,
            path: PathBuf::from(path.trim()),
        });
    }
    if entries.windows(2).any(|w| !(w[1].dz > w[0].dz)) {
        return Err(ImagingError::Format(
            "manifest dz values must be strictly ascending".into(),
        ));
    }
    Ok(entries)
}

pub fn format_manifest(entries: &[ManifestEntry]) -> String {
    let mut out = String::from("# dz_micrometers\trelative_path\n");
    for e in entries {
        out.push_str(&format!("{}\t{}\n", e.dz, e.path.display()));
    }
    out
}

/// Load a stack from a manifest; paths resolve relative to the manifest's directory.
pub fn load_stack(manifest: impl AsRef<Path>) -> Result<ZStack> {
    let manifest = manifest.as_ref();
    let base = manifest.parent().unwrap_or_else(|| Path::new("."));
    let mut text = String::new();
    for line in BufReader::new(fs::File::open(manifest)?).lines() {
        text.push_str(&line?);
        text.push('\n');
    }
    let entries = parse_manifest(&text)?;
    let mut planes = Vec::with_capacity(entries.len());
    let mut dz = Vec::with_capacity(entries.len());
    for e in entries {
        planes.push(load_rf32(base.join(&e.path))?);
        dz.push(e.dz);
    }
    let stack = ZStack::new(planes, dz)?;
    match stack.dz_values().iter().position(|&z| z == 0.0) {
        Some(i) => stack.with_reference(i),
        None => Ok(stack),
    }
}

/// Write every plane as `plane_NNN.rf32` plus `stack.manifest` into `dir`.
/// Returns the manifest path.
pub fn save_stack(stack: &ZStack, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(stack.len());
    for (i, (plane, &dz)) in stack.planes().iter().zip(stack.dz_values()).enumerate() {
        let name = PathBuf::from(format!("plane_{i:03}.rf32"));
        save_rf32(plane, dir.join(&name))?;
        entries.push(ManifestEntry { dz, path: name });
    }
    let manifest = dir.join("stack.manifest");
    fs::write(&manifest, format_manifest(&entries))?;
    Ok(manifest)
}
