//! On-disk formats: grid containers, camera lists, binary PGM/PPM images,
//! JSON sidecars and the instance-detection file.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::{LabelImage, RgbImage};
use crate::scene::{Camera, SceneBounds, VoxelGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dtype {
    #[serde(rename = "f32le")]
    F32Le,
    #[serde(rename = "f64le")]
    F64Le,
}

impl Dtype {
    fn extension(self) -> &'static str {
        match self {
            Dtype::F32Le => "f32",
            Dtype::F64Le => "f64",
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F32Le => 4,
            Dtype::F64Le => 8,
        }
    }
}

/// JSON manifest of a grid container.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridManifest {
    pub dims: [usize; 3],
    pub channels: usize,
    pub bounds: SceneBounds,
    pub dtype: Dtype,
    /// Raw data file, relative to the manifest's directory.
    pub data: String,
}

pub(crate) fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    Ok(())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    create_parent(path)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::json(path, e))
}

/// Writes `<stem>.json` and its raw payload next to it. Values are rounded
/// to `f32` for [`Dtype::F32Le`].
pub fn write_grid(manifest_path: &Path, grid: &VoxelGrid, dtype: Dtype) -> Result<()> {
    let stem = manifest_path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::invalid(format!("bad manifest path {}", manifest_path.display())))?;
    let data_name = format!("{stem}.{}", dtype.extension());
    let data_path = manifest_path.with_file_name(&data_name);
    let mut raw = Vec::with_capacity(grid.data().len() * dtype.width());
    match dtype {
        Dtype::F32Le => grid
            .data()
            .iter()
            .for_each(|v| raw.extend_from_slice(&(*v as f32).to_le_bytes())),
        Dtype::F64Le => grid
            .data()
            .iter()
            .for_each(|v| raw.extend_from_slice(&v.to_le_bytes())),
    }
    write_bytes(&data_path, &raw)?;
    let manifest = GridManifest {
        dims: grid.dims(),
        channels: grid.channels(),
        bounds: *grid.bounds(),
        dtype,
        data: data_name,
    };
    write_json(manifest_path, &manifest)
}

pub fn read_grid(manifest_path: &Path) -> Result<VoxelGrid> {
    let manifest: GridManifest = read_json(manifest_path)?;
    let data_path = manifest_path
        .parent()
        .unwrap_or_else(|| Path::new(""))
        .join(&manifest.data);
    let raw = read_bytes(&data_path)?;
    let width = manifest.dtype.width();
    if raw.len() % width != 0 {
        return Err(Error::format(
            &data_path,
            "payload length is not a multiple of the dtype width",
        ));
    }
    let data: Vec<f64> = match manifest.dtype {
        Dtype::F32Le => raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
        Dtype::F64Le => raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect(),
    };
    VoxelGrid::from_data(manifest.dims, manifest.channels, manifest.bounds, data)
        .map_err(|e| Error::format(&data_path, e.to_string()))
}

pub fn write_cameras(path: &Path, cameras: &[Camera]) -> Result<()> {
    write_json(path, cameras)
}

pub fn read_cameras(path: &Path) -> Result<Vec<Camera>> {
    read_json(path)
}

struct PnmHeader {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: usize,
    data_offset: usize,
}

fn parse_pnm_header(path: &Path, bytes: &[u8]) -> Result<PnmHeader> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(Error::format(path, "missing PNM magic"));
    }
    let magic = [bytes[0], bytes[1]];
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(path, "malformed PNM header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(path, "PNM header number out of range"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::format(
            path,
            "PNM header must end in a single whitespace byte",
        ));
    }
    Ok(PnmHeader {
        magic,
        width: fields[0],
        height: fields[1],
        maxval: fields[2],
        data_offset: pos + 1,
    })
}

/// Binary PGM (P5), maxval 65535, big-endian 16-bit samples.
pub fn encode_label_pgm(image: &LabelImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", image.width, image.height).into_bytes();
    out.reserve(image.ids.len() * 2);
    for id in &image.ids {
        out.extend_from_slice(&id.to_be_bytes());
    }
    out
}

pub fn decode_label_pgm(path: &Path, bytes: &[u8]) -> Result<LabelImage> {
    let h = parse_pnm_header(path, bytes)?;
    if &h.magic != b"P5" {
        return Err(Error::format(path, "expected binary PGM (P5)"));
    }
    let n = h.width * h.height;
    let body = &bytes[h.data_offset..];
    let ids: Vec<u16> = match h.maxval {
        1..=255 => {
            if body.len() < n {
                return Err(Error::format(path, "truncated PGM payload"));
            }
            body[..n].iter().map(|&b| b as u16).collect()
        }
        256..=65535 => {
            if body.len() < 2 * n {
                return Err(Error::format(path, "truncated PGM payload"));
            }
            body[..2 * n]
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]))
                .collect()
        }
        _ => {
            return Err(Error::format(
                path,
                format!("unsupported maxval {}", h.maxval),
            ))
        }
    };
    LabelImage::from_ids(h.width, h.height, ids)
}

pub fn write_label_pgm(path: &Path, image: &LabelImage) -> Result<()> {
    write_bytes(path, &encode_label_pgm(image))
}

pub fn read_label_pgm(path: &Path) -> Result<LabelImage> {
    decode_label_pgm(path, &read_bytes(path)?)
}

/// Binary PPM (P6), 8-bit, values clamped to [0, 1] then rounded.
pub fn encode_ppm(image: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    for px in &image.pixels {
        for v in px {
            out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    out
}

pub fn decode_ppm(path: &Path, bytes: &[u8]) -> Result<RgbImage> {
    let h = parse_pnm_header(path, bytes)?;
    if &h.magic != b"P6" || h.maxval != 255 {
        return Err(Error::format(path, "expected 8-bit binary PPM (P6)"));
    }
    let n = h.width * h.height;
    let body = &bytes[h.data_offset..];
    if body.len() < 3 * n {
        return Err(Error::format(path, "truncated PPM payload"));
    }
    let pixels = body[..3 * n]
        .chunks_exact(3)
        .map(|c| {
            [
                c[0] as f64 / 255.0,
                c[1] as f64 / 255.0,
                c[2] as f64 / 255.0,
            ]
        })
        .collect();
    Ok(RgbImage {
        width: h.width,
        height: h.height,
        pixels,
    })
}

pub fn write_ppm(path: &Path, image: &RgbImage) -> Result<()> {
    write_bytes(path, &encode_ppm(image))
}

pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    decode_ppm(path, &read_bytes(path)?)
}

/// Depth map as a `(W, H, 1)` grid container over the unit bounds.
pub fn write_depth(manifest_path: &Path, width: usize, height: usize, depth: &[f64]) -> Result<()> {
    let grid = VoxelGrid::from_data(
        [width, height, 1],
        1,
        SceneBounds::new([0.0; 3], [1.0; 3])?,
        depth.to_vec(),
    )?;
    write_grid(manifest_path, &grid, Dtype::F32Le)
}

/// `{id -> class}` sidecar of a label image or registry.
pub type ClassMap = BTreeMap<u16, u16>;

pub fn write_class_map(path: &Path, map: &ClassMap) -> Result<()> {
    write_json(path, map)
}

pub fn read_class_map(path: &Path) -> Result<ClassMap> {
    read_json(path)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxRecord {
    pub center: [f64; 3],
    pub size: [f64; 3],
}

/// One entry of the instance-detection file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub id: u16,
    pub class: u16,
    #[serde(rename = "box")]
    pub bbox: BoxRecord,
    pub score: f64,
    /// Grid container manifest, relative to the detection file.
    pub mask_grid: String,
}

pub fn read_detections(path: &Path) -> Result<Vec<DetectionRecord>> {
    read_json(path)
}

pub fn write_detections(path: &Path, detections: &[DetectionRecord]) -> Result<()> {
    write_json(path, detections)
}

/// Resolves a path stored relative to the file that references it.
pub fn resolve_relative(referrer: &Path, target: &str) -> PathBuf {
    let target = Path::new(target);
    if target.is_absolute() {
        target.to_path_buf()
    } else {
        referrer
            .parent()
            .unwrap_or_else(|| Path::new(""))
            .join(target)
    }
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    create_parent(path)?;
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::json(path, e))?;
        writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
