//! Dataset manifests.
//!
//! ```json
//! {"entries": [
//!   {"image_id": "img0", "image": "img0.pgm", "gt": [3, 1, 6, 4]},
//!   {"image_id": "img1", "raw": {"height": 2, "width": 2, "channels": 1, "pixels": [0, 0.5, 1, 0]},
//!    "gt": [0, 0, 1, 1]}
//! ]}
//! ```
//!
//! `image` paths are resolved relative to the manifest and read as PGM/PPM.
//! Raster files store the top row first; they are flipped on load so that
//! row 0 is the bottom row, matching box coordinates. `raw` pixels are taken
//! as already bottom-up. Ground-truth boxes use the bottom-left origin.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::geometry::GroundTruth;
use crate::perturbation::ImageTensor;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetEntry {
    pub image_id: String,
    pub image: ImageTensor,
    pub gt: GroundTruth,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<ImageTensor>,
    pub gt: GroundTruth,
}

fn data_err(path: &Path, msg: impl std::fmt::Display) -> HarnessError {
    HarnessError::Dataset(format!("{}: {msg}", path.display()))
}

/// Reads a PGM/PPM raster into a bottom-up tensor with values in `[0, 1]`.
pub fn read_raster(path: &Path) -> Result<ImageTensor, HarnessError> {
    let img = image::open(path).map_err(|e| data_err(path, e))?;
    let (width, height) = (img.width() as usize, img.height() as usize);
    let (channels, top_down): (usize, Vec<f32>) = if img.color().has_color() {
        (3, img.to_rgb32f().into_raw())
    } else {
        (1, img.to_luma32f().into_raw())
    };
    let row_len = width * channels;
    let mut pixels = Vec::with_capacity(top_down.len());
    for row in top_down.chunks_exact(row_len).rev() {
        pixels.extend(row.iter().map(|&v| f64::from(v).clamp(0.0, 1.0)));
    }
    ImageTensor::new(height, width, channels, pixels).map_err(|e| data_err(path, e))
}

/// Writes a bottom-up tensor as an 8-bit PGM (1 channel) or PPM (3 channels).
pub fn write_raster(path: &Path, img: &ImageTensor) -> Result<(), HarnessError> {
    let (h, w, c) = img.shape();
    let row_len = w * c;
    let mut bytes = Vec::with_capacity(h * row_len);
    for row in img.pixels().chunks_exact(row_len).rev() {
        bytes.extend(row.iter().map(|&v| (v * 255.0).round() as u8));
    }
    let color = match c {
        1 => image::ExtendedColorType::L8,
        3 => image::ExtendedColorType::Rgb8,
        _ => return Err(data_err(path, format!("cannot write {c}-channel raster"))),
    };
    image::save_buffer_with_format(
        path,
        &bytes,
        w as u32,
        h as u32,
        color,
        image::ImageFormat::Pnm,
    )
    .map_err(|e| data_err(path, e))
}

pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<Vec<DatasetEntry>, HarnessError> {
    let manifest_path = manifest_path.as_ref();
    let text = std::fs::read_to_string(manifest_path).map_err(|e| data_err(manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| data_err(manifest_path, e))?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(manifest.entries.len());
    for e in manifest.entries {
        if !seen.insert(e.image_id.clone()) {
            return Err(data_err(
                manifest_path,
                format!("duplicate image_id `{}`", e.image_id),
            ));
        }
        let image = match (e.image, e.raw) {
            (Some(p), None) => read_raster(&base.join(p))?,
            (None, Some(raw)) => raw,
            _ => {
                return Err(data_err(
                    manifest_path,
                    format!(
                        "entry `{}` needs exactly one of `image` and `raw`",
                        e.image_id
                    ),
                ))
            }
        };
        out.push(DatasetEntry {
            image_id: e.image_id,
            image,
            gt: e.gt,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raster_round_trip_flips_rows() {
        let dir = tempfile::tempdir().unwrap();
        // Bottom row bright, top row dark.
        let img = ImageTensor::new(2, 3, 1, vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0]).unwrap();
        let path = dir.path().join("a.pgm");
        write_raster(&path, &img).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        // Raster stores the top (dark) row first.
        assert_eq!(&bytes[bytes.len() - 6..], &[0, 0, 0, 255, 255, 255]);
        assert_eq!(read_raster(&path).unwrap(), img);
    }

    #[test]
    fn manifest_loading() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImageTensor::new(2, 2, 3, (0..12).map(|i| i as f64 / 255.0).collect()).unwrap();
        write_raster(&dir.path().join("c.ppm"), &img).unwrap();
        let manifest = r#"{"entries":[
            {"image_id":"c","image":"c.ppm","gt":[0,0,1,1]},
            {"image_id":"r","raw":{"height":1,"width":2,"channels":1,"pixels":[0.0,0.5]},"gt":[0,0,2,1]}]}"#;
        let path = dir.path().join("m.json");
        std::fs::write(&path, manifest).unwrap();
        let ds = load_dataset(&path).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds[0].image.shape(), (2, 2, 3));
        for (a, b) in ds[0].image.pixels().iter().zip(img.pixels()) {
            assert!((a - b).abs() < 1e-6);
        }
        assert_eq!(ds[1].image.pixels(), &[0.0, 0.5]);

        let dup = r#"{"entries":[
            {"image_id":"r","raw":{"height":1,"width":1,"channels":1,"pixels":[0.0]},"gt":[0,0,1,1]},
            {"image_id":"r","raw":{"height":1,"width":1,"channels":1,"pixels":[0.0]},"gt":[0,0,1,1]}]}"#;
        std::fs::write(&path, dup).unwrap();
        assert!(matches!(load_dataset(&path), Err(HarnessError::Dataset(_))));
        std::fs::write(&path, r#"{"entries":[{"image_id":"r","gt":[0,0,0,1]}]}"#).unwrap();
        assert!(matches!(load_dataset(&path), Err(HarnessError::Dataset(_))));
    }
}
