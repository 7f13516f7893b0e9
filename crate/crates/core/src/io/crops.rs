//! Crop manifests: one JSON record per line, consumed by the external image
//! encoder which returns an `EMB1` archive keyed identically.
//!
//! ```text
//! {"key":"3/000120/1","node":3,"frame_id":"000120","level":1,
//!  "x_min":210,"y_min":96,"x_max":388,"y_max":301}
//! ```
//!
//! Boxes are pixel coordinates, min inclusive and max exclusive.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::NodeId;
use crate::views::CropBox;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropManifestEntry {
    pub key: String,
    pub node: NodeId,
    #[serde(flatten)]
    pub crop: CropBox,
}

/// Crop key for an object crop: `{node}/{frame_id}/{level}`.
pub fn crop_key(node: NodeId, frame_id: &str, level: usize) -> String {
    format!("{node}/{frame_id}/{level}")
}

/// Key of a 2D segment embedding: `{frame_id}/{seg2d_id}`.
pub fn segment2d_key(frame_id: &str, seg2d: i32) -> String {
    format!("{frame_id}/{seg2d}")
}

pub fn crops_to_string(entries: &[CropManifestEntry]) -> String {
    entries
        .iter()
        .map(|e| serde_json::to_string(e).expect("crop serializes") + "\n")
        .collect()
}

pub fn parse_crops(text: &str, context: &str) -> Result<Vec<CropManifestEntry>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(format!("{context}:{}", i + 1), e.to_string())))
        .collect()
}

pub fn write_crop_manifest(entries: &[CropManifestEntry], path: &Path) -> Result<()> {
    std::fs::write(path, crops_to_string(entries)).map_err(|e| Error::io(path, e))
}

pub fn load_crop_manifest(path: &Path) -> Result<Vec<CropManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_crops(&text, &path.display().to_string())
}
