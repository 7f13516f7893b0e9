//! Mask files (JSON).
//!
//! ```text
//! {"masks": [
//!   {"confidence": 0.93, "point_indices": [0, 4, 5],
//!    "category": "chair",                               (optional)
//!    "parts": [{"category": "seat", "point_indices": [4, 5]}]}   (optional)
//! ]}
//! ```
//!
//! The same shape carries predicted object masks, segmentation output (parts
//! = segments), ground-truth part hierarchies and labelled predictions for
//! evaluation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{check_index_list, InstanceMask};

fn one() -> f32 {
    1.0
}

fn is_one(v: &f32) -> bool {
    *v == 1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub confidence: f32,
    pub point_indices: Vec<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub parts: Vec<MaskRecord>,
}

impl MaskRecord {
    pub fn new(point_indices: Vec<u32>) -> Self {
        Self {
            category: None,
            confidence: 1.0,
            point_indices,
            parts: Vec::new(),
        }
    }

    pub fn with_category(mut self, category: impl Into<String>) -> Self {
        self.category = Some(category.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MaskFile {
    pub masks: Vec<MaskRecord>,
}

impl MaskFile {
    /// Checks index lists (sorted, unique, non-empty, `< num_points` when
    /// given) and that every part lies inside its parent.
    pub fn validate(&self, num_points: Option<usize>) -> Result<()> {
        for (i, m) in self.masks.iter().enumerate() {
            check_index_list(&m.point_indices, num_points)
                .map_err(|e| Error::InvalidMask(format!("mask {i}: {e}")))?;
            if !(0.0..=1.0).contains(&m.confidence) {
                return Err(Error::InvalidMask(format!("mask {i}: confidence {}", m.confidence)));
            }
            for (j, p) in m.parts.iter().enumerate() {
                check_index_list(&p.point_indices, num_points)
                    .map_err(|e| Error::InvalidMask(format!("mask {i} part {j}: {e}")))?;
                if let Some(x) = p.point_indices.iter().find(|x| m.point_indices.binary_search(x).is_err()) {
                    return Err(Error::InvalidMask(format!("mask {i} part {j}: point {x} outside parent")));
                }
            }
        }
        Ok(())
    }

    pub fn instance_masks(&self) -> Result<Vec<InstanceMask>> {
        self.masks
            .iter()
            .map(|m| InstanceMask::new(m.point_indices.clone(), m.confidence))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("masks serialize")
    }

    pub fn from_json(text: &str, context: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::parse(context, e.to_string()))
    }
}

pub fn load_masks(path: &Path) -> Result<MaskFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file = MaskFile::from_json(&text, &path.display().to_string())?;
    file.validate(None)?;
    Ok(file)
}

pub fn write_masks(file: &MaskFile, path: &Path) -> Result<()> {
    std::fs::write(path, file.to_json()).map_err(|e| Error::io(path, e))
}
