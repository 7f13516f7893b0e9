//! Similarity heatmaps exported as colored PLY.
//!
//! Scores are normalized over their own [min, max] and mapped linearly from
//! pure blue (lowest) to pure red (highest). A constant score array maps every
//! point to the mid color.

use std::path::Path;

use super::ply::{ply_bytes, PlyFormat};
use crate::error::{Error, Result};
use crate::model::PointCloud;

/// Blue → red colormap over `t` in [0, 1].
pub fn colormap(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    [(255.0 * t).round() as u8, 0, (255.0 * (1.0 - t)).round() as u8]
}

pub fn heatmap_colors(scores: &[f64]) -> Result<Vec<[u8; 3]>> {
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::parse("heatmap", format!("score {i} is not finite")));
    }
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    Ok(scores
        .iter()
        .map(|&s| colormap(if range > 0.0 { (s - min) / range } else { 0.5 }))
        .collect())
}

pub fn write_heatmap_ply(cloud: &PointCloud, scores: &[f64], path: &Path) -> Result<()> {
    if scores.len() != cloud.len() {
        return Err(Error::LengthMismatch {
            expected: cloud.len(),
            actual: scores.len(),
        });
    }
    let colors = heatmap_colors(scores)?;
    let stripped = PointCloud {
        positions: cloud.positions.clone(),
        normals: None,
        colors: None,
        faces: cloud.faces.clone(),
    };
    std::fs::write(path, ply_bytes(&stripped, PlyFormat::BinaryLittleEndian, Some(&colors)))
        .map_err(|e| Error::io(path, e))
}
