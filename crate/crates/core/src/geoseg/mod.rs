//! Geometric over-segmentation of each object mask.

mod felzenszwalb;
mod graph;
mod normals;

pub use felzenszwalb::felzenszwalb;
pub use graph::{build_adjacency, build_adjacency_k, edge_weight, AdjacencyGraph, Edge, KNN_NEIGHBORS};
pub use normals::{estimate_normals, NORMAL_NEIGHBORS};

use crate::config::PipelineConfig;
use crate::error::Result;
use crate::model::{InstanceMask, PointCloud};

/// Splits one object into segments, each a sorted list of scene point
/// indices. Segments partition the mask and are ordered by their smallest
/// index. The cloud must carry normals.
pub fn segment_object(cloud: &PointCloud, mask: &InstanceMask, config: &PipelineConfig) -> Result<Vec<Vec<u32>>> {
    if mask.len() < 2 {
        return Ok(vec![mask.point_indices.clone()]);
    }
    let graph = build_adjacency(cloud, mask)?;
    let labels = felzenszwalb(&graph, config.k_cluster, config.min_segment_vertices)?;
    let count = labels.iter().max().map_or(0, |&m| m as usize + 1);
    let mut segments = vec![Vec::new(); count];
    for (local, &label) in labels.iter().enumerate() {
        segments[label as usize].push(graph.nodes[local]);
    }
    Ok(segments)
}
