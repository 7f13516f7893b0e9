//! Core domain types: point clouds, masks, feature vectors and the
//! scene → object → part tree.

mod serial;
mod tree;

pub use serial::{read_tree, read_tree_text, tree_from_bytes, tree_to_bytes, write_tree, write_tree_text, TREE_MAGIC, TREE_VERSION};
pub use tree::{build_tree, resolve_overlaps, validate_tree, Rule, Violation};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense node identifier. Never reused within a tree.
pub type NodeId = u32;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub positions: Vec<[f32; 3]>,
    pub normals: Option<Vec<[f32; 3]>>,
    /// RGB in [0, 1].
    pub colors: Option<Vec<[f32; 3]>>,
    pub faces: Vec<[u32; 3]>,
}

impl PointCloud {
    pub fn from_positions(positions: Vec<[f32; 3]>) -> Self {
        Self {
            positions,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    #[inline]
    pub fn point(&self, i: u32) -> [f64; 3] {
        let p = self.positions[i as usize];
        [p[0] as f64, p[1] as f64, p[2] as f64]
    }

    #[inline]
    pub fn normal(&self, i: u32) -> Option<[f64; 3]> {
        self.normals.as_ref().map(|n| {
            let n = n[i as usize];
            [n[0] as f64, n[1] as f64, n[2] as f64]
        })
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if let Some(i) = self
            .positions
            .iter()
            .position(|p| !p.iter().all(|c| c.is_finite()))
        {
            return Err(Error::parse("point cloud", format!("position {i} is not finite")));
        }
        if let Some(normals) = &self.normals {
            if normals.len() != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    actual: normals.len(),
                });
            }
            for (i, nv) in normals.iter().enumerate() {
                let len = nv.iter().map(|c| (*c as f64).powi(2)).sum::<f64>().sqrt();
                if (len - 1.0).abs() > 1e-4 {
                    return Err(Error::parse(
                        "point cloud",
                        format!("normal {i} has length {len}"),
                    ));
                }
            }
        }
        if let Some(colors) = &self.colors {
            if colors.len() != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    actual: colors.len(),
                });
            }
        }
        if let Some(f) = self.faces.iter().position(|f| f.iter().any(|&v| v as usize >= n)) {
            return Err(Error::parse(
                "point cloud",
                format!("face {f} references a vertex >= {n}"),
            ));
        }
        Ok(())
    }
}

/// Checks that `indices` is strictly increasing, non-empty and below `bound`.
pub fn check_index_list(indices: &[u32], bound: Option<usize>) -> Result<()> {
    if indices.is_empty() {
        return Err(Error::InvalidMask("empty mask".into()));
    }
    if let Some(w) = indices.windows(2).find(|w| w[0] >= w[1]) {
        return Err(Error::InvalidMask(if w[0] == w[1] {
            format!("duplicate index {}", w[0])
        } else {
            format!("indices not sorted ({} before {})", w[0], w[1])
        }));
    }
    if let Some(bound) = bound {
        let last = *indices.last().unwrap() as usize;
        if last >= bound {
            return Err(Error::InvalidMask(format!(
                "index {last} out of range for {bound} points"
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceMask {
    pub point_indices: Vec<u32>,
    pub confidence: f32,
}

impl InstanceMask {
    /// Sorts the indices; rejects empty or duplicated lists.
    pub fn new(mut point_indices: Vec<u32>, confidence: f32) -> Result<Self> {
        point_indices.sort_unstable();
        check_index_list(&point_indices, None)?;
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::InvalidMask(format!(
                "confidence {confidence} outside [0, 1]"
            )));
        }
        Ok(Self {
            point_indices,
            confidence,
        })
    }

    pub fn len(&self) -> usize {
        self.point_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.point_indices.is_empty()
    }

    pub fn contains(&self, i: u32) -> bool {
        self.point_indices.binary_search(&i).is_ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentMask {
    pub point_indices: Vec<u32>,
    pub parent_object: NodeId,
    /// Ids of the pre-merge segments this one is made of, sorted.
    pub contributor_ids: Vec<u32>,
}

impl SegmentMask {
    pub fn len(&self) -> usize {
        self.point_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.point_indices.is_empty()
    }
}

/// A D-dimensional embedding. Unobserved vectors are all zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f32>,
    pub observed: bool,
}

impl FeatureVector {
    pub fn zeros(dim: usize) -> Self {
        Self {
            values: vec![0.0; dim],
            observed: false,
        }
    }

    pub fn observed(values: Vec<f32>) -> Self {
        Self {
            values,
            observed: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Unit-length copy; zero vectors stay zero.
    pub fn normalized(&self) -> Vec<f32> {
        let n = self.norm();
        if n < 1e-12 {
            return vec![0.0; self.dim()];
        }
        self.values.iter().map(|&v| (v as f64 / n) as f32).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectNode {
    pub id: NodeId,
    pub mask: InstanceMask,
    pub feature: FeatureVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentNode {
    pub id: NodeId,
    pub mask: SegmentMask,
    pub feature: FeatureVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Object,
    Segment,
}

impl NodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Object => "object",
            NodeKind::Segment => "segment",
        }
    }
}

/// Scene root with object children and part-segment leaves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneTree {
    pub scene_id: String,
    pub num_points: u32,
    pub dim: u32,
    /// Next id handed out to a new node.
    pub next_id: NodeId,
    pub objects: Vec<ObjectNode>,
    pub segments: Vec<SegmentNode>,
}

impl SceneTree {
    pub fn object(&self, id: NodeId) -> Option<&ObjectNode> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn object_index(&self, id: NodeId) -> Option<usize> {
        self.objects.iter().position(|o| o.id == id)
    }

    pub fn segment(&self, id: NodeId) -> Option<&SegmentNode> {
        self.segments.iter().find(|s| s.id == id)
    }

    pub fn segments_of(&self, object: NodeId) -> impl Iterator<Item = &SegmentNode> {
        self.segments
            .iter()
            .filter(move |s| s.mask.parent_object == object)
    }

    pub fn kind_of(&self, id: NodeId) -> Option<NodeKind> {
        if self.object(id).is_some() {
            Some(NodeKind::Object)
        } else if self.segment(id).is_some() {
            Some(NodeKind::Segment)
        } else {
            None
        }
    }

    /// For every point, the index into `segments` that owns it.
    pub fn point_segment_map(&self) -> Vec<Option<u32>> {
        let mut map = vec![None; self.num_points as usize];
        for (si, s) in self.segments.iter().enumerate() {
            for &p in &s.mask.point_indices {
                if let Some(slot) = map.get_mut(p as usize) {
                    *slot = Some(si as u32);
                }
            }
        }
        map
    }

    /// For every point, the index into `objects` that owns it.
    pub fn point_object_map(&self) -> Vec<Option<u32>> {
        let mut map = vec![None; self.num_points as usize];
        for (oi, o) in self.objects.iter().enumerate() {
            for &p in &o.mask.point_indices {
                if let Some(slot) = map.get_mut(p as usize) {
                    *slot = Some(oi as u32);
                }
            }
        }
        map
    }
}
