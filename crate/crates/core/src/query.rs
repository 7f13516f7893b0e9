//! Open-vocabulary search over a featured tree.
//!
//! Node features are L2-normalized once when the index is built (zero
//! vectors stay zero), so scoring a query is one dot product per node.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::config::ScoreMode;
use crate::error::{Error, Result};
use crate::model::{NodeId, NodeKind, SceneTree};

/// Norms below this make the cosine 0.
pub const MIN_NORM: f64 = 1e-12;

/// `dot(a, b) / (|a| |b|)` in f64; 0 if either vector is (near) zero.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0f64, 0f64, 0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    let (na, nb) = (na.sqrt(), nb.sqrt());
    if na < MIN_NORM || nb < MIN_NORM {
        0.0
    } else {
        dot / (na * nb)
    }
}

pub fn checked_cosine(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch { expected: a.len(), actual: b.len() });
    }
    Ok(cosine(a, b))
}

fn normalize(v: &[f32]) -> Vec<f32> {
    let n = v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    if n < MIN_NORM {
        vec![0.0; v.len()]
    } else {
        v.iter().map(|&x| (x as f64 / n) as f32).collect()
    }
}

/// Dot product with independent lanes so the compiler can vectorize it.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    const LANES: usize = 16;
    let mut acc = [0f32; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let tail: f32 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            acc[l] += x[l] * y[l];
        }
    }
    acc.iter().sum::<f32>() + tail
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredNode {
    pub id: NodeId,
    pub kind: NodeKind,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct QueryResult {
    /// Descending score, ties by ascending id.
    pub nodes: Vec<ScoredNode>,
}

impl QueryResult {
    fn sorted(mut nodes: Vec<ScoredNode>) -> Self {
        nodes.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
        Self { nodes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

pub fn top_k(result: &QueryResult, k: usize) -> QueryResult {
    QueryResult { nodes: result.nodes.iter().take(k).cloned().collect() }
}

/// Read-only search index over one tree.
#[derive(Debug, Clone)]
pub struct SceneIndex {
    pub dim: usize,
    pub num_points: usize,
    object_ids: Vec<NodeId>,
    object_feats: Vec<f32>,
    segment_ids: Vec<NodeId>,
    segment_parent: Vec<u32>,
    segment_feats: Vec<f32>,
    point_segment: Vec<Option<u32>>,
    point_object: Vec<Option<u32>>,
}

impl SceneIndex {
    pub fn new(tree: &SceneTree) -> Self {
        let dim = tree.dim as usize;
        let object_pos: HashMap<NodeId, u32> =
            tree.objects.iter().enumerate().map(|(i, o)| (o.id, i as u32)).collect();
        Self {
            dim,
            num_points: tree.num_points as usize,
            object_ids: tree.objects.iter().map(|o| o.id).collect(),
            object_feats: tree.objects.iter().flat_map(|o| normalize(&o.feature.values)).collect(),
            segment_ids: tree.segments.iter().map(|s| s.id).collect(),
            segment_parent: tree.segments.iter().map(|s| object_pos[&s.mask.parent_object]).collect(),
            segment_feats: tree.segments.iter().flat_map(|s| normalize(&s.feature.values)).collect(),
            point_segment: tree.point_segment_map(),
            point_object: tree.point_object_map(),
        }
    }

    pub fn num_objects(&self) -> usize {
        self.object_ids.len()
    }

    pub fn num_segments(&self) -> usize {
        self.segment_ids.len()
    }

    fn check(&self, text: &[f32]) -> Result<Vec<f32>> {
        if text.len() != self.dim {
            return Err(Error::DimMismatch { expected: self.dim, actual: text.len() });
        }
        Ok(normalize(text))
    }

    /// Per-object and per-segment cosines with the query.
    pub fn component_scores(&self, text: &[f32]) -> Result<(Vec<f32>, Vec<f32>)> {
        let t = self.check(text)?;
        let d = self.dim.max(1);
        let obj = self.object_feats.chunks_exact(d).map(|f| dot(f, &t)).collect();
        let seg = self.segment_feats.chunks_exact(d).map(|f| dot(f, &t)).collect();
        Ok((obj, seg))
    }

    pub fn score(&self, text: &[f32], mode: ScoreMode) -> Result<QueryResult> {
        let (obj, seg) = self.component_scores(text)?;
        let nodes = if mode == ScoreMode::ObjectOnly {
            self.object_ids
                .iter()
                .zip(&obj)
                .map(|(&id, &s)| ScoredNode { id, kind: NodeKind::Object, score: s as f64 })
                .collect()
        } else {
            self.segment_ids
                .iter()
                .zip(&seg)
                .zip(&self.segment_parent)
                .map(|((&id, &s), &p)| {
                    let (o, s) = (obj[p as usize] as f64, s as f64);
                    let score = match mode {
                        ScoreMode::Avg => (o + s) / 2.0,
                        ScoreMode::Max => o.max(s),
                        _ => s,
                    };
                    ScoredNode { id, kind: NodeKind::Segment, score }
                })
                .collect()
        };
        Ok(QueryResult::sorted(nodes))
    }

    /// Per-point score: the segment's score, else the object's; points
    /// covered by no scored node get the minimum score.
    pub fn heatmap(&self, result: &QueryResult) -> Vec<f64> {
        let by_id: HashMap<NodeId, f64> = result.nodes.iter().map(|n| (n.id, n.score)).collect();
        let min = result.nodes.iter().map(|n| n.score).fold(f64::INFINITY, f64::min);
        let min = if min.is_finite() { min } else { 0.0 };
        (0..self.num_points)
            .map(|p| {
                self.point_segment[p]
                    .and_then(|s| by_id.get(&self.segment_ids[s as usize]))
                    .or_else(|| self.point_object[p].and_then(|o| by_id.get(&self.object_ids[o as usize])))
                    .copied()
                    .unwrap_or(min)
            })
            .collect()
    }
}

pub fn score_nodes(text: &[f32], tree: &SceneTree, mode: ScoreMode) -> Result<QueryResult> {
    SceneIndex::new(tree).score(text, mode)
}

pub fn heatmap(result: &QueryResult, tree: &SceneTree) -> Vec<f64> {
    SceneIndex::new(tree).heatmap(result)
}

/// For each node at `level`, the index of the most similar vocabulary entry
/// (first entry wins ties).
pub fn assign_vocabulary(
    tree: &SceneTree,
    vocab: &[(String, Vec<f32>)],
    level: NodeKind,
) -> Result<Vec<(NodeId, usize)>> {
    if vocab.is_empty() {
        return Err(Error::Empty("vocabulary"));
    }
    let dim = tree.dim as usize;
    if let Some((_, v)) = vocab.iter().find(|(_, v)| v.len() != dim) {
        return Err(Error::DimMismatch { expected: dim, actual: v.len() });
    }
    let nodes: Vec<(NodeId, &[f32])> = match level {
        NodeKind::Object => tree.objects.iter().map(|o| (o.id, &o.feature.values[..])).collect(),
        NodeKind::Segment => tree.segments.iter().map(|s| (s.id, &s.feature.values[..])).collect(),
    };
    Ok(nodes
        .into_iter()
        .map(|(id, f)| {
            let mut best = (0usize, f64::NEG_INFINITY);
            for (j, (_, v)) in vocab.iter().enumerate() {
                let c = cosine(f, v);
                if c > best.1 {
                    best = (j, c);
                }
            }
            (id, best.0)
        })
        .collect())
}
