//! Pooling crop and pixel embeddings into node features, and
//! similarity-driven merging of adjacent segments.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::io::{segment2d_key, DepthImage, EmbeddingArchive, LabelImage};
use crate::model::{validate_tree, FeatureVector, NodeId, PointCloud, SceneTree, SegmentMask, SegmentNode};
use crate::query::cosine;
use crate::spatial::KdTree;
use crate::views::{visible_pixel, PinholeCamera};

/// Mean of raw crop embeddings. No crops gives an unobserved zero vector.
pub fn object_feature(crops: &[&[f32]], dim: usize) -> Result<FeatureVector> {
    if crops.is_empty() {
        return Ok(FeatureVector::zeros(dim));
    }
    let mut sum = vec![0f64; dim];
    for c in crops {
        if c.len() != dim {
            return Err(Error::DimMismatch { expected: dim, actual: c.len() });
        }
        for (s, &v) in sum.iter_mut().zip(c.iter()) {
            *s += v as f64;
        }
    }
    let n = crops.len() as f64;
    Ok(FeatureVector::observed(sum.iter().map(|s| (s / n) as f32).collect()))
}

/// Everything needed to project into one frame.
#[derive(Debug, Clone)]
pub struct FrameData {
    pub frame_id: String,
    pub camera: PinholeCamera,
    pub depth: DepthImage,
    pub labels: LabelImage,
}

/// Per-frame count of visible hits, grouped by (segment position in
/// `tree.segments`, 2D label). Sorted by that pair.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameHistogram {
    pub frame_id: String,
    pub hits: Vec<(u32, i32, u64)>,
}

/// One segment's pooled evidence from one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentObservation {
    pub segment: NodeId,
    pub frame_id: String,
    pub count: u64,
    pub sum: Vec<f64>,
}

pub fn frame_histogram(
    point_segment: &[Option<u32>],
    cloud: &PointCloud,
    frame: &FrameData,
    tolerance: f64,
) -> Result<FrameHistogram> {
    let cam = &frame.camera;
    for (what, w, h) in [
        ("depth", frame.depth.width, frame.depth.height),
        ("label", frame.labels.width, frame.labels.height),
    ] {
        if (w, h) != (cam.width, cam.height) {
            return Err(Error::InvalidFrame {
                frame: frame.frame_id.clone(),
                message: format!("{what} image is {w}x{h}, frame is {}x{}", cam.width, cam.height),
            });
        }
    }
    let mut counts: BTreeMap<(u32, i32), u64> = BTreeMap::new();
    for (p, seg) in point_segment.iter().enumerate() {
        let Some(seg) = *seg else { continue };
        let Some((_, x, y)) = visible_pixel(&cloud.point(p as u32), cam, &frame.depth, tolerance) else {
            continue;
        };
        if let Some(label) = frame.labels.at(x, y) {
            *counts.entry((seg, label)).or_default() += 1;
        }
    }
    Ok(FrameHistogram {
        frame_id: frame.frame_id.clone(),
        hits: counts.into_iter().map(|((s, l), c)| (s, l, c)).collect(),
    })
}

impl FrameHistogram {
    pub fn observations(&self, tree: &SceneTree, seg2d: &EmbeddingArchive) -> Result<Vec<SegmentObservation>> {
        let dim = seg2d.dim();
        let mut out: Vec<SegmentObservation> = Vec::new();
        for &(seg, label, count) in &self.hits {
            let key = segment2d_key(&self.frame_id, label);
            let emb = seg2d.get(&key).ok_or_else(|| Error::MissingKey(key.clone()))?;
            let id = tree.segments[seg as usize].id;
            if out.last().map(|o| o.segment) != Some(id) {
                out.push(SegmentObservation {
                    segment: id,
                    frame_id: self.frame_id.clone(),
                    count: 0,
                    sum: vec![0.0; dim],
                });
            }
            let obs = out.last_mut().expect("pushed above");
            obs.count += count;
            let c = count as f64;
            for (s, &v) in obs.sum.iter_mut().zip(emb) {
                *s += c * v as f64;
            }
        }
        Ok(out)
    }
}

/// Folds histograms in the given (frame) order into one feature per entry
/// of `tree.segments`.
pub fn pool_histograms(
    tree: &SceneTree,
    histograms: &[FrameHistogram],
    seg2d: &EmbeddingArchive,
) -> Result<Vec<FeatureVector>> {
    let dim = tree.dim as usize;
    if seg2d.dim() != dim {
        return Err(Error::DimMismatch { expected: dim, actual: seg2d.dim() });
    }
    let pos: BTreeMap<NodeId, usize> = tree.segments.iter().enumerate().map(|(i, s)| (s.id, i)).collect();
    let mut sums = vec![vec![0f64; dim]; tree.segments.len()];
    let mut counts = vec![0u64; tree.segments.len()];
    for h in histograms {
        for obs in h.observations(tree, seg2d)? {
            let i = pos[&obs.segment];
            counts[i] += obs.count;
            for (s, v) in sums[i].iter_mut().zip(&obs.sum) {
                *s += v;
            }
        }
    }
    Ok(sums
        .into_iter()
        .zip(counts)
        .map(|(sum, n)| {
            if n == 0 {
                FeatureVector::zeros(dim)
            } else {
                let n = n as f64;
                FeatureVector::observed(sum.iter().map(|s| (s / n) as f32).collect())
            }
        })
        .collect())
}

/// Observation-weighted segment features over every frame. Frames are
/// processed in parallel and reduced in frame order.
pub fn fuse_segment_features(
    tree: &SceneTree,
    cloud: &PointCloud,
    frames: &[FrameData],
    seg2d: &EmbeddingArchive,
    tolerance: f64,
) -> Result<Vec<FeatureVector>> {
    let map = tree.point_segment_map();
    let hists = frames
        .par_iter()
        .map(|f| frame_histogram(&map, cloud, f, tolerance))
        .collect::<Result<Vec<_>>>()?;
    pool_histograms(tree, &hists, seg2d)
}

/// Exact closest distance between two point sets.
pub fn min_segment_distance(a: &[u32], b: &[u32], cloud: &PointCloud) -> f64 {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    if small.is_empty() {
        return f64::INFINITY;
    }
    let tree = KdTree::new(large.iter().map(|&i| cloud.point(i)).collect());
    small
        .iter()
        .map(|&i| tree.nearest_d2(&cloud.point(i)))
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

struct Working {
    /// Original id, or `FRESH + n` for the n-th merge within the object.
    key: u64,
    indices: Vec<u32>,
    contributors: Vec<u32>,
    /// Sum of original contributor features.
    sum: Vec<f64>,
    observed: bool,
    feature: Vec<f32>,
}

const FRESH: u64 = 1 << 32;

/// A merge performed inside one object, in order.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeStep {
    pub object: NodeId,
    pub a: u64,
    pub b: u64,
    pub similarity: f64,
}

fn merge_object(segs: Vec<&SegmentNode>, cloud: &PointCloud, config: &PipelineConfig) -> (Vec<Working>, Vec<MergeStep>) {
    let mut work: Vec<Working> = segs
        .iter()
        .map(|s| {
            let n = s.mask.contributor_ids.len() as f64;
            Working {
                key: s.id as u64,
                indices: s.mask.point_indices.clone(),
                contributors: s.mask.contributor_ids.clone(),
                sum: s.feature.values.iter().map(|&v| v as f64 * n).collect(),
                observed: s.feature.observed,
                feature: s.feature.values.clone(),
            }
        })
        .collect();
    let object = segs.first().map(|s| s.mask.parent_object).unwrap_or_default();
    let n = work.len();
    let mut dist = vec![vec![0f64; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = min_segment_distance(&work[i].indices, &work[j].indices, cloud);
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    let mut alive = vec![true; n];
    let mut steps = Vec::new();
    loop {
        let mut best: Option<(f64, (u64, u64), usize, usize)> = None;
        for i in 0..n {
            if !alive[i] {
                continue;
            }
            for j in i + 1..n {
                if !alive[j] || dist[i][j] > config.thr_dist {
                    continue;
                }
                let c = cosine(&work[i].feature, &work[j].feature);
                if c < config.thr_feat {
                    continue;
                }
                let (ka, kb) = (work[i].key, work[j].key);
                let pair = (ka.min(kb), ka.max(kb));
                let better = match &best {
                    None => true,
                    Some((bc, bp, _, _)) => c > *bc || (c == *bc && pair < *bp),
                };
                if better {
                    best = Some((c, pair, i, j));
                }
            }
        }
        let Some((c, pair, i, j)) = best else { break };
        let b = std::mem::replace(
            &mut work[j],
            Working { key: 0, indices: Vec::new(), contributors: Vec::new(), sum: Vec::new(), observed: false, feature: Vec::new() },
        );
        alive[j] = false;
        let a = &mut work[i];
        a.key = FRESH + steps.len() as u64;
        a.indices.extend_from_slice(&b.indices);
        a.indices.sort_unstable();
        a.contributors.extend_from_slice(&b.contributors);
        a.contributors.sort_unstable();
        for (s, v) in a.sum.iter_mut().zip(&b.sum) {
            *s += v;
        }
        a.observed |= b.observed;
        let m = a.contributors.len() as f64;
        a.feature = a.sum.iter().map(|s| (s / m) as f32).collect();
        for k in 0..n {
            let d = dist[i][k].min(dist[j][k]);
            dist[i][k] = d;
            dist[k][i] = d;
        }
        dist[i][i] = 0.0;
        steps.push(MergeStep { object, a: pair.0, b: pair.1, similarity: c });
    }
    let kept = work.into_iter().zip(alive).filter_map(|(w, a)| a.then_some(w)).collect();
    (kept, steps)
}

/// Repeatedly merges the most similar close pair of segments inside each
/// object until no pair passes both thresholds. Merged segments get fresh
/// ids in (object, merge) order and a feature equal to the mean over their
/// original contributors.
pub fn semantic_merge(tree: &SceneTree, cloud: &PointCloud, config: &PipelineConfig) -> Result<SceneTree> {
    semantic_merge_logged(tree, cloud, config).map(|(t, _)| t)
}

pub fn semantic_merge_logged(
    tree: &SceneTree,
    cloud: &PointCloud,
    config: &PipelineConfig,
) -> Result<(SceneTree, Vec<MergeStep>)> {
    let per_object: Vec<(Vec<Working>, Vec<MergeStep>)> = tree
        .objects
        .par_iter()
        .map(|o| merge_object(tree.segments_of(o.id).collect(), cloud, config))
        .collect();
    let mut next_id = tree.next_id;
    let mut segments = Vec::with_capacity(tree.segments.len());
    let mut log = Vec::new();
    for (o, (work, steps)) in tree.objects.iter().zip(per_object) {
        let base = next_id;
        for w in work {
            let id = if w.key >= FRESH { base + (w.key - FRESH) as u32 } else { w.key as u32 };
            let feature = if w.observed {
                FeatureVector::observed(w.feature)
            } else {
                FeatureVector::zeros(tree.dim as usize)
            };
            segments.push(SegmentNode {
                id,
                mask: SegmentMask { point_indices: w.indices, parent_object: o.id, contributor_ids: w.contributors },
                feature,
            });
        }
        next_id += steps.len() as u32;
        let remap = |k: u64| if k >= FRESH { (base as u64) + (k - FRESH) } else { k };
        log.extend(steps.into_iter().map(|s| MergeStep { a: remap(s.a), b: remap(s.b), ..s }));
    }
    let out = SceneTree { segments, next_id, ..tree.clone() };
    let violations = validate_tree(&out);
    if !violations.is_empty() {
        return Err(Error::Invariant(violations));
    }
    Ok((out, log))
}
