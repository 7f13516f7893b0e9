//! Instance AP (AP, AP50, AP25), semantic mIoU / mean accuracy, and the
//! ground-truth-mask feature evaluation.
//!
//! AP integration is all-point: predictions are ranked by confidence (ties
//! keep input order) and greedily matched to the unmatched ground truth with
//! the highest IoU at or above the threshold (ties go to the lower GT
//! index). AP = Σ Δrecall · max{precision at recall ≥ r}.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::config::ScoreMode;
use crate::embed::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::fusion::{fuse_segment_features, FrameData};
use crate::io::{EmbeddingArchive, MaskFile, MaskRecord};
use crate::model::{build_tree, NodeKind, PointCloud, SceneTree};
use crate::query::{QueryResult, SceneIndex};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtInstance {
    pub category: String,
    pub point_indices: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredInstance {
    pub category: String,
    pub point_indices: Vec<u32>,
    pub confidence: f64,
}

/// IoU of two sorted index sets; 0 when both are empty.
pub fn mask_iou(a: &[u32], b: &[u32]) -> f64 {
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

fn single_category<'a>(preds: &'a [PredInstance], gts: &'a [GtInstance]) -> Result<()> {
    let mut cats = preds.iter().map(|p| &p.category).chain(gts.iter().map(|g| &g.category));
    if let Some(first) = cats.next() {
        if let Some(other) = cats.find(|c| *c != first) {
            return Err(Error::MixedCategories(first.clone(), other.clone()));
        }
    }
    Ok(())
}

/// AP for one category. `None` when there is neither ground truth nor any
/// prediction.
pub fn average_precision(preds: &[PredInstance], gts: &[GtInstance], iou_threshold: f64) -> Result<Option<f64>> {
    single_category(preds, gts)?;
    let ious: Vec<Vec<f64>> = preds
        .iter()
        .map(|p| gts.iter().map(|g| mask_iou(&p.point_indices, &g.point_indices)).collect())
        .collect();
    Ok(ap_from_ious(preds, &ious, gts.len(), iou_threshold))
}

fn ranking(preds: &[PredInstance]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].confidence.total_cmp(&preds[a].confidence));
    order
}

fn ap_from_ious(preds: &[PredInstance], ious: &[Vec<f64>], num_gt: usize, thr: f64) -> Option<f64> {
    if num_gt == 0 {
        return (!preds.is_empty()).then_some(0.0);
    }
    let mut matched = vec![false; num_gt];
    let mut tp = 0usize;
    let mut curve = Vec::with_capacity(preds.len());
    for (rank, &p) in ranking(preds).iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (g, &iou) in ious[p].iter().enumerate() {
            if !matched[g] && iou >= thr && best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        if let Some((g, _)) = best {
            matched[g] = true;
            tp += 1;
        }
        curve.push((tp as f64 / num_gt as f64, tp as f64 / (rank + 1) as f64));
    }
    // running max of precision from the right
    let mut best_prec = vec![0f64; curve.len()];
    let mut m = 0f64;
    for i in (0..curve.len()).rev() {
        m = m.max(curve[i].1);
        best_prec[i] = m;
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (i, &(r, _)) in curve.iter().enumerate() {
        if r > prev_recall {
            ap += (r - prev_recall) * best_prec[i];
            prev_recall = r;
        }
    }
    Some(ap)
}

/// IoU thresholds averaged into AP: 0.50, 0.55, ..., 0.95.
pub fn ap_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryAp {
    pub category: String,
    pub num_gt: usize,
    pub num_pred: usize,
    pub ap: f64,
    pub ap50: f64,
    pub ap25: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ApSummary {
    pub ap: f64,
    pub ap50: f64,
    pub ap25: f64,
    pub categories: Vec<CategoryAp>,
}

/// Means over categories with at least one ground-truth instance.
pub fn ap_suite(preds: &[PredInstance], gts: &[GtInstance]) -> ApSummary {
    let cats: BTreeSet<&str> = gts.iter().map(|g| g.category.as_str()).collect();
    let thresholds = ap_thresholds();
    let mut rows = Vec::new();
    for cat in cats {
        let p: Vec<PredInstance> = preds.iter().filter(|p| p.category == cat).cloned().collect();
        let g: Vec<GtInstance> = gts.iter().filter(|g| g.category == cat).cloned().collect();
        let ious: Vec<Vec<f64>> = p
            .iter()
            .map(|p| g.iter().map(|g| mask_iou(&p.point_indices, &g.point_indices)).collect())
            .collect();
        let at = |t: f64| ap_from_ious(&p, &ious, g.len(), t).unwrap_or(0.0);
        rows.push(CategoryAp {
            category: cat.to_string(),
            num_gt: g.len(),
            num_pred: p.len(),
            ap: thresholds.iter().map(|&t| at(t)).sum::<f64>() / thresholds.len() as f64,
            ap50: at(0.5),
            ap25: at(0.25),
        });
    }
    if rows.is_empty() {
        return ApSummary::default();
    }
    let n = rows.len() as f64;
    ApSummary {
        ap: rows.iter().map(|r| r.ap).sum::<f64>() / n,
        ap50: rows.iter().map(|r| r.ap50).sum::<f64>() / n,
        ap25: rows.iter().map(|r| r.ap25).sum::<f64>() / n,
        categories: rows,
    }
}

/// Mean IoU and mean class accuracy over classes present in `gt`. Points
/// whose ground truth equals `ignore` are skipped.
pub fn miou_acc(pred: &[i32], gt: &[i32], num_classes: usize, ignore: i32) -> Result<(f64, f64)> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch { expected: gt.len(), actual: pred.len() });
    }
    let (mut tp, mut fp, mut fne) = (vec![0u64; num_classes], vec![0u64; num_classes], vec![0u64; num_classes]);
    let class = |v: i32| (v >= 0 && (v as usize) < num_classes).then_some(v as usize);
    for (&p, &g) in pred.iter().zip(gt) {
        if g == ignore {
            continue;
        }
        let Some(g) = class(g) else {
            return Err(Error::parse("ground-truth labels", format!("label {g} outside 0..{num_classes}")));
        };
        match class(p) {
            Some(p) if p == g => tp[g] += 1,
            Some(p) => {
                fp[p] += 1;
                fne[g] += 1;
            }
            None => fne[g] += 1,
        }
    }
    let present: Vec<usize> = (0..num_classes).filter(|&c| tp[c] + fne[c] > 0).collect();
    if present.is_empty() {
        return Err(Error::Empty("no labelled ground-truth points"));
    }
    let n = present.len() as f64;
    let miou = present.iter().map(|&c| tp[c] as f64 / (tp[c] + fp[c] + fne[c]) as f64).sum::<f64>() / n;
    let acc = present.iter().map(|&c| tp[c] as f64 / (tp[c] + fne[c]) as f64).sum::<f64>() / n;
    Ok((miou, acc))
}

/// Every scored node becomes one prediction with its score as confidence.
pub fn instances_from_result(result: &QueryResult, tree: &SceneTree, category: &str) -> Vec<PredInstance> {
    result
        .nodes
        .iter()
        .map(|n| {
            let indices = match n.kind {
                NodeKind::Object => &tree.object(n.id).expect("scored object exists").mask.point_indices,
                NodeKind::Segment => &tree.segment(n.id).expect("scored segment exists").mask.point_indices,
            };
            PredInstance { category: category.to_string(), point_indices: indices.clone(), confidence: n.score }
        })
        .collect()
}

/// Runs one query per distinct GT category and scores the resulting
/// predictions.
pub fn evaluate_queries(
    tree: &SceneTree,
    provider: &dyn EmbeddingProvider,
    gts: &[GtInstance],
    mode: ScoreMode,
) -> Result<(ApSummary, Vec<PredInstance>)> {
    let index = SceneIndex::new(tree);
    let cats: BTreeSet<&str> = gts.iter().map(|g| g.category.as_str()).collect();
    let mut preds = Vec::new();
    for cat in cats {
        let text = provider.embed_text(cat)?;
        let result = index.score(&text, mode)?;
        preds.extend(instances_from_result(&result, tree, cat));
    }
    Ok((ap_suite(&preds, gts), preds))
}

/// Ground-truth instances from a mask file: top-level records when
/// `level` is object, nested parts when segment. Records without a category
/// are skipped.
pub fn gt_instances(file: &MaskFile, level: NodeKind) -> Vec<GtInstance> {
    let recs: Vec<&MaskRecord> = match level {
        NodeKind::Object => file.masks.iter().collect(),
        NodeKind::Segment => file.masks.iter().flat_map(|m| &m.parts).collect(),
    };
    recs.into_iter()
        .filter_map(|r| {
            r.category.as_ref().map(|c| GtInstance { category: c.clone(), point_indices: r.point_indices.clone() })
        })
        .collect()
}

/// Every record (top-level and parts) with a category, as predictions.
pub fn pred_instances(file: &MaskFile) -> Vec<PredInstance> {
    file.masks
        .iter()
        .flat_map(|m| std::iter::once(m).chain(&m.parts))
        .filter_map(|r| {
            r.category.as_ref().map(|c| PredInstance {
                category: c.clone(),
                point_indices: r.point_indices.clone(),
                confidence: r.confidence as f64,
            })
        })
        .collect()
}

/// Tree whose objects and segments are the ground-truth objects and parts.
pub fn gt_tree(gt: &MaskFile, num_points: usize, dim: usize) -> Result<SceneTree> {
    let objects = gt.instance_masks()?;
    let parts = gt.masks.iter().map(|m| m.parts.iter().map(|p| p.point_indices.clone()).collect()).collect();
    build_tree("gt", num_points, dim, objects, parts)
}

/// Part-level AP of features pooled over ground-truth part masks, scored
/// segment-only, so segmentation quality does not enter.
pub fn oracle_feature_eval(
    gt: &MaskFile,
    cloud: &PointCloud,
    frames: &[FrameData],
    seg2d: &EmbeddingArchive,
    provider: &dyn EmbeddingProvider,
    tolerance: f64,
) -> Result<ApSummary> {
    let mut tree = gt_tree(gt, cloud.len(), seg2d.dim())?;
    let feats = fuse_segment_features(&tree, cloud, frames, seg2d, tolerance)?;
    for (s, f) in tree.segments.iter_mut().zip(feats) {
        s.feature = f;
    }
    let gts = gt_instances(gt, NodeKind::Segment);
    evaluate_queries(&tree, provider, &gts, ScoreMode::SegmentOnly).map(|(s, _)| s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gt(c: &str, idx: Vec<u32>) -> GtInstance {
        GtInstance { category: c.into(), point_indices: idx }
    }

    fn pred(c: &str, idx: Vec<u32>, conf: f64) -> PredInstance {
        PredInstance { category: c.into(), point_indices: idx, confidence: conf }
    }

    #[test]
    fn iou_values() {
        assert_eq!(mask_iou(&[1, 2, 3], &[1, 2, 3]), 1.0);
        assert_eq!(mask_iou(&[1, 2], &[3, 4]), 0.0);
        assert_eq!(mask_iou(&[], &[]), 0.0);
        let a: Vec<u32> = (1..=6).collect();
        let b: Vec<u32> = (4..=9).collect();
        assert!((mask_iou(&a, &b) - 3.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn ap_edge_cases() {
        let g = vec![gt("a", vec![1, 2]), gt("a", vec![5, 6])];
        let perfect: Vec<PredInstance> = g.iter().map(|g| pred("a", g.point_indices.clone(), 1.0)).collect();
        for t in ap_thresholds() {
            assert_eq!(average_precision(&perfect, &g, t).unwrap(), Some(1.0));
        }
        assert_eq!(average_precision(&[], &g, 0.5).unwrap(), Some(0.0));
        assert_eq!(average_precision(&[], &[], 0.5).unwrap(), None);
        assert_eq!(average_precision(&perfect, &[], 0.5).unwrap(), Some(0.0));
        let mixed = vec![pred("b", vec![1], 1.0)];
        assert!(average_precision(&mixed, &g, 0.5).is_err());
    }

    #[test]
    fn false_positive_first_halves_precision() {
        let g = vec![gt("a", vec![1, 2])];
        let p = vec![pred("a", vec![7], 0.9), pred("a", vec![1, 2], 0.8)];
        assert_eq!(average_precision(&p, &g, 0.5).unwrap(), Some(0.5));
    }

    #[test]
    fn iou_04_suite() {
        // |a∩b| = 2, |a∪b| = 5
        let g = vec![gt("a", vec![1, 2, 3, 4])];
        let p = vec![pred("a", vec![3, 4, 5], 1.0)];
        assert!((mask_iou(&p[0].point_indices, &g[0].point_indices) - 0.4).abs() < 1e-15);
        let s = ap_suite(&p, &g);
        assert_eq!((s.ap, s.ap50, s.ap25), (0.0, 0.0, 1.0));
        let s = ap_suite(&[pred("a", vec![1, 2, 3, 4], 1.0)], &g);
        assert_eq!((s.ap, s.ap50, s.ap25), (1.0, 1.0, 1.0));
    }

    #[test]
    fn categories_without_gt_are_skipped() {
        let g = vec![gt("a", vec![1])];
        let p = vec![pred("a", vec![1], 1.0), pred("z", vec![9], 1.0)];
        let s = ap_suite(&p, &g);
        assert_eq!(s.categories.len(), 1);
        assert_eq!(s.ap50, 1.0);
    }

    #[test]
    fn semantic_metrics() {
        let gt = [0, 1, 2, 2, -1];
        assert_eq!(miou_acc(&gt, &gt, 3, -1).unwrap(), (1.0, 1.0));
        assert_eq!(miou_acc(&[1, 2, 0, 0, 0], &gt, 3, -1).unwrap(), (0.0, 0.0));
        // class 0: tp1 fp1 → 1/2; class 1: tp0 fn1 → 0; class 2: tp1 fn1 → 1/2 (acc 1/2)
        let (m, a) = miou_acc(&[0, 0, 2, 5, 1], &gt, 3, -1).unwrap();
        assert!((m - (0.5 + 0.0 + 0.5) / 3.0).abs() < 1e-15);
        assert!((a - (1.0 + 0.0 + 0.5) / 3.0).abs() < 1e-15);
        assert!(miou_acc(&[0], &gt, 3, -1).is_err());
    }
}
