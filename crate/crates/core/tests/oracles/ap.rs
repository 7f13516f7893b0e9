//! Brute-force IoU and PR-integration references, and random instance sets.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use scenehier_core::eval::{GtInstance, PredInstance};

pub fn random_set(rng: &mut ChaCha8Rng, universe: u32) -> Vec<u32> {
    let mut v: Vec<u32> = (0..universe).filter(|_| rng.random::<f64>() < 0.3).collect();
    if v.is_empty() {
        v.push(rng.random_range(0..universe));
    }
    v
}

pub fn iou_oracle(a: &[u32], b: &[u32]) -> f64 {
    let sa: std::collections::HashSet<u32> = a.iter().copied().collect();
    let sb: std::collections::HashSet<u32> = b.iter().copied().collect();
    let union = sa.union(&sb).count();
    if union == 0 { 0.0 } else { sa.intersection(&sb).count() as f64 / union as f64 }
}

/// Builds the full PR point list, then integrates: for every distinct recall
/// level, the step width times the best precision among points whose recall
/// is at least that level.
pub fn ap_oracle(preds: &[PredInstance], gts: &[GtInstance], thr: f64) -> Option<f64> {
    if gts.is_empty() {
        return if preds.is_empty() { None } else { Some(0.0) };
    }
    let mut idx: Vec<usize> = (0..preds.len()).collect();
    // stable insertion sort by descending confidence
    for i in 1..idx.len() {
        let mut j = i;
        while j > 0 && preds[idx[j - 1]].confidence < preds[idx[j]].confidence {
            idx.swap(j - 1, j);
            j -= 1;
        }
    }
    let mut taken = vec![false; gts.len()];
    let mut points = Vec::new();
    let mut tp = 0;
    for (rank, &p) in idx.iter().enumerate() {
        let mut best = None;
        let mut best_iou = -1.0;
        for (g, gt) in gts.iter().enumerate() {
            let iou = iou_oracle(&preds[p].point_indices, &gt.point_indices);
            if !taken[g] && iou >= thr && iou > best_iou {
                best = Some(g);
                best_iou = iou;
            }
        }
        if let Some(g) = best {
            taken[g] = true;
            tp += 1;
        }
        points.push((tp as f64 / gts.len() as f64, tp as f64 / (rank + 1) as f64));
    }
    let mut levels: Vec<f64> = points.iter().map(|p| p.0).filter(|&r| r > 0.0).collect();
    levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
    levels.dedup();
    let mut ap = 0.0;
    let mut prev = 0.0;
    for r in levels {
        let best = points.iter().filter(|p| p.0 >= r).map(|p| p.1).fold(0.0, f64::max);
        ap += (r - prev) * best;
        prev = r;
    }
    Some(ap)
}

pub fn random_case(rng: &mut ChaCha8Rng, cat: &str) -> (Vec<PredInstance>, Vec<GtInstance>) {
    let universe = rng.random_range(5..40);
    let gts: Vec<GtInstance> = (0..rng.random_range(0..5))
        .map(|_| GtInstance { category: cat.into(), point_indices: random_set(rng, universe) })
        .collect();
    let preds = (0..rng.random_range(0..8))
        .map(|_| {
            // some predictions copy a GT with small edits so matches happen
            let pts = if !gts.is_empty() && rng.random::<bool>() {
                let mut v = gts[rng.random_range(0..gts.len())].point_indices.clone();
                if v.len() > 1 && rng.random::<bool>() {
                    v.remove(rng.random_range(0..v.len()));
                }
                v
            } else {
                random_set(rng, universe)
            };
            let confidence = rng.random_range(0..5) as f64 / 4.0;
            PredInstance { category: cat.into(), point_indices: pts, confidence }
        })
        .collect();
    (preds, gts)
}
