use std::fmt;

use serde::{Deserialize, Serialize};

use super::{check_index_list, FeatureVector, InstanceMask, NodeId, ObjectNode, SceneTree, SegmentMask, SegmentNode};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    EmptyMask,
    UnsortedIndices,
    IndexOutOfRange,
    DuplicateNodeId,
    MissingParent,
    EmptyContributors,
    /// Segment point outside its parent object.
    NotSubset,
    SegmentOverlap,
    /// Object mask differs from the union of its segments.
    Coverage,
    ObjectOverlap,
    FeatureDim,
    NonFiniteFeature,
    UnobservedNonZero,
}

impl Rule {
    pub fn as_str(self) -> &'static str {
        match self {
            Rule::EmptyMask => "empty-mask",
            Rule::UnsortedIndices => "unsorted-indices",
            Rule::IndexOutOfRange => "index-out-of-range",
            Rule::DuplicateNodeId => "duplicate-node-id",
            Rule::MissingParent => "missing-parent",
            Rule::EmptyContributors => "empty-contributors",
            Rule::NotSubset => "not-subset",
            Rule::SegmentOverlap => "segment-overlap",
            Rule::Coverage => "coverage",
            Rule::ObjectOverlap => "object-overlap",
            Rule::FeatureDim => "feature-dim",
            Rule::NonFiniteFeature => "non-finite-feature",
            Rule::UnobservedNonZero => "unobserved-non-zero",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub node: NodeId,
    pub rule: Rule,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "node {}: {} ({})", self.node, self.rule.as_str(), self.detail)
    }
}

/// Assigns each point claimed by several masks to the most confident one
/// (ties go to the earlier mask). Masks left empty are dropped.
pub fn resolve_overlaps(masks: &[InstanceMask]) -> Vec<InstanceMask> {
    use std::collections::HashMap;

    let mut owner: HashMap<u32, usize> = HashMap::new();
    for (mi, m) in masks.iter().enumerate() {
        for &p in &m.point_indices {
            owner
                .entry(p)
                .and_modify(|cur| {
                    if m.confidence > masks[*cur].confidence {
                        *cur = mi;
                    }
                })
                .or_insert(mi);
        }
    }
    masks
        .iter()
        .enumerate()
        .filter_map(|(mi, m)| {
            let kept: Vec<u32> = m
                .point_indices
                .iter()
                .copied()
                .filter(|p| owner[p] == mi)
                .collect();
            if kept.is_empty() {
                log::warn!("mask {mi} lost all points to more confident masks; dropped");
                None
            } else {
                Some(InstanceMask {
                    point_indices: kept,
                    confidence: m.confidence,
                })
            }
        })
        .collect()
}

/// Builds a featureless tree. Objects get ids `0..M` in input order, segments
/// follow in (object, segment) order. Each segment's contributor set is its
/// own id.
pub fn build_tree(
    scene_id: &str,
    num_points: usize,
    dim: usize,
    objects: Vec<InstanceMask>,
    segments_per_object: Vec<Vec<Vec<u32>>>,
) -> Result<SceneTree> {
    if objects.len() != segments_per_object.len() {
        return Err(Error::LengthMismatch {
            expected: objects.len(),
            actual: segments_per_object.len(),
        });
    }
    for o in &objects {
        check_index_list(&o.point_indices, Some(num_points))?;
    }
    let mut next_id = objects.len() as NodeId;
    let mut segments = Vec::new();
    for (oi, (obj, segs)) in objects.iter().zip(segments_per_object).enumerate() {
        for (si, mut idx) in segs.into_iter().enumerate() {
            idx.sort_unstable();
            check_index_list(&idx, Some(num_points))?;
            if let Some(&p) = idx.iter().find(|&&p| !obj.contains(p)) {
                return Err(Error::OverlapViolation {
                    object: oi as NodeId,
                    segment: si,
                    point: p,
                });
            }
            segments.push(SegmentNode {
                id: next_id,
                mask: SegmentMask {
                    point_indices: idx,
                    parent_object: oi as NodeId,
                    contributor_ids: vec![next_id],
                },
                feature: FeatureVector::zeros(dim),
            });
            next_id += 1;
        }
    }
    let tree = SceneTree {
        scene_id: scene_id.to_string(),
        num_points: num_points as u32,
        dim: dim as u32,
        next_id,
        objects: objects
            .into_iter()
            .enumerate()
            .map(|(i, mask)| ObjectNode {
                id: i as NodeId,
                mask,
                feature: FeatureVector::zeros(dim),
            })
            .collect(),
        segments,
    };
    let violations = validate_tree(&tree);
    if violations.is_empty() {
        Ok(tree)
    } else {
        Err(Error::Invariant(violations))
    }
}

fn check_indices(node: NodeId, idx: &[u32], n: u32, out: &mut Vec<Violation>) -> bool {
    if idx.is_empty() {
        out.push(Violation {
            node,
            rule: Rule::EmptyMask,
            detail: "no points".into(),
        });
        return false;
    }
    if let Some(w) = idx.windows(2).find(|w| w[0] >= w[1]) {
        out.push(Violation {
            node,
            rule: Rule::UnsortedIndices,
            detail: format!("{} followed by {}", w[0], w[1]),
        });
        return false;
    }
    if *idx.last().unwrap() >= n {
        out.push(Violation {
            node,
            rule: Rule::IndexOutOfRange,
            detail: format!("index {} >= {}", idx.last().unwrap(), n),
        });
        return false;
    }
    true
}

fn check_feature(node: NodeId, f: &FeatureVector, dim: u32, out: &mut Vec<Violation>) {
    if f.dim() != dim as usize {
        out.push(Violation {
            node,
            rule: Rule::FeatureDim,
            detail: format!("{} != {}", f.dim(), dim),
        });
    }
    if !f.values.iter().all(|v| v.is_finite()) {
        out.push(Violation {
            node,
            rule: Rule::NonFiniteFeature,
            detail: "feature has NaN or inf".into(),
        });
    }
    if !f.observed && !f.is_zero() {
        out.push(Violation {
            node,
            rule: Rule::UnobservedNonZero,
            detail: "unobserved feature is not zero".into(),
        });
    }
}

/// Reports every broken tree invariant; empty iff the tree is well formed.
pub fn validate_tree(tree: &SceneTree) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = tree.num_points;

    let mut seen_ids = std::collections::HashSet::new();
    for id in tree
        .objects
        .iter()
        .map(|o| o.id)
        .chain(tree.segments.iter().map(|s| s.id))
    {
        if !seen_ids.insert(id) {
            out.push(Violation {
                node: id,
                rule: Rule::DuplicateNodeId,
                detail: "id used more than once".into(),
            });
        }
    }

    // point -> owning object index
    let mut obj_owner: Vec<u32> = vec![u32::MAX; n as usize];
    let mut valid_obj = vec![false; tree.objects.len()];
    for (oi, o) in tree.objects.iter().enumerate() {
        check_feature(o.id, &o.feature, tree.dim, &mut out);
        if !check_indices(o.id, &o.mask.point_indices, n, &mut out) {
            continue;
        }
        valid_obj[oi] = true;
        let mut clash = None;
        for &p in &o.mask.point_indices {
            let slot = &mut obj_owner[p as usize];
            if *slot == u32::MAX {
                *slot = oi as u32;
            } else if clash.is_none() {
                clash = Some((p, *slot));
            }
        }
        if let Some((p, other)) = clash {
            out.push(Violation {
                node: o.id,
                rule: Rule::ObjectOverlap,
                detail: format!("point {p} also in object {}", tree.objects[other as usize].id),
            });
        }
    }

    let mut seg_owner: Vec<u32> = vec![u32::MAX; n as usize];
    let mut covered = vec![0usize; tree.objects.len()];
    for (si, s) in tree.segments.iter().enumerate() {
        check_feature(s.id, &s.feature, tree.dim, &mut out);
        if s.mask.contributor_ids.is_empty() {
            out.push(Violation {
                node: s.id,
                rule: Rule::EmptyContributors,
                detail: "no contributor ids".into(),
            });
        }
        let parent = tree.object_index(s.mask.parent_object);
        let Some(parent) = parent else {
            out.push(Violation {
                node: s.id,
                rule: Rule::MissingParent,
                detail: format!("parent {} not found", s.mask.parent_object),
            });
            continue;
        };
        if !check_indices(s.id, &s.mask.point_indices, n, &mut out) {
            continue;
        }
        let mut outside = None;
        let mut overlap = None;
        for &p in &s.mask.point_indices {
            if obj_owner[p as usize] != parent as u32 || !valid_obj[parent] {
                if outside.is_none() && !tree.objects[parent].mask.contains(p) {
                    outside = Some(p);
                }
            }
            let slot = &mut seg_owner[p as usize];
            if *slot == u32::MAX {
                *slot = si as u32;
                if obj_owner[p as usize] == parent as u32 {
                    covered[parent] += 1;
                }
            } else if overlap.is_none() {
                overlap = Some((p, *slot));
            }
        }
        if let Some(p) = outside {
            out.push(Violation {
                node: s.id,
                rule: Rule::NotSubset,
                detail: format!("point {p} not in object {}", s.mask.parent_object),
            });
        }
        if let Some((p, other)) = overlap {
            out.push(Violation {
                node: s.id,
                rule: Rule::SegmentOverlap,
                detail: format!("point {p} also in segment {}", tree.segments[other as usize].id),
            });
        }
    }

    for (oi, o) in tree.objects.iter().enumerate() {
        if !valid_obj[oi] {
            continue;
        }
        // Points shared with another object are not owned by this one, so
        // count coverage against owned points only.
        let owned = o
            .mask
            .point_indices
            .iter()
            .filter(|&&p| obj_owner[p as usize] == oi as u32)
            .count();
        if covered[oi] != owned {
            out.push(Violation {
                node: o.id,
                rule: Rule::Coverage,
                detail: format!("{} of {} points covered by segments", covered[oi], owned),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(idx: &[u32]) -> InstanceMask {
        InstanceMask::new(idx.to_vec(), 1.0).unwrap()
    }

    /// Two objects of 6 points, three 2-point segments each.
    fn fixture() -> SceneTree {
        build_tree(
            "fx",
            12,
            4,
            vec![mask(&[0, 1, 2, 3, 4, 5]), mask(&[6, 7, 8, 9, 10, 11])],
            vec![
                vec![vec![0, 1], vec![2, 3], vec![4, 5]],
                vec![vec![6, 7], vec![8, 9], vec![10, 11]],
            ],
        )
        .unwrap()
    }

    #[test]
    fn empty_scene() {
        let t = build_tree("empty", 0, 8, vec![], vec![]).unwrap();
        assert!(t.objects.is_empty());
        assert!(t.segments.is_empty());
        assert!(validate_tree(&t).is_empty());
    }

    #[test]
    fn two_objects_three_segments() {
        let t = fixture();
        assert_eq!(t.objects.len(), 2);
        assert_eq!(t.segments.len(), 6);
        let ids: Vec<_> = t.segments.iter().map(|s| s.id).collect();
        assert_eq!(ids, vec![2, 3, 4, 5, 6, 7]);
        let parents: Vec<_> = t.segments.iter().map(|s| s.mask.parent_object).collect();
        assert_eq!(parents, vec![0, 0, 0, 1, 1, 1]);
        assert_eq!(t.segments[4].mask.contributor_ids, vec![6]);
        assert_eq!(t.next_id, 8);
        assert!(validate_tree(&t).is_empty());
    }

    #[test]
    fn segment_outside_object_is_rejected() {
        let err = build_tree(
            "bad",
            6,
            4,
            vec![mask(&[0, 1, 2]), mask(&[3, 4, 5])],
            vec![vec![vec![0, 1, 3]], vec![vec![4, 5]]],
        )
        .unwrap_err();
        assert!(matches!(err, Error::OverlapViolation { point: 3, .. }), "{err}");
    }

    #[test]
    fn empty_and_duplicate_masks_are_rejected() {
        assert!(build_tree("x", 4, 4, vec![mask(&[0, 1])], vec![vec![vec![]]]).is_err());
        assert!(build_tree("x", 4, 4, vec![mask(&[0, 1])], vec![vec![vec![0, 0, 1]]]).is_err());
        // coverage failure surfaces as an invariant error
        let err = build_tree("x", 4, 4, vec![mask(&[0, 1])], vec![vec![vec![0]]]).unwrap_err();
        assert!(matches!(err, Error::Invariant(_)));
    }

    #[test]
    fn shared_point_is_one_overlap_violation() {
        let mut t = fixture();
        t.segments[1].mask.point_indices = vec![1, 2, 3];
        let v = validate_tree(&t);
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].rule, Rule::SegmentOverlap);
        assert_eq!(v[0].node, 3);
    }

    #[test]
    fn dropped_point_is_one_coverage_violation() {
        let mut t = fixture();
        t.segments[4].mask.point_indices = vec![8];
        let v = validate_tree(&t);
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].rule, Rule::Coverage);
        assert_eq!(v[0].node, 1);
    }

    #[test]
    fn unobserved_nonzero_feature_is_flagged() {
        let mut t = fixture();
        t.objects[0].feature.values[0] = 1.0;
        let v = validate_tree(&t);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, Rule::UnobservedNonZero);
    }

    #[test]
    fn overlapping_predictions_resolved_by_confidence() {
        let a = InstanceMask::new(vec![0, 1, 2, 3], 0.6).unwrap();
        let b = InstanceMask::new(vec![2, 3, 4], 0.9).unwrap();
        let c = InstanceMask::new(vec![4, 5], 0.9).unwrap();
        let out = resolve_overlaps(&[a, b, c]);
        assert_eq!(out[0].point_indices, vec![0, 1]);
        assert_eq!(out[1].point_indices, vec![2, 3, 4]);
        // tie on point 4 goes to the earlier mask
        assert_eq!(out[2].point_indices, vec![5]);

        let swallowed = InstanceMask::new(vec![7], 0.1).unwrap();
        let big = InstanceMask::new(vec![7, 8], 0.2).unwrap();
        assert_eq!(resolve_overlaps(&[swallowed, big]).len(), 1);
    }
}
