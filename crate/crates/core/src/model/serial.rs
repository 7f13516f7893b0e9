//! `HST1` binary tree files and the equivalent JSON text form.
//!
//! Binary layout, all integers and floats little-endian:
//!
//! ```text
//! "HST1"  u32 version  u32 N  u32 objects  u32 segments  u32 D
//! u32 next_id  u32 scene_id_len  scene_id (utf-8)
//! per object:  u32 id  f32 confidence  u32 flags  u32 count  count × u32
//! per segment: u32 id  u32 parent  u32 flags  u32 n_contrib  n_contrib × u32
//!              u32 count  count × u32
//! features:    objects then segments, D × f32 each
//! ```
//!
//! `flags` bit 0 is the feature's `observed` bit.

use std::path::Path;

use super::{FeatureVector, InstanceMask, ObjectNode, SceneTree, SegmentMask, SegmentNode};
use crate::error::{Error, Result};
use crate::io::binary::{ByteReader, ByteWriter};

pub const TREE_MAGIC: &[u8; 4] = b"HST1";
pub const TREE_VERSION: u32 = 1;

pub fn tree_to_bytes(tree: &SceneTree) -> Vec<u8> {
    let mut w = ByteWriter::default();
    w.bytes(TREE_MAGIC);
    w.u32(TREE_VERSION);
    w.u32(tree.num_points);
    w.u32(tree.objects.len() as u32);
    w.u32(tree.segments.len() as u32);
    w.u32(tree.dim);
    w.u32(tree.next_id);
    w.u32(tree.scene_id.len() as u32);
    w.bytes(tree.scene_id.as_bytes());
    for o in &tree.objects {
        w.u32(o.id);
        w.f32(o.mask.confidence);
        w.u32(o.feature.observed as u32);
        w.u32_run(&o.mask.point_indices);
    }
    for s in &tree.segments {
        w.u32(s.id);
        w.u32(s.mask.parent_object);
        w.u32(s.feature.observed as u32);
        w.u32_run(&s.mask.contributor_ids);
        w.u32_run(&s.mask.point_indices);
    }
    for f in tree
        .objects
        .iter()
        .map(|o| &o.feature)
        .chain(tree.segments.iter().map(|s| &s.feature))
    {
        for &v in &f.values {
            w.f32(v);
        }
    }
    w.into_inner()
}

pub fn tree_from_bytes(buf: &[u8]) -> Result<SceneTree> {
    let mut r = ByteReader::new(buf, "HST1 tree");
    if r.take(4)? != TREE_MAGIC {
        return Err(Error::parse("HST1 tree", "bad magic"));
    }
    let version = r.u32()?;
    if version != TREE_VERSION {
        return Err(Error::Unsupported(format!("HST1 version {version}")));
    }
    let num_points = r.u32()?;
    let n_obj = r.u32()? as usize;
    let n_seg = r.u32()? as usize;
    let dim = r.u32()?;
    let next_id = r.u32()?;
    let id_len = r.u32()? as usize;
    let scene_id = std::str::from_utf8(r.take(id_len)?)
        .map_err(|_| Error::parse("HST1 tree", "scene id is not utf-8"))?
        .to_string();

    let mut objects = Vec::with_capacity(n_obj.min(1 << 16));
    let mut observed = Vec::with_capacity(n_obj + n_seg);
    for _ in 0..n_obj {
        let id = r.u32()?;
        let confidence = r.f32()?;
        observed.push(r.u32()? & 1 == 1);
        let point_indices = r.u32_run()?;
        objects.push((id, InstanceMask { point_indices, confidence }));
    }
    let mut segments = Vec::with_capacity(n_seg.min(1 << 16));
    for _ in 0..n_seg {
        let id = r.u32()?;
        let parent_object = r.u32()?;
        observed.push(r.u32()? & 1 == 1);
        let contributor_ids = r.u32_run()?;
        let point_indices = r.u32_run()?;
        segments.push((
            id,
            SegmentMask {
                point_indices,
                parent_object,
                contributor_ids,
            },
        ));
    }
    let mut features = observed.into_iter().map(|obs| -> Result<FeatureVector> {
        let values = (0..dim).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
        Ok(FeatureVector { values, observed: obs })
    });
    let mut tree = SceneTree {
        scene_id,
        num_points,
        dim,
        next_id,
        objects: Vec::with_capacity(n_obj),
        segments: Vec::with_capacity(n_seg),
    };
    for (id, mask) in objects {
        let feature = features.next().unwrap()?;
        tree.objects.push(ObjectNode { id, mask, feature });
    }
    for (id, mask) in segments {
        let feature = features.next().unwrap()?;
        tree.segments.push(SegmentNode { id, mask, feature });
    }
    drop(features);
    if !r.is_empty() {
        return Err(Error::parse("HST1 tree", "trailing bytes"));
    }
    Ok(tree)
}

pub fn write_tree(tree: &SceneTree, path: &Path) -> Result<()> {
    std::fs::write(path, tree_to_bytes(tree)).map_err(|e| Error::io(path, e))
}

pub fn read_tree(path: &Path) -> Result<SceneTree> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    tree_from_bytes(&buf)
}

pub fn write_tree_text(tree: &SceneTree, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(tree).expect("tree serializes");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_tree_text(path: &Path) -> Result<SceneTree> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_tree;
    use proptest::prelude::*;

    fn featured_tree(values: &[f32], observed: bool) -> SceneTree {
        let mut t = build_tree(
            "scene-α",
            10,
            values.len(),
            vec![
                InstanceMask::new(vec![0, 2, 4, 6], 0.75).unwrap(),
                InstanceMask::new(vec![1, 3, 9], 0.5).unwrap(),
            ],
            vec![vec![vec![0, 2], vec![4, 6]], vec![vec![1, 3, 9]]],
        )
        .unwrap();
        for (i, s) in t.segments.iter_mut().enumerate() {
            if observed || i == 0 {
                s.feature = FeatureVector::observed(values.iter().map(|v| v * (i as f32 + 1.0)).collect());
            }
        }
        t.objects[1].feature = FeatureVector::observed(values.to_vec());
        t
    }

    #[test]
    fn header_layout() {
        let t = featured_tree(&[1.0, 2.0, 3.0], false);
        let b = tree_to_bytes(&t);
        assert_eq!(&b[0..4], b"HST1");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 10);
        assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(b[16..20].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(b[20..24].try_into().unwrap()), 3);
    }

    #[test]
    fn truncated_and_corrupt_inputs_are_errors() {
        let b = tree_to_bytes(&featured_tree(&[1.0, 2.0], true));
        for cut in [0, 3, 10, 30, b.len() - 1] {
            assert!(tree_from_bytes(&b[..cut]).is_err(), "cut at {cut}");
        }
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(tree_from_bytes(&bad).is_err());
        let mut long = b.clone();
        long.push(0);
        assert!(tree_from_bytes(&long).is_err());
    }

    proptest! {
        #[test]
        fn binary_and_text_round_trip(values in prop::collection::vec(-1e3f32..1e3, 1..24), observed: bool) {
            let t = featured_tree(&values, observed);
            let bytes = tree_to_bytes(&t);
            let back = tree_from_bytes(&bytes).unwrap();
            prop_assert_eq!(&back, &t);
            prop_assert_eq!(tree_to_bytes(&back), bytes);

            let text = serde_json::to_string(&t).unwrap();
            let from_text: SceneTree = serde_json::from_str(&text).unwrap();
            prop_assert_eq!(from_text, t);
        }
    }
}
