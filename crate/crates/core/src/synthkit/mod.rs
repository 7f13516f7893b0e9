//! Synthetic scenes made of axis-aligned boxes: surface sampling, analytic
//! depth/label rendering, cameras and seeded random layouts.

mod bundle;

pub use bundle::{perturb_segments, write_bundle, BundleOptions, SyntheticCropProvider};

use std::collections::BTreeSet;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::SplitMix64;
use crate::error::{Error, Result};
use crate::io::{DepthImage, FrameManifestEntry, LabelImage, MaskFile, MaskRecord};
use crate::model::{build_tree, InstanceMask, PointCloud, SceneTree};
use crate::views::PinholeCamera;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartSpec {
    pub object_id: u32,
    pub part_id: u32,
    pub concept: String,
    pub min: [f64; 3],
    pub max: [f64; 3],
    /// Samples per meter along each face edge.
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub object_id: u32,
    pub concept: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthScene {
    pub scene_id: String,
    #[serde(default)]
    pub objects: Vec<ObjectSpec>,
    pub parts: Vec<PartSpec>,
    pub cameras: Vec<FrameManifestEntry>,
}

impl SynthScene {
    pub fn from_json(text: &str, context: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text).map_err(|e| Error::parse(context, e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serializes")
    }

    /// Object ids in first-appearance order.
    pub fn object_ids(&self) -> Vec<u32> {
        let mut seen = BTreeSet::new();
        self.parts.iter().map(|p| p.object_id).filter(|id| seen.insert(*id)).collect()
    }

    pub fn object_concept(&self, object_id: u32) -> String {
        self.objects
            .iter()
            .find(|o| o.object_id == object_id)
            .map(|o| o.concept.clone())
            .unwrap_or_else(|| format!("object {object_id}"))
    }

    pub fn part(&self, part_id: u32) -> Option<&PartSpec> {
        self.parts.iter().find(|p| p.part_id == part_id)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Error::parse("synthetic scene", m);
        let mut ids = BTreeSet::new();
        for p in &self.parts {
            if !ids.insert(p.part_id) {
                return Err(bad(format!("duplicate part id {}", p.part_id)));
            }
            if p.concept.trim().is_empty() {
                return Err(bad(format!("part {} has an empty concept", p.part_id)));
            }
            if (0..3).any(|a| !(p.min[a] < p.max[a])) || !(p.density > 0.0) {
                return Err(bad(format!("part {} has a degenerate box or density", p.part_id)));
            }
        }
        for (i, a) in self.parts.iter().enumerate() {
            for b in &self.parts[i + 1..] {
                if a.object_id == b.object_id && (0..3).all(|k| a.min[k] < b.max[k] && b.min[k] < a.max[k]) {
                    return Err(bad(format!("parts {} and {} overlap", a.part_id, b.part_id)));
                }
            }
        }
        if self.objects.iter().any(|o| o.concept.trim().is_empty()) {
            return Err(bad("object with an empty concept".into()));
        }
        for c in &self.cameras {
            c.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedScene {
    pub cloud: PointCloud,
    /// Part id of every point.
    pub point_part: Vec<u32>,
    /// Objects (with categories) and their parts, in scene order.
    pub gt: MaskFile,
}

impl GeneratedScene {
    pub fn gt_tree(&self, scene_id: &str, dim: usize) -> Result<SceneTree> {
        let objects = self.gt.instance_masks()?;
        let parts = self.gt.masks.iter().map(|m| m.parts.iter().map(|p| p.point_indices.clone()).collect()).collect();
        build_tree(scene_id, self.cloud.len(), dim, objects, parts)
    }
}

fn part_color(part_id: u32) -> [f32; 3] {
    let mut r = SplitMix64(part_id as u64 ^ 0x5eed);
    [0.3 + 0.6 * r.next_f64() as f32, 0.3 + 0.6 * r.next_f64() as f32, 0.3 + 0.6 * r.next_f64() as f32]
}

/// Stratified jittered samples on the six faces of every part box, with
/// exact outward normals. Each face of lengths `a × b` gets a
/// `round(a·density) × round(b·density)` grid (at least 1×1).
pub fn generate_scene(spec: &SynthScene, seed: u64) -> Result<GeneratedScene> {
    spec.validate()?;
    let mut rng = SplitMix64(seed);
    let mut positions = Vec::new();
    let mut normals = Vec::new();
    let mut colors = Vec::new();
    let mut point_part = Vec::new();
    let mut part_points: Vec<Vec<u32>> = Vec::with_capacity(spec.parts.len());
    for p in &spec.parts {
        let start = positions.len() as u32;
        for axis in 0..3 {
            let (ua, va) = ((axis + 1) % 3, (axis + 2) % 3);
            let (lu, lv) = (p.max[ua] - p.min[ua], p.max[va] - p.min[va]);
            let nu = ((lu * p.density).round() as usize).max(1);
            let nv = ((lv * p.density).round() as usize).max(1);
            for side in [0usize, 1] {
                let mut n = [0f32; 3];
                n[axis] = if side == 0 { -1.0 } else { 1.0 };
                let fixed = if side == 0 { p.min[axis] } else { p.max[axis] };
                for i in 0..nu {
                    for j in 0..nv {
                        let mut q = [0f64; 3];
                        q[axis] = fixed;
                        q[ua] = p.min[ua] + lu * (i as f64 + rng.next_f64()) / nu as f64;
                        q[va] = p.min[va] + lv * (j as f64 + rng.next_f64()) / nv as f64;
                        positions.push([q[0] as f32, q[1] as f32, q[2] as f32]);
                        normals.push(n);
                        colors.push(part_color(p.part_id));
                        point_part.push(p.part_id);
                    }
                }
            }
        }
        part_points.push((start..positions.len() as u32).collect());
    }
    let mut masks = Vec::new();
    for oid in spec.object_ids() {
        let mut all = Vec::new();
        let mut parts = Vec::new();
        for (p, pts) in spec.parts.iter().zip(&part_points) {
            if p.object_id == oid {
                all.extend_from_slice(pts);
                parts.push(MaskRecord::new(pts.clone()).with_category(p.concept.clone()));
            }
        }
        all.sort_unstable();
        let mut rec = MaskRecord::new(all).with_category(spec.object_concept(oid));
        rec.parts = parts;
        masks.push(rec);
    }
    let cloud = PointCloud { positions, normals: Some(normals), colors: Some(colors), faces: Vec::new() };
    Ok(GeneratedScene { cloud, point_part, gt: MaskFile { masks } })
}

/// Entry distance along `dir` of the ray `origin + t·dir`, if it hits the
/// box in front of the origin.
#[inline]
fn ray_box(origin: &[f64; 3], dir: &[f64; 3], min: &[f64; 3], max: &[f64; 3]) -> Option<f64> {
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for a in 0..3 {
        if dir[a] == 0.0 {
            if origin[a] < min[a] || origin[a] > max[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[a];
        let (mut n, mut f) = ((min[a] - origin[a]) * inv, (max[a] - origin[a]) * inv);
        if n > f {
            std::mem::swap(&mut n, &mut f);
        }
        t0 = t0.max(n);
        t1 = t1.min(f);
    }
    (t0 <= t1 && t0 > 0.0).then_some(t0)
}

/// Nearest part hit by a ray: `(t, part index)`. Equal distances go to the
/// earlier part.
pub fn cast_ray(scene: &SynthScene, origin: &[f64; 3], dir: &[f64; 3]) -> Option<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for (i, p) in scene.parts.iter().enumerate() {
        if let Some(t) = ray_box(origin, dir, &p.min, &p.max) {
            if best.is_none_or(|(bt, _)| t < bt) {
                best = Some((t, i));
            }
        }
    }
    best
}

/// Depth along the optical axis and part id for every pixel, casting rays
/// through pixel centers.
pub fn render(scene: &SynthScene, frame: &FrameManifestEntry) -> (DepthImage, LabelImage) {
    let cam = PinholeCamera::from_frame(frame);
    let (w, h) = (frame.width, frame.height);
    let origin = cam.center();
    let rows: Vec<(Vec<f32>, Vec<i32>)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut depth = Vec::with_capacity(w as usize);
            let mut label = Vec::with_capacity(w as usize);
            for x in 0..w {
                // camera-z component of the direction is 1, so t is depth
                let dir = cam.ray_direction(x as f64 + 0.5, y as f64 + 0.5);
                match cast_ray(scene, &origin, &dir) {
                    Some((t, i)) => {
                        depth.push(t as f32);
                        label.push(scene.parts[i].part_id as i32);
                    }
                    None => {
                        depth.push(0.0);
                        label.push(-1);
                    }
                }
            }
            (depth, label)
        })
        .collect();
    let (mut meters, mut labels) = (Vec::new(), Vec::new());
    for (d, l) in rows {
        meters.extend(d);
        labels.extend(l);
    }
    (DepthImage { width: w, height: h, meters }, LabelImage { width: w, height: h, labels })
}

pub fn render_depth(scene: &SynthScene, frame: &FrameManifestEntry) -> DepthImage {
    render(scene, frame).0
}

pub fn render_label_map(scene: &SynthScene, frame: &FrameManifestEntry) -> LabelImage {
    render(scene, frame).1
}

/// Whether the segment from the camera center to `p` is unobstructed by any
/// box other than the one `p` lies on (within `tolerance` of `p`).
pub fn ray_cast_visible(scene: &SynthScene, frame: &FrameManifestEntry, p: &[f64; 3], tolerance: f64) -> bool {
    let cam = PinholeCamera::from_frame(frame);
    let Some(proj) = cam.project(p) else { return false };
    if proj.pixel(frame.width, frame.height).is_none() {
        return false;
    }
    let o = cam.center();
    let dir = [(p[0] - o[0]) / proj.z, (p[1] - o[1]) / proj.z, (p[2] - o[2]) / proj.z];
    match cast_ray(scene, &o, &dir) {
        Some((t, _)) => t >= proj.z - tolerance,
        None => true,
    }
}

/// Camera-to-world (row-major) for a camera at `eye` looking at `target`
/// with world `up`; camera axes x right, y down, z forward.
pub fn look_at(eye: [f64; 3], target: [f64; 3], up: [f64; 3]) -> [f64; 16] {
    let e = Vector3::from(eye);
    let f = (Vector3::from(target) - e).normalize();
    let r = f.cross(&Vector3::from(up)).normalize();
    let d = f.cross(&r);
    [r.x, d.x, f.x, e.x, r.y, d.y, f.y, e.y, r.z, d.z, f.z, e.z, 0.0, 0.0, 0.0, 1.0]
}

pub fn camera(frame_id: &str, eye: [f64; 3], target: [f64; 3], width: u32, height: u32, focal: f64) -> FrameManifestEntry {
    FrameManifestEntry {
        frame_id: frame_id.to_string(),
        fx: focal,
        fy: focal,
        cx: width as f64 / 2.0,
        cy: height as f64 / 2.0,
        width,
        height,
        camera_to_world: look_at(eye, target, [0.0, 0.0, 1.0]),
        depth_path: format!("depth/{frame_id}.pgm"),
        depth_scale: 0.001,
        rgb_path: None,
    }
}

/// `n` cameras on two rings (alternately above and below `center`) looking
/// at it.
pub fn ring_cameras(n: usize, center: [f64; 3], radius: f64, width: u32, height: u32, focal: f64) -> Vec<FrameManifestEntry> {
    (0..n)
        .map(|i| {
            let a = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            let dz = if i % 2 == 0 { 0.6 * radius } else { -0.45 * radius };
            let eye = [center[0] + radius * a.cos(), center[1] + radius * a.sin(), center[2] + dz];
            camera(&format!("frame_{i:03}"), eye, center, width, height, focal)
        })
        .collect()
}

fn bbox(parts: &[PartSpec]) -> ([f64; 3], [f64; 3]) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in parts {
        for a in 0..3 {
            lo[a] = lo[a].min(p.min[a]);
            hi[a] = hi[a].max(p.max[a]);
        }
    }
    (lo, hi)
}

/// Chair: seat, back and four legs, with 20 ring cameras.
pub fn chair_scene() -> SynthScene {
    let density = 60.0;
    let mut parts = vec![
        PartSpec { object_id: 0, part_id: 0, concept: "seat".into(), min: [-0.25, -0.25, 0.5], max: [0.25, 0.25, 0.56], density },
        PartSpec { object_id: 0, part_id: 1, concept: "back".into(), min: [-0.25, 0.2, 0.66], max: [0.25, 0.25, 1.1], density },
    ];
    for (i, (x, y)) in [(-0.25, -0.25), (0.21, -0.25), (-0.25, 0.21), (0.21, 0.21)].into_iter().enumerate() {
        parts.push(PartSpec {
            object_id: 0,
            part_id: 2 + i as u32,
            concept: "leg".into(),
            min: [x, y, 0.0],
            max: [x + 0.04, y + 0.04, 0.4],
            density,
        });
    }
    SynthScene {
        scene_id: "chair".into(),
        objects: vec![ObjectSpec { object_id: 0, concept: "chair".into() }],
        parts,
        cameras: ring_cameras(20, [0.0, 0.0, 0.55], 2.2, 320, 240, 260.0),
    }
}

#[derive(Debug, Clone)]
pub struct RandomSceneConfig {
    pub objects: usize,
    pub min_parts: usize,
    pub max_parts: usize,
    pub cameras: usize,
    pub width: u32,
    pub height: u32,
    pub density: f64,
}

impl Default for RandomSceneConfig {
    fn default() -> Self {
        Self { objects: 3, min_parts: 2, max_parts: 6, cameras: 20, width: 320, height: 240, density: 60.0 }
    }
}

const KINDS: &[&str] = &["chair", "table", "lamp", "cabinet", "sofa", "shelf", "desk", "bed", "stool", "monitor"];
const PART_NAMES: &[&str] = &[
    "seat", "back", "leg", "top", "base", "arm", "door", "drawer", "handle", "shade", "pole", "panel", "cushion", "frame",
];

/// Picks `k` distinct entries of `pool`.
fn pick<'a>(rng: &mut SplitMix64, pool: &[&'a str], k: usize) -> Vec<&'a str> {
    let mut v: Vec<&str> = pool.to_vec();
    for i in 0..k.min(v.len()) {
        let j = i + (rng.next_u64() % (v.len() - i) as u64) as usize;
        v.swap(i, j);
    }
    v.truncate(k);
    v
}

/// Seeded layout: objects placed 1.4 m apart around a circle (distinct
/// kinds), each a stack of box parts with random extents and offsets,
/// separated vertically by 0.12–0.2 m. Part concepts are "{kind} {part}".
pub fn random_scene(seed: u64, cfg: &RandomSceneConfig) -> SynthScene {
    let mut rng = SplitMix64(seed ^ 0x9e6c_63d0_676a_9a99);
    let uni = |lo: f64, hi: f64, r: &mut SplitMix64| lo + (hi - lo) * r.next_f64();
    let kinds = pick(&mut rng, KINDS, cfg.objects);
    let ring = if cfg.objects > 1 { 0.7 / (std::f64::consts::PI / cfg.objects as f64).sin() } else { 0.0 };
    let mut objects = Vec::new();
    let mut parts = Vec::new();
    for (o, kind) in kinds.iter().enumerate() {
        let a = 2.0 * std::f64::consts::PI * o as f64 / cfg.objects as f64;
        let (ox, oy) = (ring * a.cos(), ring * a.sin());
        let n = cfg.min_parts + (rng.next_u64() % (cfg.max_parts - cfg.min_parts + 1) as u64) as usize;
        let names = pick(&mut rng, PART_NAMES, n);
        objects.push(ObjectSpec { object_id: o as u32, concept: kind.to_string() });
        let mut z = 0.0;
        for name in names {
            let (sx, sy, sz) = (uni(0.18, 0.4, &mut rng), uni(0.18, 0.4, &mut rng), uni(0.1, 0.25, &mut rng));
            let (dx, dy) = (uni(-0.1, 0.1, &mut rng), uni(-0.1, 0.1, &mut rng));
            let min = [ox + dx - sx / 2.0, oy + dy - sy / 2.0, z];
            parts.push(PartSpec {
                object_id: o as u32,
                part_id: parts.len() as u32,
                concept: format!("{kind} {name}"),
                min,
                max: [min[0] + sx, min[1] + sy, z + sz],
                density: cfg.density,
            });
            z += sz + uni(0.12, 0.2, &mut rng);
        }
    }
    let (lo, hi) = bbox(&parts);
    let center = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0, (lo[2] + hi[2]) / 2.0];
    let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
    let focal = cfg.width as f64 * 0.8;
    SynthScene {
        scene_id: format!("synth_{seed}"),
        objects,
        parts,
        cameras: ring_cameras(cfg.cameras, center, 1.6 * extent + 1.0, cfg.width, cfg.height, focal),
    }
}

/// Masks of a generated scene as predicted object instances (confidence 1).
pub fn object_masks(scene: &GeneratedScene) -> Result<Vec<InstanceMask>> {
    scene.gt.instance_masks()
}
