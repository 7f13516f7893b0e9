//! Pinhole projection, depth-tested visibility, view ranking and multi-scale
//! crop boxes.
//!
//! A point projecting to `(u, v)` lands in pixel `(floor(u), floor(v))`; pixel
//! `(x, y)` covers `[x, x+1) × [y, y+1)`. The occlusion test compares the
//! point's camera depth with the depth sample of that pixel: pixels with no
//! valid depth count as occluded.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{DepthImage, FrameManifestEntry};
use crate::model::PointCloud;

/// Points with camera depth at or below this are behind the camera.
pub const MIN_DEPTH: f64 = 1e-6;

/// Smallest crop side in pixels.
pub const MIN_CROP_SIDE: f64 = 8.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PinholeCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    rot_c2w: Matrix3<f64>,
    center: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projected {
    pub u: f64,
    pub v: f64,
    /// Depth along the camera's optical axis, meters.
    pub z: f64,
}

impl Projected {
    /// Pixel containing the projection, if inside a `width × height` image.
    #[inline]
    pub fn pixel(&self, width: u32, height: u32) -> Option<(u32, u32)> {
        if self.u >= 0.0 && self.v >= 0.0 && self.u < width as f64 && self.v < height as f64 {
            Some((self.u as u32, self.v as u32))
        } else {
            None
        }
    }
}

impl PinholeCamera {
    pub fn from_frame(frame: &FrameManifestEntry) -> Self {
        let c = frame.camera_center();
        Self {
            fx: frame.fx,
            fy: frame.fy,
            cx: frame.cx,
            cy: frame.cy,
            width: frame.width,
            height: frame.height,
            rot_c2w: frame.rotation(),
            center: Vector3::new(c[0], c[1], c[2]),
        }
    }

    pub fn center(&self) -> [f64; 3] {
        [self.center.x, self.center.y, self.center.z]
    }

    /// World point to camera coordinates.
    #[inline]
    pub fn to_camera(&self, p: &[f64; 3]) -> Vector3<f64> {
        self.rot_c2w.tr_mul(&(Vector3::new(p[0], p[1], p[2]) - self.center))
    }

    /// `None` when the point is behind the camera.
    #[inline]
    pub fn project(&self, p: &[f64; 3]) -> Option<Projected> {
        let c = self.to_camera(p);
        if c.z <= MIN_DEPTH {
            return None;
        }
        Some(Projected {
            u: self.fx * c.x / c.z + self.cx,
            v: self.fy * c.y / c.z + self.cy,
            z: c.z,
        })
    }

    pub fn backproject(&self, u: f64, v: f64, z: f64) -> [f64; 3] {
        let c = Vector3::new((u - self.cx) / self.fx * z, (v - self.cy) / self.fy * z, z);
        let w = self.rot_c2w * c + self.center;
        [w.x, w.y, w.z]
    }

    /// World-space direction of the ray through `(u, v)`, scaled so its
    /// camera-z component is 1.
    pub fn ray_direction(&self, u: f64, v: f64) -> [f64; 3] {
        let d = self.rot_c2w * Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0);
        [d.x, d.y, d.z]
    }

    fn check_depth(&self, depth: &DepthImage) -> Result<()> {
        if depth.width != self.width || depth.height != self.height {
            return Err(Error::parse(
                "depth image",
                format!(
                    "size {}x{} does not match frame {}x{}",
                    depth.width, depth.height, self.width, self.height
                ),
            ));
        }
        Ok(())
    }
}

/// `project_point` for a manifest entry.
pub fn project_point(p: &[f64; 3], frame: &FrameManifestEntry) -> Option<Projected> {
    PinholeCamera::from_frame(frame).project(p)
}

/// Projection and pixel of `p` when it passes the occlusion test.
#[inline]
pub fn visible_pixel(
    p: &[f64; 3],
    cam: &PinholeCamera,
    depth: &DepthImage,
    tolerance: f64,
) -> Option<(Projected, u32, u32)> {
    let proj = cam.project(p)?;
    let (x, y) = proj.pixel(cam.width, cam.height)?;
    let d = depth.at(x, y)? as f64;
    ((proj.z - d).abs() <= tolerance).then_some((proj, x, y))
}

/// Fraction of the mask's points that are in front of the camera, inside the
/// image and agree with the depth map.
pub fn visibility_ratio(
    indices: &[u32],
    cloud: &PointCloud,
    cam: &PinholeCamera,
    depth: &DepthImage,
    tolerance: f64,
) -> Result<f64> {
    cam.check_depth(depth)?;
    if indices.is_empty() {
        return Ok(0.0);
    }
    let visible = indices
        .iter()
        .filter(|&&i| visible_pixel(&cloud.point(i), cam, depth, tolerance).is_some())
        .count();
    Ok(visible as f64 / indices.len() as f64)
}

/// Frame indices divisible by `stride`, ranked by descending ratio (ties by
/// frame order), zero ratios dropped, at most `k` kept.
pub fn rank_views(ratios: &[(usize, f64)], k: usize, stride: usize) -> Vec<usize> {
    let mut cands: Vec<(usize, f64)> = ratios
        .iter()
        .copied()
        .filter(|&(f, r)| f % stride.max(1) == 0 && r > 0.0)
        .collect();
    cands.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    cands.truncate(k);
    cands.into_iter().map(|(f, _)| f).collect()
}

/// Top-`k` frames for a mask after keeping every `stride`-th frame.
pub fn select_topk_views(
    indices: &[u32],
    cloud: &PointCloud,
    cameras: &[PinholeCamera],
    depths: &[DepthImage],
    k: usize,
    stride: usize,
    tolerance: f64,
) -> Result<Vec<usize>> {
    let mut ratios = Vec::new();
    for (f, (cam, depth)) in cameras.iter().zip(depths).enumerate() {
        if f % stride.max(1) != 0 {
            continue;
        }
        ratios.push((f, visibility_ratio(indices, cloud, cam, depth, tolerance)?));
    }
    Ok(rank_views(&ratios, k, stride))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropBox {
    pub frame_id: String,
    pub level: u32,
    /// Inclusive.
    pub x_min: u32,
    pub y_min: u32,
    /// Exclusive.
    pub x_max: u32,
    pub y_max: u32,
}

impl CropBox {
    pub fn area(&self) -> u64 {
        (self.x_max - self.x_min) as u64 * (self.y_max - self.y_min) as u64
    }
}

/// Unclamped real-valued box `(x0, y0, x1, y1)` for each level.
pub fn crop_extents(points: &[(f64, f64)], levels: usize, k_exp: f64) -> Result<Vec<[f64; 4]>> {
    if points.is_empty() {
        return Err(Error::Empty("no visible points to crop"));
    }
    let (mut x0, mut y0) = (f64::INFINITY, f64::INFINITY);
    let (mut x1, mut y1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &(u, v) in points {
        x0 = x0.min(u.floor());
        y0 = y0.min(v.floor());
        x1 = x1.max(u.floor() + 1.0);
        y1 = y1.max(v.floor() + 1.0);
    }
    let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
    let hw = ((x1 - x0) / 2.0).max(MIN_CROP_SIDE / 2.0);
    let hh = ((y1 - y0) / 2.0).max(MIN_CROP_SIDE / 2.0);
    Ok((0..levels)
        .map(|l| {
            let s = 1.0 + l as f64 * k_exp;
            [cx - hw * s, cy - hh * s, cx + hw * s, cy + hh * s]
        })
        .collect())
}

/// `levels` nested boxes around projected points: level 0 is the tightest
/// pixel box (at least 8×8), level `l` scales it by `1 + l·k_exp` about its
/// center, then every box is clamped to the image.
pub fn crop_boxes(
    points: &[(f64, f64)],
    levels: usize,
    k_exp: f64,
    width: u32,
    height: u32,
    frame_id: &str,
) -> Result<Vec<CropBox>> {
    let clamp = |v: f64, hi: u32| v.clamp(0.0, hi as f64) as u32;
    crop_extents(points, levels, k_exp)?
        .into_iter()
        .enumerate()
        .map(|(level, [x0, y0, x1, y1])| {
            let b = CropBox {
                frame_id: frame_id.to_string(),
                level: level as u32,
                x_min: clamp(x0.floor(), width),
                y_min: clamp(y0.floor(), height),
                x_max: clamp(x1.ceil(), width),
                y_max: clamp(y1.ceil(), height),
            };
            if b.x_min >= b.x_max || b.y_min >= b.y_max {
                return Err(Error::Empty("crop box lies outside the image"));
            }
            Ok(b)
        })
        .collect()
}

/// Crop boxes for the visible points of a mask in one frame.
pub fn mask_crop_boxes(
    indices: &[u32],
    cloud: &PointCloud,
    cam: &PinholeCamera,
    depth: &DepthImage,
    frame_id: &str,
    levels: usize,
    k_exp: f64,
    tolerance: f64,
) -> Result<Vec<CropBox>> {
    cam.check_depth(depth)?;
    let pts: Vec<(f64, f64)> = indices
        .iter()
        .filter_map(|&i| visible_pixel(&cloud.point(i), cam, depth, tolerance))
        .map(|(p, _, _)| (p.u, p.v))
        .collect();
    crop_boxes(&pts, levels, k_exp, cam.width, cam.height, frame_id)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn frame_at_origin() -> FrameManifestEntry {
        FrameManifestEntry {
            frame_id: "f".into(),
            fx: 500.0,
            fy: 500.0,
            cx: 320.0,
            cy: 240.0,
            width: 640,
            height: 480,
            camera_to_world: [1., 0., 0., 0., 0., 1., 0., 0., 0., 0., 1., 0., 0., 0., 0., 1.],
            depth_path: String::new(),
            depth_scale: 0.001,
            rgb_path: None,
        }
    }

    #[test]
    fn optical_axis_and_behind() {
        let f = frame_at_origin();
        let p = project_point(&[0.0, 0.0, 2.0], &f).unwrap();
        assert_eq!((p.u, p.v, p.z), (320.0, 240.0, 2.0));
        assert!(project_point(&[0.0, 0.0, -1.0], &f).is_none());
        assert!(project_point(&[1.0, 0.0, 0.0], &f).is_none());
    }

    #[test]
    fn all_behind_is_zero_visibility() {
        let cam = PinholeCamera::from_frame(&frame_at_origin());
        let cloud = PointCloud::from_positions(vec![[0.0, 0.0, -1.0], [0.1, 0.0, -2.0]]);
        let depth = DepthImage { width: 640, height: 480, meters: vec![1.0; 640 * 480] };
        assert_eq!(visibility_ratio(&[0, 1], &cloud, &cam, &depth, 0.05).unwrap(), 0.0);
        let small = DepthImage { width: 2, height: 2, meters: vec![1.0; 4] };
        assert!(visibility_ratio(&[0], &cloud, &cam, &small, 0.05).is_err());
    }

    #[test]
    fn invalid_depth_counts_as_occluded() {
        let cam = PinholeCamera::from_frame(&frame_at_origin());
        let cloud = PointCloud::from_positions(vec![[0.0, 0.0, 1.0]]);
        let mut depth = DepthImage { width: 640, height: 480, meters: vec![0.0; 640 * 480] };
        assert_eq!(visibility_ratio(&[0], &cloud, &cam, &depth, 0.05).unwrap(), 0.0);
        depth.meters[240 * 640 + 320] = 1.02;
        assert_eq!(visibility_ratio(&[0], &cloud, &cam, &depth, 0.05).unwrap(), 1.0);
        depth.meters[240 * 640 + 320] = 0.9;
        assert_eq!(visibility_ratio(&[0], &cloud, &cam, &depth, 0.05).unwrap(), 0.0);
    }

    #[test]
    fn ranking_with_stride_and_ties() {
        let ratios = [(0, 0.5), (1, 0.9), (2, 0.5), (4, 0.7), (6, 0.0), (8, 0.5)];
        assert_eq!(rank_views(&ratios, 10, 2), vec![4, 0, 2, 8]);
        assert_eq!(rank_views(&ratios, 2, 2), vec![4, 0]);
        assert_eq!(rank_views(&ratios, 3, 1), vec![1, 4, 0]);
    }

    #[test]
    fn default_view_count() {
        assert_eq!(crate::config::PipelineConfig::default().top_k_views, 5);
    }

    #[test]
    fn single_point_crop_is_8x8() {
        let b = crop_boxes(&[(100.3, 50.7)], 1, 0.2, 640, 480, "f").unwrap();
        // pixel [100, 101) inflated about 100.5 to [96.5, 104.5]
        assert_eq!((b[0].x_min, b[0].x_max, b[0].y_min, b[0].y_max), (96, 105, 46, 55));
        assert_eq!(b[0].x_max - b[0].x_min, 9);
        let pts = [(10.2, 10.2), (30.9, 40.1)];
        let b = crop_boxes(&pts, 1, 0.2, 640, 480, "f").unwrap();
        assert_eq!((b[0].x_min, b[0].y_min, b[0].x_max, b[0].y_max), (10, 10, 31, 41));
    }

    #[test]
    fn border_crops_are_clamped() {
        // tight box x ∈ [600, 640), y ∈ [20, 60): center (620, 40), half 20 × 20
        let pts = [(600.0, 20.0), (639.5, 59.5)];
        let b = crop_boxes(&pts, 3, 0.2, 640, 480, "f").unwrap();
        assert_eq!((b[0].x_min, b[0].y_min, b[0].x_max, b[0].y_max), (600, 20, 640, 60));
        // level 1: half 24 → [596, 644) clamped to 640; y [16, 64)
        assert_eq!((b[1].x_min, b[1].y_min, b[1].x_max, b[1].y_max), (596, 16, 640, 64));
        // level 2: half 28 → x [592, 648) → 640; y [12, 68)
        assert_eq!((b[2].x_min, b[2].y_min, b[2].x_max, b[2].y_max), (592, 12, 640, 68));
        let b = crop_boxes(&[(1.0, 1.0), (11.0, 11.0)], 3, 0.5, 640, 480, "f").unwrap();
        assert_eq!((b[2].x_min, b[2].y_min), (0, 0));
        assert!(crop_boxes(&[], 3, 0.2, 640, 480, "f").is_err());
    }

    #[test]
    fn crop_levels_nested() {
        let pts = [(100.0, 100.0), (180.0, 150.0)];
        let ext = crop_extents(&pts, 4, 0.2).unwrap();
        for w in ext.windows(2) {
            let a0 = (w[0][2] - w[0][0]) * (w[0][3] - w[0][1]);
            let a1 = (w[1][2] - w[1][0]) * (w[1][3] - w[1][1]);
            assert!(a1 >= a0);
        }
    }
}
