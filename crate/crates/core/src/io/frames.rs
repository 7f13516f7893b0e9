//! Frame manifests: one JSON object per line describing a posed RGB-D frame.
//!
//! ```text
//! {"frame_id":"000120","fx":500.0,"fy":500.0,"cx":319.5,"cy":239.5,
//!  "width":640,"height":480,"camera_to_world":[16 reals, row-major],
//!  "depth_path":"depth/000120.pgm","depth_scale":0.001,"rgb_path":null}
//! ```
//!
//! Camera axes follow the usual computer-vision convention: x right, y down,
//! z forward.

use std::io::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Matrix4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameManifestEntry {
    pub frame_id: String,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// Row-major 4×4 camera-to-world transform.
    pub camera_to_world: [f64; 16],
    pub depth_path: String,
    /// Meters per stored depth unit.
    pub depth_scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rgb_path: Option<String>,
}

impl FrameManifestEntry {
    pub fn pose(&self) -> Matrix4<f64> {
        Matrix4::from_row_slice(&self.camera_to_world)
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.pose().fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn camera_center(&self) -> [f64; 3] {
        let m = &self.camera_to_world;
        [m[3], m[7], m[11]]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |message: String| Error::InvalidFrame {
            frame: self.frame_id.clone(),
            message,
        };
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.fx.is_finite() || !self.fy.is_finite() {
            return Err(bad(format!("focal lengths must be positive (fx={}, fy={})", self.fx, self.fy)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(bad("image size must be nonzero".into()));
        }
        if !(self.depth_scale > 0.0) {
            return Err(bad(format!("depth_scale must be positive, got {}", self.depth_scale)));
        }
        if !self.camera_to_world.iter().chain([&self.cx, &self.cy]).all(|v| v.is_finite()) {
            return Err(bad("non-finite camera parameters".into()));
        }
        let m = &self.camera_to_world;
        if [m[12], m[13], m[14], m[15]] != [0.0, 0.0, 0.0, 1.0] {
            return Err(bad("pose bottom row must be (0, 0, 0, 1)".into()));
        }
        let r = self.rotation();
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if err > 1e-4 {
            return Err(bad(format!("rotation is not orthonormal (error {err:.2e})")));
        }
        let det = r.determinant();
        if (det - 1.0).abs() > 1e-4 {
            return Err(bad(format!("rotation is not orthonormal (determinant {det:.4})")));
        }
        Ok(())
    }
}

pub fn parse_frames(text: &str, context: &str) -> Result<Vec<FrameManifestEntry>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: FrameManifestEntry = serde_json::from_str(line)
            .map_err(|e| Error::parse(format!("{context}:{}", lineno + 1), e.to_string()))?;
        entry.validate()?;
        out.push(entry);
    }
    Ok(out)
}

pub fn load_frames(path: &Path) -> Result<Vec<FrameManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_frames(&text, &path.display().to_string())
}

pub fn frames_to_string(frames: &[FrameManifestEntry]) -> String {
    let mut s = String::new();
    for f in frames {
        s.push_str(&serde_json::to_string(f).expect("frame serializes"));
        s.push('\n');
    }
    s
}

pub fn write_frames(frames: &[FrameManifestEntry], path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(frames_to_string(frames).as_bytes())
        .map_err(|e| Error::io(path, e))
}
