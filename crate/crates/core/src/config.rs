//! Pipeline parameters.
//!
//! Every field can be set from a flat `key = value` text file; keys are the
//! field names below. Lines starting with `#` are comments.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a segment's query score combines its own and its parent's similarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// Mean of the object and segment cosines.
    #[default]
    Avg,
    /// Larger of the object and segment cosines.
    Max,
    /// Objects scored alone.
    ObjectOnly,
    /// Segments scored alone.
    SegmentOnly,
}

impl ScoreMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreMode::Avg => "avg",
            ScoreMode::Max => "max",
            ScoreMode::ObjectOnly => "object",
            ScoreMode::SegmentOnly => "segment",
        }
    }
}

impl fmt::Display for ScoreMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScoreMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "avg" => Ok(ScoreMode::Avg),
            "max" => Ok(ScoreMode::Max),
            "object" | "object_only" => Ok(ScoreMode::ObjectOnly),
            "segment" | "segment_only" => Ok(ScoreMode::SegmentOnly),
            other => Err(Error::Config(format!("unknown score mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Felzenszwalb threshold constant.
    pub k_cluster: f64,
    pub min_segment_vertices: usize,
    /// Views kept per object.
    pub top_k_views: usize,
    /// Keep every n-th frame when ranking object views.
    pub frame_stride: usize,
    /// Crops per view.
    pub crop_levels: usize,
    pub k_exp_object: f64,
    pub k_exp_segment: f64,
    /// Proximity threshold for semantic merging, meters.
    pub thr_dist: f64,
    /// Cosine threshold for semantic merging.
    pub thr_feat: f64,
    pub feature_dim: usize,
    /// Absolute depth agreement required by the occlusion test, meters.
    pub depth_tolerance: f64,
    pub score_mode: ScoreMode,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k_cluster: 0.05,
            min_segment_vertices: 100,
            top_k_views: 5,
            frame_stride: 5,
            crop_levels: 3,
            k_exp_object: 0.2,
            k_exp_segment: 0.1,
            thr_dist: 0.07,
            thr_feat: 0.13,
            feature_dim: 1152,
            depth_tolerance: 0.05,
            score_mode: ScoreMode::Avg,
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "k_cluster",
    "min_segment_vertices",
    "top_k_views",
    "frame_stride",
    "crop_levels",
    "k_exp_object",
    "k_exp_segment",
    "thr_dist",
    "thr_feat",
    "feature_dim",
    "depth_tolerance",
    "score_mode",
];

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

impl PipelineConfig {
    /// Sets one field by name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "k_cluster" => self.k_cluster = parse_num(key, value)?,
            "min_segment_vertices" => self.min_segment_vertices = parse_num(key, value)?,
            "top_k_views" => self.top_k_views = parse_num(key, value)?,
            "frame_stride" => self.frame_stride = parse_num(key, value)?,
            "crop_levels" => self.crop_levels = parse_num(key, value)?,
            "k_exp_object" => self.k_exp_object = parse_num(key, value)?,
            "k_exp_segment" => self.k_exp_segment = parse_num(key, value)?,
            "thr_dist" => self.thr_dist = parse_num(key, value)?,
            "thr_feat" => self.thr_feat = parse_num(key, value)?,
            "feature_dim" => self.feature_dim = parse_num(key, value)?,
            "depth_tolerance" => self.depth_tolerance = parse_num(key, value)?,
            "score_mode" => self.score_mode = value.parse()?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "k_cluster" => self.k_cluster.to_string(),
            "min_segment_vertices" => self.min_segment_vertices.to_string(),
            "top_k_views" => self.top_k_views.to_string(),
            "frame_stride" => self.frame_stride.to_string(),
            "crop_levels" => self.crop_levels.to_string(),
            "k_exp_object" => self.k_exp_object.to_string(),
            "k_exp_segment" => self.k_exp_segment.to_string(),
            "thr_dist" => self.thr_dist.to_string(),
            "thr_feat" => self.thr_feat.to_string(),
            "feature_dim" => self.feature_dim.to_string(),
            "depth_tolerance" => self.depth_tolerance.to_string(),
            "score_mode" => self.score_mode.to_string(),
            _ => return None,
        })
    }

    /// Applies `key = value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value", lineno + 1))
            })?;
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        CONFIG_KEYS
            .iter()
            .map(|k| format!("{k} = {}\n", self.get(k).unwrap()))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("k_cluster", self.k_cluster),
            ("k_exp_object", self.k_exp_object),
            ("k_exp_segment", self.k_exp_segment),
            ("thr_dist", self.thr_dist),
            ("thr_feat", self.thr_feat),
            ("depth_tolerance", self.depth_tolerance),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        let counts = [
            ("min_segment_vertices", self.min_segment_vertices),
            ("top_k_views", self.top_k_views),
            ("frame_stride", self.frame_stride),
            ("crop_levels", self.crop_levels),
            ("feature_dim", self.feature_dim),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_published_constants() {
        let c = PipelineConfig::default();
        assert_eq!(c.k_cluster, 0.05);
        assert_eq!(c.min_segment_vertices, 100);
        assert_eq!(c.top_k_views, 5);
        assert_eq!(c.frame_stride, 5);
        assert_eq!(c.crop_levels, 3);
        assert_eq!(c.k_exp_object, 0.2);
        assert_eq!(c.k_exp_segment, 0.1);
        assert_eq!(c.thr_dist, 0.07);
        assert_eq!(c.thr_feat, 0.13);
        assert_eq!(c.feature_dim, 1152);
        assert_eq!(c.score_mode, ScoreMode::Avg);
        c.validate().unwrap();
    }

    #[test]
    fn text_round_trip() {
        let mut c = PipelineConfig::default();
        c.thr_feat = 0.25;
        c.score_mode = ScoreMode::Max;
        let mut back = PipelineConfig::default();
        back.apply_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = PipelineConfig::default();
        assert!(c.apply_text("nope = 3").is_err());
        assert!(c.apply_text("top_k_views = x").is_err());
        c.apply_text("# comment\n\ntop_k_views = 0").unwrap();
        assert!(c.validate().is_err());
        assert!("median".parse::<ScoreMode>().is_err());
    }
}
