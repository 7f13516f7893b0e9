//! End-to-end build: ingest → per-object segmentation → view selection and
//! object crops → segment fusion → semantic merging → tree.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::PipelineConfig;
use crate::embed::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::fusion::{frame_histogram, object_feature, pool_histograms, semantic_merge_logged, FrameData};
use crate::geoseg::{estimate_normals, segment_object};
use crate::io::{
    crop_key, load_frames, load_masks, load_point_cloud, read_embedding_archive, read_pgm16, CropManifestEntry,
    DepthImage, EmbeddingArchive, FrameManifestEntry, LabelImage, MaskFile,
};
use crate::model::{build_tree, resolve_overlaps, InstanceMask, PointCloud, SceneTree};
use crate::synthkit::{perturb_segments, BundleOptions, SynthScene, SyntheticCropProvider};
use crate::views::{mask_crop_boxes, rank_views, visibility_ratio, PinholeCamera};

/// File layout of a scene bundle directory.
pub mod paths {
    pub const CLOUD: &str = "cloud.ply";
    pub const FRAMES: &str = "frames.jsonl";
    pub const MASKS: &str = "masks.json";
    pub const GT: &str = "gt.json";
    pub const SEG2D: &str = "seg2d.emb";
    pub const CROPS: &str = "crops.jsonl";
    pub const CROP_EMBEDDINGS: &str = "crops.emb";
    pub const TEXT_EMBEDDINGS: &str = "text.emb";
    pub const SCENE_SPEC: &str = "scene.json";
    pub const SYNTH_OPTIONS: &str = "synthetic.json";
    pub const VOCAB: &str = "vocab.txt";
    pub const DEPTH_DIR: &str = "depth";
    pub const LABEL_DIR: &str = "labels";

    pub fn label_path(frame_id: &str) -> String {
        format!("{LABEL_DIR}/{frame_id}.pgm")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Segment,
    Views,
    ObjectFeatures,
    SegmentFeatures,
    Merge,
    Write,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Segment => "segment",
            Stage::Views => "views",
            Stage::ObjectFeatures => "object-features",
            Stage::SegmentFeatures => "segment-features",
            Stage::Merge => "merge",
            Stage::Write => "write",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("stage {stage}: {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

pub trait StageExt<T> {
    fn stage(self, stage: Stage) -> std::result::Result<T, StageError>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: Stage) -> std::result::Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

/// A scene directory: cloud, frame manifest, object masks, plus per-frame
/// depth and label images loaded on demand.
#[derive(Debug, Clone)]
pub struct SceneBundle {
    pub root: PathBuf,
    pub scene_id: String,
    pub cloud: PointCloud,
    pub frames: Vec<FrameManifestEntry>,
    pub masks: MaskFile,
}

impl SceneBundle {
    /// Loads `root`; `masks` overrides the bundle's mask file.
    pub fn load(root: &Path, masks: Option<&Path>) -> Result<Self> {
        let cloud = load_point_cloud(&root.join(paths::CLOUD))?;
        let frames = load_frames(&root.join(paths::FRAMES))?;
        let mask_path = masks.map(Path::to_path_buf).unwrap_or_else(|| root.join(paths::MASKS));
        let masks = load_masks(&mask_path)?;
        masks.validate(Some(cloud.len())).map_err(|e| Error::InvalidMask(format!("{}: {e}", mask_path.display())))?;
        let scene_id = root
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scene".into());
        Ok(Self { root: root.to_path_buf(), scene_id, cloud, frames, masks })
    }

    pub fn depth(&self, i: usize) -> Result<DepthImage> {
        let f = &self.frames[i];
        let raw = read_pgm16(&self.root.join(&f.depth_path))?;
        Ok(DepthImage::from_raw(&raw, f.depth_scale))
    }

    pub fn labels(&self, i: usize) -> Result<LabelImage> {
        let raw = read_pgm16(&self.root.join(paths::label_path(&self.frames[i].frame_id)))?;
        Ok(LabelImage::from_raw(&raw))
    }

    pub fn frame_data(&self, i: usize) -> Result<FrameData> {
        Ok(FrameData {
            frame_id: self.frames[i].frame_id.clone(),
            camera: PinholeCamera::from_frame(&self.frames[i]),
            depth: self.depth(i)?,
            labels: self.labels(i)?,
        })
    }

    pub fn seg2d(&self) -> Result<EmbeddingArchive> {
        read_embedding_archive(&self.root.join(paths::SEG2D))
    }

    /// Ground-truth object/part masks, validated against the cloud.
    pub fn gt(&self) -> Result<MaskFile> {
        let p = self.root.join(paths::GT);
        let gt = load_masks(&p)?;
        gt.validate(Some(self.cloud.len())).map_err(|e| Error::InvalidMask(format!("{}: {e}", p.display())))?;
        Ok(gt)
    }

    /// Gives the cloud normals, estimating them (oriented toward the mean
    /// camera center) when the file has none.
    pub fn ensure_normals(&mut self) {
        if self.cloud.normals.is_some() {
            return;
        }
        let viewpoint = if self.frames.is_empty() {
            None
        } else {
            let mut c = [0f64; 3];
            for f in &self.frames {
                let p = f.camera_center();
                for a in 0..3 {
                    c[a] += p[a] / self.frames.len() as f64;
                }
            }
            Some(c)
        };
        self.cloud.normals = Some(estimate_normals(&self.cloud, viewpoint));
    }

    /// Object masks after overlap resolution, with emptied masks dropped.
    /// Object `i` of the tree is element `i`.
    pub fn objects(&self) -> Result<Vec<InstanceMask>> {
        let masks = self.masks.instance_masks()?;
        Ok(resolve_overlaps(&masks).into_iter().filter(|m| !m.is_empty()).collect())
    }
}

/// Segments every object in parallel; optional noise moves a fraction of
/// each object's points to other segments.
pub fn segment_objects(
    cloud: &PointCloud,
    objects: &[InstanceMask],
    config: &PipelineConfig,
    noise: Option<(f64, u64)>,
) -> Result<Vec<Vec<Vec<u32>>>> {
    objects
        .par_iter()
        .enumerate()
        .map(|(i, m)| {
            let mut segs = segment_object(cloud, m, config)?;
            if let Some((fraction, seed)) = noise {
                perturb_segments(&mut segs, fraction, seed.wrapping_add(i as u64));
            }
            Ok(segs)
        })
        .collect()
}

/// Object crop boxes for the top views of every object. Visibility is
/// evaluated on every `frame_stride`-th frame, each depth image loaded once.
pub fn object_crop_manifest(
    bundle: &SceneBundle,
    objects: &[InstanceMask],
    config: &PipelineConfig,
) -> Result<Vec<CropManifestEntry>> {
    let stride = config.frame_stride.max(1);
    let candidates: Vec<usize> = (0..bundle.frames.len()).step_by(stride).collect();
    // per candidate frame: (ratio, boxes) for each object
    let per_frame: Vec<Vec<(f64, Vec<crate::views::CropBox>)>> = candidates
        .par_iter()
        .map(|&f| {
            let depth = bundle.depth(f)?;
            let frame = &bundle.frames[f];
            let cam = PinholeCamera::from_frame(frame);
            objects
                .iter()
                .map(|m| {
                    let r = visibility_ratio(&m.point_indices, &bundle.cloud, &cam, &depth, config.depth_tolerance)?;
                    let boxes = if r > 0.0 {
                        mask_crop_boxes(
                            &m.point_indices,
                            &bundle.cloud,
                            &cam,
                            &depth,
                            &frame.frame_id,
                            config.crop_levels,
                            config.k_exp_object,
                            config.depth_tolerance,
                        )?
                    } else {
                        Vec::new()
                    };
                    Ok((r, boxes))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut manifest = Vec::new();
    for (o, _) in objects.iter().enumerate() {
        let ratios: Vec<(usize, f64)> = candidates.iter().zip(&per_frame).map(|(&f, r)| (f, r[o].0)).collect();
        for f in rank_views(&ratios, config.top_k_views, stride) {
            let slot = f / stride;
            for b in &per_frame[slot][o].1 {
                manifest.push(CropManifestEntry {
                    key: crop_key(o as u32, &b.frame_id, b.level as usize),
                    node: o as u32,
                    crop: b.clone(),
                });
            }
        }
    }
    Ok(manifest)
}

/// Multi-scale boxes around every 2D segment of every frame, keyed
/// `{frame}/{seg2d}/{level}`, for the adapter that embeds 2D segments.
pub fn segment2d_crop_manifest(bundle: &SceneBundle, config: &PipelineConfig) -> Result<Vec<CropManifestEntry>> {
    let per_frame: Vec<Vec<CropManifestEntry>> = (0..bundle.frames.len())
        .into_par_iter()
        .map(|f| {
            let labels = bundle.labels(f)?;
            let frame = &bundle.frames[f];
            let mut pts: std::collections::BTreeMap<i32, Vec<(f64, f64)>> = Default::default();
            for y in 0..labels.height {
                for x in 0..labels.width {
                    if let Some(l) = labels.at(x, y) {
                        pts.entry(l).or_default().push((x as f64 + 0.5, y as f64 + 0.5));
                    }
                }
            }
            let mut out = Vec::new();
            for (l, p) in pts {
                let boxes = crate::views::crop_boxes(
                    &p,
                    config.crop_levels,
                    config.k_exp_segment,
                    frame.width,
                    frame.height,
                    &frame.frame_id,
                )?;
                for b in boxes {
                    out.push(CropManifestEntry {
                        key: format!("{}/{}/{}", frame.frame_id, l, b.level),
                        node: l as u32,
                        crop: b,
                    });
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(per_frame.concat())
}

/// Where object crop embeddings come from.
pub enum CropEmbeddings<'a> {
    Provider(&'a dyn EmbeddingProvider),
    /// Synthetic scenes: crop keys are answered from the rendered label maps.
    Synthetic { scene: SynthScene, options: BundleOptions },
}

#[derive(Debug, Clone, Default)]
pub struct BuildOptions {
    /// `(fraction, seed)` of points moved between segments after
    /// segmentation.
    pub segment_noise: Option<(f64, u64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildStats {
    pub objects: usize,
    pub segments_before_merge: usize,
    pub segments: usize,
    pub merges: usize,
    pub crops: usize,
    pub unobserved_objects: usize,
    pub unobserved_segments: usize,
}

#[derive(Debug, Clone)]
pub struct BuildOutput {
    pub tree: SceneTree,
    pub manifest: Vec<CropManifestEntry>,
    pub stats: BuildStats,
}

/// Runs the whole pipeline on a loaded bundle. `seg2d` holds the pixel
/// segment embeddings.
pub fn build(
    bundle: &mut SceneBundle,
    seg2d: &EmbeddingArchive,
    crops: CropEmbeddings<'_>,
    config: &PipelineConfig,
    options: &BuildOptions,
) -> std::result::Result<BuildOutput, StageError> {
    config.validate().stage(Stage::Ingest)?;
    let dim = config.feature_dim;
    if seg2d.dim() != dim {
        return Err(Error::DimMismatch { expected: dim, actual: seg2d.dim() }).stage(Stage::Ingest);
    }
    for f in &bundle.frames {
        f.validate().stage(Stage::Ingest)?;
    }
    bundle.ensure_normals();
    let objects = bundle.objects().stage(Stage::Ingest)?;
    log::info!("{}: {} objects, {} points", bundle.scene_id, objects.len(), bundle.cloud.len());

    let segments = segment_objects(&bundle.cloud, &objects, config, options.segment_noise).stage(Stage::Segment)?;
    let mut tree = build_tree(&bundle.scene_id, bundle.cloud.len(), dim, objects.clone(), segments)
        .stage(Stage::Segment)?;
    let segments_before_merge = tree.segments.len();

    let manifest = object_crop_manifest(bundle, &objects, config).stage(Stage::Views)?;
    let synthetic;
    let provider: &dyn EmbeddingProvider = match crops {
        CropEmbeddings::Provider(p) => p,
        CropEmbeddings::Synthetic { scene, options } => {
            let mut labels = HashMap::new();
            for (i, f) in bundle.frames.iter().enumerate() {
                if manifest.iter().any(|e| e.crop.frame_id == f.frame_id) {
                    labels.insert(f.frame_id.clone(), bundle.labels(i).stage(Stage::ObjectFeatures)?);
                }
            }
            synthetic = SyntheticCropProvider::new(&scene, &options, &manifest, labels).stage(Stage::ObjectFeatures)?;
            &synthetic
        }
    };
    if provider.dim() != dim {
        return Err(Error::DimMismatch { expected: dim, actual: provider.dim() }).stage(Stage::ObjectFeatures);
    }
    for (o, node) in tree.objects.iter_mut().enumerate() {
        let embs = manifest
            .iter()
            .filter(|e| e.node as usize == o)
            .map(|e| provider.embed_crop(&e.key))
            .collect::<Result<Vec<_>>>()
            .stage(Stage::ObjectFeatures)?;
        let refs: Vec<&[f32]> = embs.iter().map(|v| &v[..]).collect();
        node.feature = object_feature(&refs, dim).stage(Stage::ObjectFeatures)?;
    }

    let point_segment = tree.point_segment_map();
    let hists = (0..bundle.frames.len())
        .into_par_iter()
        .map(|i| {
            let frame = bundle.frame_data(i)?;
            frame_histogram(&point_segment, &bundle.cloud, &frame, config.depth_tolerance)
        })
        .collect::<Result<Vec<_>>>()
        .stage(Stage::SegmentFeatures)?;
    let feats = pool_histograms(&tree, &hists, seg2d).stage(Stage::SegmentFeatures)?;
    for (s, f) in tree.segments.iter_mut().zip(feats) {
        s.feature = f;
    }

    let (tree, steps) = semantic_merge_logged(&tree, &bundle.cloud, config).stage(Stage::Merge)?;
    let stats = BuildStats {
        objects: tree.objects.len(),
        segments_before_merge,
        segments: tree.segments.len(),
        merges: steps.len(),
        crops: manifest.len(),
        unobserved_objects: tree.objects.iter().filter(|o| !o.feature.observed).count(),
        unobserved_segments: tree.segments.iter().filter(|s| !s.feature.observed).count(),
    };
    Ok(BuildOutput { tree, manifest, stats })
}

/// Loads a synthetic bundle and builds it with the synthetic crop provider.
pub fn build_synthetic(
    root: &Path,
    config: &PipelineConfig,
    options: &BuildOptions,
) -> std::result::Result<(SceneBundle, BuildOutput), StageError> {
    let mut bundle = SceneBundle::load(root, None).stage(Stage::Ingest)?;
    let seg2d = bundle.seg2d().stage(Stage::Ingest)?;
    let (scene, opts) = load_synthetic(root).stage(Stage::Ingest)?;
    let out = build(&mut bundle, &seg2d, CropEmbeddings::Synthetic { scene, options: opts }, config, options)?;
    Ok((bundle, out))
}

/// Reads the synthetic scene spec and embedding options stored in a bundle
/// written by the synthetic generator.
pub fn load_synthetic(root: &Path) -> Result<(SynthScene, BundleOptions)> {
    let p = root.join(paths::SCENE_SPEC);
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let scene = SynthScene::from_json(&text, &p.display().to_string())?;
    let p = root.join(paths::SYNTH_OPTIONS);
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let opts = serde_json::from_str(&text).map_err(|e| Error::parse(p.display().to_string(), e.to_string()))?;
    Ok((scene, opts))
}
