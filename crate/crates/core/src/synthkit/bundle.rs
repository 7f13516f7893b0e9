//! Writing synthetic scenes as ordinary scene bundles, and the synthetic
//! stand-in for the crop-embedding adapter.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{generate_scene, render, GeneratedScene, SynthScene};
use crate::embed::{add_noise, concept_key, EmbeddingProvider, SplitMix64, SyntheticConceptEmbedder};
use crate::error::{Error, Result};
use crate::io::{
    segment2d_key, write_embedding_archive, write_frames, write_masks, write_pgm16, write_point_cloud,
    CropManifestEntry, EmbeddingArchive, LabelImage, MaskFile, MaskRecord, PlyFormat,
};
use crate::pipeline::paths;
use crate::views::CropBox;

/// Embedding settings shared by the bundle writer and `--synthetic` builds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BundleOptions {
    /// Surface sampling seed.
    pub seed: u64,
    pub embed_seed: u64,
    pub dim: usize,
    /// Per-component Gaussian noise on 2D-segment and crop embeddings.
    pub sigma: f64,
}

impl Default for BundleOptions {
    fn default() -> Self {
        Self { seed: 0, embed_seed: 0, dim: 1152, sigma: 0.0 }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

/// Generates the scene and writes a complete bundle into `dir`: cloud,
/// frames, depth and label maps, predicted object masks (the ground-truth
/// objects), ground truth with parts, 2D-segment embeddings, the scene spec,
/// the embedding settings and a vocabulary of every concept.
pub fn write_bundle(scene: &SynthScene, dir: &Path, opts: &BundleOptions) -> Result<GeneratedScene> {
    let generated = generate_scene(scene, opts.seed)?;
    let embedder = SyntheticConceptEmbedder::new(opts.embed_seed, opts.dim)?;
    for sub in [paths::DEPTH_DIR, paths::LABEL_DIR] {
        let d = dir.join(sub);
        std::fs::create_dir_all(&d).map_err(io_err(&d))?;
    }
    write_point_cloud(&generated.cloud, &dir.join(paths::CLOUD), PlyFormat::BinaryLittleEndian)?;
    let mut frames = scene.cameras.clone();
    let mut seg2d = EmbeddingArchive::new(opts.dim);
    for f in &mut frames {
        f.depth_path = format!("{}/{}.pgm", paths::DEPTH_DIR, f.frame_id);
        let (depth, labels) = render(scene, f);
        write_pgm16(&depth.to_raw(f.depth_scale), &dir.join(&f.depth_path))?;
        write_pgm16(&labels.to_raw()?, &dir.join(paths::label_path(&f.frame_id)))?;
        let present: std::collections::BTreeSet<i32> = labels.labels.iter().copied().filter(|&l| l >= 0).collect();
        for label in present {
            let part = scene.part(label as u32).expect("rendered label is a part id");
            let key = segment2d_key(&f.frame_id, label);
            let mut v = embedder.concept(&part.concept);
            add_noise(&mut v, &key, opts.sigma, opts.embed_seed);
            seg2d.insert(key, v)?;
        }
    }
    write_frames(&frames, &dir.join(paths::FRAMES))?;
    write_embedding_archive(&seg2d, &dir.join(paths::SEG2D))?;
    let predicted = MaskFile {
        masks: generated
            .gt
            .masks
            .iter()
            .map(|m| MaskRecord { parts: Vec::new(), ..m.clone() })
            .collect(),
    };
    write_masks(&predicted, &dir.join(paths::MASKS))?;
    write_masks(&generated.gt, &dir.join(paths::GT))?;
    let spec = SynthScene { cameras: frames, ..scene.clone() };
    let p = dir.join(paths::SCENE_SPEC);
    std::fs::write(&p, spec.to_json()).map_err(io_err(&p))?;
    let p = dir.join(paths::SYNTH_OPTIONS);
    std::fs::write(&p, serde_json::to_string_pretty(opts).expect("options serialize")).map_err(io_err(&p))?;
    let mut vocab: Vec<String> = Vec::new();
    for oid in scene.object_ids() {
        vocab.push(scene.object_concept(oid));
    }
    for part in &scene.parts {
        if !vocab.contains(&part.concept) {
            vocab.push(part.concept.clone());
        }
    }
    let p = dir.join(paths::VOCAB);
    std::fs::write(&p, vocab.join("\n") + "\n").map_err(io_err(&p))?;
    Ok(generated)
}

/// Answers crop-embedding lookups the way a perfect image encoder would for
/// synthetic scenes: the crop shows mostly one object (majority part label
/// inside the box), so it embeds to the normalized mean of that object's
/// concept and all its part concepts.
pub struct SyntheticCropProvider {
    embedder: SyntheticConceptEmbedder,
    sigma: f64,
    crops: HashMap<String, CropBox>,
    labels: HashMap<String, LabelImage>,
    /// Composite crop key per part id.
    part_key: BTreeMap<i32, String>,
}

impl SyntheticCropProvider {
    pub fn new(
        scene: &SynthScene,
        opts: &BundleOptions,
        manifest: &[CropManifestEntry],
        labels: HashMap<String, LabelImage>,
    ) -> Result<Self> {
        let mut part_key = BTreeMap::new();
        for oid in scene.object_ids() {
            let mut concepts = vec![scene.object_concept(oid)];
            concepts.extend(scene.parts.iter().filter(|p| p.object_id == oid).map(|p| p.concept.clone()));
            let key = concept_key(&concepts);
            for p in scene.parts.iter().filter(|p| p.object_id == oid) {
                part_key.insert(p.part_id as i32, key.clone());
            }
        }
        Ok(Self {
            embedder: SyntheticConceptEmbedder::new(opts.embed_seed, opts.dim)?,
            sigma: opts.sigma,
            crops: manifest.iter().map(|e| (e.key.clone(), e.crop.clone())).collect(),
            labels,
            part_key,
        })
    }

    /// Most frequent label inside the box (smallest label on ties).
    fn majority(&self, b: &CropBox) -> Result<Option<i32>> {
        let img = self.labels.get(&b.frame_id).ok_or_else(|| Error::InvalidFrame {
            frame: b.frame_id.clone(),
            message: "no label map for crop".into(),
        })?;
        let mut counts: BTreeMap<i32, u64> = BTreeMap::new();
        for y in b.y_min..b.y_max {
            for x in b.x_min..b.x_max {
                if let Some(l) = img.at(x, y) {
                    *counts.entry(l).or_default() += 1;
                }
            }
        }
        Ok(counts.into_iter().fold(None, |best: Option<(i32, u64)>, (l, c)| match best {
            Some((_, bc)) if bc >= c => best,
            _ => Some((l, c)),
        })
        .map(|(l, _)| l))
    }
}

impl EmbeddingProvider for SyntheticCropProvider {
    fn dim(&self) -> usize {
        self.embedder.dim()
    }

    fn embed_crop(&self, key: &str) -> Result<Vec<f32>> {
        let b = self.crops.get(key).ok_or_else(|| Error::MissingKey(key.to_string()))?;
        let concept = match self.majority(b)? {
            Some(l) => self.part_key.get(&l).cloned().unwrap_or_else(|| "concept:background".into()),
            None => "concept:background".into(),
        };
        let mut v = self.embedder.embed_crop(&concept)?;
        add_noise(&mut v, key, self.sigma, self.embedder.seed());
        Ok(v)
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f32>> {
        self.embedder.embed_text(text)
    }
}

/// Moves roughly `fraction` of each object's points to a different,
/// randomly chosen segment of the same object. Empty segments are dropped.
pub fn perturb_segments(segments: &mut Vec<Vec<u32>>, fraction: f64, seed: u64) {
    let n = segments.len();
    if n < 2 || fraction <= 0.0 {
        return;
    }
    let mut rng = SplitMix64(seed);
    let mut out = vec![Vec::new(); n];
    for (s, seg) in segments.iter().enumerate() {
        for &p in seg {
            let target = if rng.next_f64() < fraction {
                let t = (rng.next_u64() % (n as u64 - 1)) as usize;
                if t >= s { t + 1 } else { t }
            } else {
                s
            };
            out[target].push(p);
        }
    }
    for seg in &mut out {
        seg.sort_unstable();
    }
    out.retain(|s| !s.is_empty());
    *segments = out;
}
