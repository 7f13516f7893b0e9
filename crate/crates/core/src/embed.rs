//! Embedding providers: archive lookups and a deterministic synthetic
//! concept embedder for model-free runs.
//!
//! Synthetic vectors: FNV-1a 64 over the seed's 8 little-endian bytes followed
//! by the concept's UTF-8 bytes seeds a splitmix64 stream; consecutive pairs
//! of 53-bit uniforms `(u, w)` go through Box–Muller with `u1 = 1 − u`,
//! yielding `r·cos(2πw), r·sin(2πw)`; the first D variates are L2-normalized.

use crate::error::{Error, Result};
use crate::io::EmbeddingArchive;

pub const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
pub const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Crop keys of this form embed to concept vectors.
pub const CONCEPT_PREFIX: &str = "concept:";

pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;
    fn embed_crop(&self, key: &str) -> Result<Vec<f32>>;
    fn embed_text(&self, text: &str) -> Result<Vec<f32>>;
    /// Whether `embed_text` can succeed at all.
    fn has_text(&self) -> bool {
        true
    }
}

pub fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in seed.to_le_bytes().iter().chain(bytes) {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

#[derive(Debug, Clone)]
pub struct SplitMix64(pub u64);

impl SplitMix64 {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1) with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// `n` standard normal variates from a splitmix64 stream.
pub fn gaussians(state: u64, n: usize) -> Vec<f64> {
    let mut rng = SplitMix64(state);
    let mut out = Vec::with_capacity(n + 1);
    while out.len() < n {
        let u1 = 1.0 - rng.next_f64();
        let u2 = rng.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let t = 2.0 * std::f64::consts::PI * u2;
        out.push(r * t.cos());
        out.push(r * t.sin());
    }
    out.truncate(n);
    out
}

fn unit(v: &[f64]) -> Vec<f32> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / n) as f32).collect()
}

#[derive(Debug, Clone)]
pub struct SyntheticConceptEmbedder {
    seed: u64,
    dim: usize,
}

impl SyntheticConceptEmbedder {
    pub const MIN_DIM: usize = 16;

    pub fn new(seed: u64, dim: usize) -> Result<Self> {
        if dim < Self::MIN_DIM {
            return Err(Error::Config(format!(
                "synthetic embedder needs dim >= {}, got {dim}",
                Self::MIN_DIM
            )));
        }
        Ok(Self { seed, dim })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn concept_f64(&self, concept: &str) -> Vec<f64> {
        let g = gaussians(fnv1a(self.seed, concept.as_bytes()), self.dim);
        let n = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        g.into_iter().map(|x| x / n).collect()
    }

    pub fn concept(&self, concept: &str) -> Vec<f32> {
        unit(&self.concept_f64(concept))
    }

    /// Normalized mean of several concept vectors.
    pub fn composite<S: AsRef<str>>(&self, concepts: &[S]) -> Vec<f32> {
        let mut sum = vec![0f64; self.dim];
        for c in concepts {
            for (s, v) in sum.iter_mut().zip(self.concept_f64(c.as_ref())) {
                *s += v;
            }
        }
        unit(&sum)
    }
}

/// The crop key naming the normalized mean of `concepts`.
pub fn concept_key<S: AsRef<str>>(concepts: &[S]) -> String {
    let names: Vec<&str> = concepts.iter().map(|c| c.as_ref()).collect();
    format!("{CONCEPT_PREFIX}{}", names.join("+"))
}

impl EmbeddingProvider for SyntheticConceptEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_crop(&self, key: &str) -> Result<Vec<f32>> {
        let body = key
            .strip_prefix(CONCEPT_PREFIX)
            .ok_or_else(|| Error::MissingKey(key.to_string()))?;
        let parts: Vec<&str> = body.split('+').collect();
        if parts.len() == 1 {
            Ok(self.concept(body))
        } else {
            Ok(self.composite(&parts))
        }
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f32>> {
        Ok(self.concept(text))
    }
}

/// Adds independent N(0, sigma²) noise to each component. The noise stream
/// depends only on `key` and `seed`.
pub fn add_noise(v: &mut [f32], key: &str, sigma: f64, seed: u64) {
    if sigma == 0.0 {
        return;
    }
    let g = gaussians(fnv1a(0, key.as_bytes()) ^ seed, v.len());
    for (x, n) in v.iter_mut().zip(g) {
        *x = (*x as f64 + sigma * n) as f32;
    }
}

/// Lookups into pre-computed crop and text archives.
#[derive(Debug, Clone)]
pub struct ArchiveProvider {
    dim: usize,
    crops: Option<EmbeddingArchive>,
    texts: Option<EmbeddingArchive>,
}

impl ArchiveProvider {
    pub fn new(crops: Option<EmbeddingArchive>, texts: Option<EmbeddingArchive>) -> Result<Self> {
        let dim = match (&crops, &texts) {
            (Some(c), Some(t)) if c.dim() != t.dim() => {
                return Err(Error::DimMismatch { expected: c.dim(), actual: t.dim() })
            }
            (Some(c), _) => c.dim(),
            (None, Some(t)) => t.dim(),
            (None, None) => return Err(Error::Empty("no embedding archive given")),
        };
        Ok(Self { dim, crops, texts })
    }

    pub fn crops(&self) -> Option<&EmbeddingArchive> {
        self.crops.as_ref()
    }
}

impl EmbeddingProvider for ArchiveProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_crop(&self, key: &str) -> Result<Vec<f32>> {
        self.crops
            .as_ref()
            .and_then(|a| a.get(key))
            .map(<[f32]>::to_vec)
            .ok_or_else(|| Error::MissingKey(key.to_string()))
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f32>> {
        let texts = self
            .texts
            .as_ref()
            .ok_or_else(|| Error::Unsupported("no text embeddings available".into()))?;
        texts
            .get(text)
            .map(<[f32]>::to_vec)
            .ok_or_else(|| Error::MissingKey(text.to_string()))
    }

    fn has_text(&self) -> bool {
        self.texts.is_some()
    }
}
