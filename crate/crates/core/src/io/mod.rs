//! Readers and writers for every interchange artifact.

pub(crate) mod binary;

pub mod archive;
pub mod crops;
pub mod frames;
pub mod heatmap;
pub mod masks;
pub mod pgm;
pub mod ply;

pub use archive::{read_embedding_archive, write_embedding_archive, EmbeddingArchive};
pub use crops::{crop_key, load_crop_manifest, segment2d_key, write_crop_manifest, CropManifestEntry};
pub use frames::{load_frames, write_frames, FrameManifestEntry};
pub use heatmap::{colormap, write_heatmap_ply};
pub use masks::{load_masks, write_masks, MaskFile, MaskRecord};
pub use pgm::{read_pgm16, write_pgm16, DepthImage, Gray16Image, LabelImage};
pub use ply::{load_point_cloud, write_point_cloud, PlyFormat};
