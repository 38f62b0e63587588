//! Skeleton sequences on disk and in memory: formats, streams, windowing,
//! the synthetic motion generator and manifests.

mod dataset;
mod sequence;
mod streams;
pub mod synthetic;

pub use dataset::{Batch, Dataset, DatasetManifest, ManifestEntry, Split};
pub use sequence::{SkeletonSequence, Stream, HDS1_MAGIC};
pub use streams::{apply_synthetic, derive_bone, derive_motion, derive_stream, preprocess, random_crop};
