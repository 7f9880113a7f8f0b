//! Corpus ingestion, splitting, multi-resolution pyramids, the synthetic
//! generator, and the patch sampler.

mod ingest;
mod manifest;
mod pyramid;
pub(crate) mod sampler;
pub mod synth;

pub use ingest::{build_manifest, IngestConfig};
pub use manifest::{
    stratified_split, ChannelStats, DatasetManifest, Record, Split, SplitRatios, MANIFEST_CSV, MANIFEST_META,
};
pub use pyramid::{
    build_pyramid, crop_to_tensor, image_to_tensor, load_rgb, resize_long_side, save_png, scaled_dims, tensor_to_image,
};
pub use sampler::{normalize_image, patches_to_batch, Patch, PatchSampler, SamplingMode};
pub use synth::{synth_generate, SynthConfig};
