//! Paired dataset preparation: ingestion, cropping, resampling, phantoms.

mod dataset;
mod image_io;
mod phantom;
mod resample;

pub use dataset::{
    build_dataset, build_pairs, center_crop, phantom_source_size, DatasetManifest, DatasetSpec,
    ImagePair, ManifestEntry, Source, Split, SplitFractions,
};
pub use image_io::{load_grayscale, save_grayscale, save_rgb, BitDepth};
pub use phantom::synthesize_phantom;
pub use resample::{downsample, resize, upsample, ResampleMethod};
