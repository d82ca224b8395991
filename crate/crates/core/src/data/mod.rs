//! Manifests, image I/O, datasets and the synthetic distortion generator.

mod dataset;
mod image;
mod manifest;
mod synth;

pub use dataset::{feature_path, load_features, save_features, Dataset};
pub use image::{
    decode_image, decode_image_bytes, decode_pgm, decode_pgm_bytes, quantize, resize, resize_plane,
    GrayImage, Image,
};
pub use manifest::{Manifest, Sample, DEFAULT_SPLIT};
pub use synth::{
    base_recipe, clean_image, distort, load_sidecar, score_for_level, synth_dataset, Distortion,
    Region, SidecarRow, SynthDataset, FLOOR_QUALITY, MANIFEST_FILE, SIDECAR_FILE,
};
