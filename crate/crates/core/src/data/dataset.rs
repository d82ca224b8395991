//! In-memory datasets ready for batching.

use std::fs;
use std::path::{Path, PathBuf};

use super::image::{decode_image, resize};
use super::manifest::Manifest;
use crate::error::{Error, Result};
use crate::model::{BackboneSpec, ModelConfig, ModelInput};
use crate::tensor::Tensor;

/// Where the feature vector for `image` lives: `<dir>/<stem>.f32`, with a
/// relative `dir` taken from the image's own directory.
pub fn feature_path(dir: &Path, image: &Path) -> PathBuf {
    let stem = image.file_stem().unwrap_or_default();
    let base = if dir.is_absolute() {
        dir.to_path_buf()
    } else {
        image.parent().unwrap_or(Path::new("")).join(dir)
    };
    base.join(stem).with_extension("f32")
}

/// Read `width` little-endian f32 values.
pub fn load_features(path: &Path, width: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != width * 4 {
        return Err(Error::shape(format!(
            "{}: expected {width} features ({} bytes), found {} bytes",
            path.display(),
            width * 4,
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn save_features(path: &Path, values: &[f32]) -> Result<()> {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug)]
struct Features {
    width: usize,
    data: Vec<f32>,
}

/// Every input a model needs for a list of images, decoded and resized once.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub paths: Vec<PathBuf>,
    pub scores: Vec<f64>,
    size: (usize, usize),
    images: Option<Vec<f32>>,
    features: [Option<Features>; 2],
}

impl Dataset {
    pub fn from_manifest(manifest: &Manifest, config: &ModelConfig) -> Result<Self> {
        let paths: Vec<PathBuf> = manifest
            .samples
            .iter()
            .map(|s| manifest.resolve(s))
            .collect();
        Self::from_paths(paths, manifest.scores(), config)
    }

    pub fn from_paths(paths: Vec<PathBuf>, scores: Vec<f64>, config: &ModelConfig) -> Result<Self> {
        if paths.len() != scores.len() {
            return Err(Error::LengthMismatch(paths.len(), scores.len()));
        }
        let (h, w) = config.input_size;
        let images = if config.needs_images() {
            let mut data = Vec::with_capacity(paths.len() * h * w * 3);
            for p in &paths {
                data.extend(resize(&decode_image(p)?, h, w)?.data);
            }
            Some(data)
        } else {
            None
        };
        let mut features = [None, None];
        for (slot, (enabled, spec)) in features.iter_mut().zip([
            (config.enable_stream_a, &config.stream_a),
            (config.enable_stream_b, &config.stream_b),
        ]) {
            if let (true, BackboneSpec::FeatureFile { width, dir }) = (enabled, spec) {
                let mut data = Vec::with_capacity(paths.len() * width);
                for p in &paths {
                    data.extend(load_features(&feature_path(dir, p), *width)?);
                }
                *slot = Some(Features {
                    width: *width,
                    data,
                });
            }
        }
        Ok(Self {
            paths,
            scores,
            size: (h, w),
            images,
            features,
        })
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn batch(&self, idx: &[usize]) -> ModelInput<f32> {
        let (h, w) = self.size;
        let px = h * w * 3;
        let images = self.images.as_ref().map(|all| {
            let data = idx
                .iter()
                .flat_map(|&i| &all[i * px..(i + 1) * px])
                .copied()
                .collect();
            Tensor::new(vec![idx.len(), h, w, 3], data).expect("sized batch")
        });
        let feats = |f: &Option<Features>| {
            f.as_ref().map(|f| {
                let data = idx
                    .iter()
                    .flat_map(|&i| &f.data[i * f.width..(i + 1) * f.width])
                    .copied()
                    .collect();
                Tensor::new(vec![idx.len(), f.width], data).expect("sized batch")
            })
        };
        ModelInput {
            images,
            features_a: feats(&self.features[0]),
            features_b: feats(&self.features[1]),
        }
    }

    pub fn batch_scores(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter().map(|&i| self.scores[i]).collect()
    }
}
