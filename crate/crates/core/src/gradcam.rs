//! Grad-CAM heatmaps over the toy backbones' conv activations.
//!
//! For a chosen activation `A` of shape `(1,h,w,C)`:
//! `alpha_k = mean_{y,x} d target / d A[y,x,k]`, `map = relu(sum_k alpha_k A[..,k])`,
//! bilinearly upsampled to the image size and divided by its maximum.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Mode, Tape};
use crate::data::{quantize, resize, resize_plane, GrayImage, Image};
use crate::error::{Error, Result};
use crate::model::{Model, ModelInput};

/// Quantity whose gradient weights the activation channels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CamTarget {
    /// The predicted quality score.
    #[default]
    Score,
    /// The negated score, so regions that lower quality light up.
    Degradation,
}

impl std::str::FromStr for CamTarget {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "score" => Ok(CamTarget::Score),
            "degradation" => Ok(CamTarget::Degradation),
            _ => Err(format!("unknown Grad-CAM target `{s}` (score|degradation)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub height: usize,
    pub width: usize,
    /// Row-major, in `[0, 1]`; all zero or with maximum exactly 1.
    pub values: Vec<f32>,
    pub layer: String,
}

impl Heatmap {
    pub fn max(&self) -> f32 {
        self.values.iter().copied().fold(0.0, f32::max)
    }

    pub fn to_gray(&self) -> GrayImage {
        GrayImage {
            height: self.height,
            width: self.width,
            data: self.values.iter().map(|&v| quantize(v)).collect(),
        }
    }
}

/// The layer used when none is named: the last conv of stream A, or of
/// stream B when A has no spatial maps.
pub fn default_layer(model: &Model<f32>) -> Result<String> {
    let names = model.conv_layer_names();
    names
        .iter()
        .rfind(|n| n.starts_with("a."))
        .or_else(|| names.last())
        .cloned()
        .ok_or_else(|| Error::NoSpatialLayer("no enabled stream uses a toy CNN backbone".into()))
}

pub fn gradcam(
    model: &Model<f32>,
    image: &Image,
    layer: Option<&str>,
    target: CamTarget,
) -> Result<Heatmap> {
    let names = model.conv_layer_names();
    if names.is_empty() {
        return Err(Error::NoSpatialLayer(
            "no enabled stream uses a toy CNN backbone".into(),
        ));
    }
    let layer = match layer {
        Some(l) if names.iter().any(|n| n == l) => l.to_string(),
        Some(l) => return Err(Error::UnknownLayer(l.to_string())),
        None => default_layer(model)?,
    };
    let (h, w) = model.config().input_size;
    let resized = resize(image, h, w)?;
    let mut tape = Tape::new();
    // eval mode draws nothing from the generator
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = model.forward(
        &mut tape,
        &ModelInput::images(resized.to_tensor()),
        Mode::Eval,
        &mut rng,
    )?;
    let act = out
        .activation(&layer)
        .ok_or_else(|| Error::UnknownLayer(layer.clone()))?;
    let score = tape.sum(out.prediction);
    tape.backward(score)?;

    let a = tape.value(act);
    let (_, ah, aw, c) = a.dims4()?;
    let sign = match target {
        CamTarget::Score => 1.0,
        CamTarget::Degradation => -1.0,
    };
    let mut alpha = vec![0.0f64; c];
    if let Some(g) = tape.grad(act) {
        for px in g.data().chunks(c) {
            for (al, &gv) in alpha.iter_mut().zip(px) {
                *al += gv as f64;
            }
        }
    }
    alpha.iter_mut().for_each(|v| *v *= sign / (ah * aw) as f64);
    let raw: Vec<f32> = a
        .data()
        .chunks(c)
        .map(|px| {
            let s: f64 = px.iter().zip(&alpha).map(|(&v, &al)| v as f64 * al).sum();
            s.max(0.0) as f32
        })
        .collect();
    let mut values = resize_plane(&raw, ah, aw, 1, image.height, image.width);
    let max = values.iter().copied().fold(0.0, f32::max);
    if max > 0.0 {
        values.iter_mut().for_each(|v| *v /= max);
    } else {
        values.iter_mut().for_each(|v| *v = 0.0);
    }
    Ok(Heatmap {
        height: image.height,
        width: image.width,
        values,
        layer,
    })
}

/// Write the map as an 8-bit PGM, or with `overlay` as a PPM that averages
/// the image with the map drawn in red.
pub fn export_heatmap(map: &Heatmap, image: &Image, path: &Path, overlay: bool) -> Result<()> {
    if !overlay {
        return map.to_gray().save_pgm(path);
    }
    let img = resize(image, map.height, map.width)?;
    let mut data = Vec::with_capacity(img.data.len());
    for (px, &m) in img.data.chunks(3).zip(&map.values) {
        data.push(0.5 * px[0] + 0.5 * m);
        data.push(0.5 * px[1]);
        data.push(0.5 * px[2]);
    }
    Image::new(map.height, map.width, data)?.save_ppm(path)
}

/// Share of the top-decile heatmap pixels for which `inside(y, x)` holds.
/// Ties at the threshold are all counted as top pixels.
pub fn top_decile_fraction(map: &Heatmap, inside: impl Fn(usize, usize) -> bool) -> f64 {
    let mut sorted = map.values.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let k = (sorted.len() / 10).max(1);
    let thresh = sorted[k - 1];
    let (mut hit, mut total) = (0usize, 0usize);
    for (i, &v) in map.values.iter().enumerate() {
        if v >= thresh {
            total += 1;
            if inside(i / map.width, i % map.width) {
                hit += 1;
            }
        }
    }
    hit as f64 / total as f64
}
