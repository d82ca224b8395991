//! Procedural images with graded synthetic distortions.
//!
//! Each base image gets one distortion kind and one region (whole image or a
//! quadrant) and is rendered at `levels` strengths. Level 0 is the clean
//! image with score 1; the strongest level scores [`FLOOR_QUALITY`].

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::image::Image;
use super::manifest::{Manifest, Sample};
use crate::error::{Error, Result};

pub const FLOOR_QUALITY: f64 = 0.05;
/// Share of base images whose distortion is confined to one quadrant.
pub const QUADRANT_FRACTION: f64 = 0.15;
pub const MANIFEST_FILE: &str = "manifest.csv";
pub const SIDECAR_FILE: &str = "distortions.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Distortion {
    Blur,
    Noise,
    Contrast,
}

impl Distortion {
    pub const ALL: [Distortion; 3] = [Distortion::Blur, Distortion::Noise, Distortion::Contrast];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Region {
    Whole,
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
}

impl Region {
    pub const QUADRANTS: [Region; 4] = [
        Region::TopLeft,
        Region::TopRight,
        Region::BottomLeft,
        Region::BottomRight,
    ];

    pub fn contains(self, y: usize, x: usize, h: usize, w: usize) -> bool {
        let top = y < h / 2;
        let left = x < w / 2;
        match self {
            Region::Whole => true,
            Region::TopLeft => top && left,
            Region::TopRight => top && !left,
            Region::BottomLeft => !top && left,
            Region::BottomRight => !top && !left,
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Region::Whole => "whole",
            Region::TopLeft => "top_left",
            Region::TopRight => "top_right",
            Region::BottomLeft => "bottom_left",
            Region::BottomRight => "bottom_right",
        })
    }
}

impl FromStr for Region {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "whole" => Region::Whole,
            "top_left" => Region::TopLeft,
            "top_right" => Region::TopRight,
            "bottom_left" => Region::BottomLeft,
            "bottom_right" => Region::BottomRight,
            _ => return Err(format!("unknown region `{s}`")),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SidecarRow {
    pub path: PathBuf,
    pub level: usize,
    pub region: Region,
}

pub fn score_for_level(level: usize, levels: usize) -> f64 {
    1.0 - level as f64 / (levels - 1) as f64 * (1.0 - FLOOR_QUALITY)
}

fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + (b - a) * t
}

/// Smooth two-colour gradient, a few flat high-contrast shapes, and a fixed
/// amplitude per-pixel texture over everything.
pub fn clean_image<R: Rng + ?Sized>(size: usize, rng: &mut R) -> Image {
    let c0: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.2..0.8));
    let c1: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.2..0.8));
    let theta: f32 = rng.random_range(0.0..std::f32::consts::TAU);
    let (dx, dy) = (theta.cos(), theta.sin());
    let s = size as f32;
    let mut img = Image::filled(size, size, [0.0; 3]);
    for y in 0..size {
        for x in 0..size {
            let t =
                (((x as f32 - s / 2.0) * dx + (y as f32 - s / 2.0) * dy) / s + 0.5).clamp(0.0, 1.0);
            let i = (y * size + x) * 3;
            for k in 0..3 {
                img.data[i + k] = lerp(c0[k], c1[k], t);
            }
        }
    }
    let shapes = rng.random_range(3..7);
    for _ in 0..shapes {
        let color: [f32; 3] =
            std::array::from_fn(|_| if rng.random::<bool>() { 0.85 } else { 0.15 });
        let cx = rng.random_range(0.0..s);
        let cy = rng.random_range(0.0..s);
        let r = rng.random_range(0.08..0.2) * s;
        let circle: bool = rng.random();
        for y in 0..size {
            for x in 0..size {
                let (fx, fy) = (x as f32 + 0.5 - cx, y as f32 + 0.5 - cy);
                let inside = if circle {
                    fx * fx + fy * fy <= r * r
                } else {
                    fx.abs() <= r && fy.abs() <= r * 0.7
                };
                if inside {
                    img.data[(y * size + x) * 3..][..3].copy_from_slice(&color);
                }
            }
        }
    }
    for px in img.data.chunks_mut(3) {
        let tex = rng.random_range(-0.06f32..0.06);
        px.iter_mut().for_each(|v| *v = (*v + tex).clamp(0.0, 1.0));
    }
    img
}

fn gaussian_blur(img: &Image, sigma: f32) -> Image {
    let radius = (3.0 * sigma).ceil() as isize;
    let weights: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f32 = weights.iter().sum();
    let (h, w) = (img.height as isize, img.width as isize);
    let pass = |src: &[f32], horizontal: bool| -> Vec<f32> {
        let mut out = vec![0.0; src.len()];
        for y in 0..h {
            for x in 0..w {
                for k in 0..3 {
                    let mut acc = 0.0;
                    for (j, wt) in weights.iter().enumerate() {
                        let d = j as isize - radius;
                        let (sy, sx) = if horizontal {
                            (y, (x + d).clamp(0, w - 1))
                        } else {
                            ((y + d).clamp(0, h - 1), x)
                        };
                        acc += wt * src[((sy * w + sx) * 3 + k as isize) as usize];
                    }
                    out[((y * w + x) * 3 + k as isize) as usize] = acc / norm;
                }
            }
        }
        out
    };
    let tmp = pass(&img.data, true);
    Image {
        height: img.height,
        width: img.width,
        data: pass(&tmp, false),
    }
}

/// Apply `kind` at strength `t` in `[0, 1]` inside `region`.
pub fn distort<R: Rng + ?Sized>(
    img: &Image,
    kind: Distortion,
    t: f64,
    region: Region,
    rng: &mut R,
) -> Image {
    if t == 0.0 {
        return img.clone();
    }
    let t = t as f32;
    let scale = img.height.min(img.width) as f32 / 64.0;
    let full = match kind {
        Distortion::Blur => gaussian_blur(img, 2.5 * t * scale),
        Distortion::Noise => {
            let normal = Normal::new(0.0f32, 0.2 * t).expect("positive std");
            let mut out = img.clone();
            out.data.iter_mut().for_each(|v| *v += normal.sample(rng));
            out
        }
        Distortion::Contrast => {
            let mean = img.data.iter().sum::<f32>() / img.data.len() as f32;
            let f = 1.0 - 0.75 * t;
            let mut out = img.clone();
            out.data
                .iter_mut()
                .for_each(|v| *v = mean + (*v - mean) * f);
            out
        }
    };
    let mut out = img.clone();
    for y in 0..img.height {
        for x in 0..img.width {
            if region.contains(y, x, img.height, img.width) {
                let i = (y * img.width + x) * 3;
                for k in 0..3 {
                    out.data[i + k] = full.data[i + k].clamp(0.0, 1.0);
                }
            }
        }
    }
    out
}

/// Clean image, distortion kind and region of base image `b`, plus the
/// generator state used for its noisy variants.
pub fn base_recipe(seed: u64, b: usize, size: usize) -> (Image, Distortion, Region, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(b as u64);
    let clean = clean_image(size, &mut rng);
    let kind = Distortion::ALL[rng.random_range(0..3)];
    let region = if rng.random::<f64>() >= QUADRANT_FRACTION {
        Region::Whole
    } else {
        Region::QUADRANTS[rng.random_range(0..4)]
    };
    (clean, kind, region, rng)
}

#[derive(Clone, Debug)]
pub struct SynthDataset {
    pub manifest: Manifest,
    pub sidecar: Vec<SidecarRow>,
}

/// Render `bases x levels` images into `out_dir` together with
/// `manifest.csv` and the `distortions.csv` sidecar.
pub fn synth_dataset(
    out_dir: &Path,
    bases: usize,
    levels: usize,
    size: usize,
    seed: u64,
) -> Result<SynthDataset> {
    if levels < 2 {
        return Err(Error::InvalidConfig(format!(
            "levels must be at least 2, got {levels}"
        )));
    }
    if size < 16 {
        return Err(Error::InvalidConfig(format!(
            "size must be at least 16, got {size}"
        )));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut samples = Vec::with_capacity(bases * levels);
    let mut sidecar = Vec::with_capacity(bases * levels);
    for b in 0..bases {
        let (clean, kind, region, mut rng) = base_recipe(seed, b, size);
        for level in 0..levels {
            let t = level as f64 / (levels - 1) as f64;
            let img = distort(&clean, kind, t, region, &mut rng);
            let name = PathBuf::from(format!("b{b:04}_l{level}.ppm"));
            img.save_ppm(&out_dir.join(&name))?;
            samples.push(Sample {
                path: name.clone(),
                score: score_for_level(level, levels),
            });
            sidecar.push(SidecarRow {
                path: name,
                level,
                region,
            });
        }
    }
    let manifest = Manifest {
        root: out_dir.to_path_buf(),
        range: (0.0, 1.0),
        samples,
    };
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    let mut text = String::from("# path,level,region\n");
    for r in &sidecar {
        let _ = writeln!(text, "{},{},{}", r.path.display(), r.level, r.region);
    }
    let side = out_dir.join(SIDECAR_FILE);
    fs::write(&side, text).map_err(|e| Error::io(&side, e))?;
    Ok(SynthDataset { manifest, sidecar })
}

pub fn load_sidecar(path: &Path) -> Result<Vec<SidecarRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let s = raw.trim();
        if s.is_empty() || s.starts_with('#') {
            continue;
        }
        let bad = |msg: String| Error::Parse { line: i + 1, msg };
        let parts: Vec<&str> = s.split(',').collect();
        if parts.len() != 3 {
            return Err(bad(format!("expected `path,level,region`, got `{s}`")));
        }
        rows.push(SidecarRow {
            path: PathBuf::from(parts[0]),
            level: parts[1]
                .parse()
                .map_err(|_| bad(format!("bad level `{}`", parts[1])))?,
            region: parts[2].parse().map_err(bad)?,
        });
    }
    Ok(rows)
}
