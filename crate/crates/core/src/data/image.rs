//! Binary PPM/PGM codecs and bilinear resizing.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// RGB image with interleaved channels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

/// 8-bit single-channel raster.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width * 3 {
            return Err(Error::shape(format!(
                "image {height}x{width}x3 needs {} values, got {}",
                height * width * 3,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self {
            height,
            width,
            data,
        }
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// `(1, H, W, 3)` tensor.
    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new(vec![1, self.height, self.width, 3], self.data.clone()).expect("sized image")
    }

    /// Quantize to 8 bits (`round(v * 255)`, clamped) as a P6 file body.
    pub fn encode_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.data.iter().map(|&v| quantize(v)));
        out
    }

    pub fn save_ppm(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode_ppm()).map_err(|e| Error::io(path, e))
    }
}

impl GrayImage {
    pub fn encode_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode_pgm()).map_err(|e| Error::io(path, e))
    }
}

pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    body: usize,
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<Header> {
    let corrupt = |msg: &str| Error::CorruptImage {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    };
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(Error::UnsupportedFormat(path.to_path_buf()));
    }
    let magic = [bytes[0], bytes[1]];
    if magic[1] != b'5' && magic[1] != b'6' {
        return Err(Error::UnsupportedFormat(path.to_path_buf()));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for f in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(corrupt("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *f = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| corrupt("bad header field"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(corrupt("missing whitespace after header"));
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(corrupt(&format!(
            "only 8-bit files are supported, maxval {maxval}"
        )));
    }
    if width == 0 || height == 0 {
        return Err(corrupt("zero-sized image"));
    }
    Ok(Header {
        magic,
        width,
        height,
        body: pos + 1,
    })
}

fn body<'a>(bytes: &'a [u8], h: &Header, channels: usize, path: &Path) -> Result<&'a [u8]> {
    let need = h.width * h.height * channels;
    let body = &bytes[h.body..];
    if body.len() != need {
        return Err(Error::CorruptImage {
            path: path.to_path_buf(),
            msg: format!("expected {need} pixel bytes, found {}", body.len()),
        });
    }
    Ok(body)
}

/// Decode P6 (RGB) or P5 (gray, replicated to RGB). Values become `v / 255`.
pub fn decode_image_bytes(bytes: &[u8], path: &Path) -> Result<Image> {
    let h = parse_header(bytes, path)?;
    let data = if h.magic[1] == b'6' {
        body(bytes, &h, 3, path)?
            .iter()
            .map(|&v| v as f32 / 255.0)
            .collect()
    } else {
        body(bytes, &h, 1, path)?
            .iter()
            .flat_map(|&v| [v as f32 / 255.0; 3])
            .collect()
    };
    Ok(Image {
        height: h.height,
        width: h.width,
        data,
    })
}

pub fn decode_image(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image_bytes(&bytes, path)
}

pub fn decode_pgm_bytes(bytes: &[u8], path: &Path) -> Result<GrayImage> {
    let h = parse_header(bytes, path)?;
    if h.magic[1] != b'5' {
        return Err(Error::UnsupportedFormat(path.to_path_buf()));
    }
    Ok(GrayImage {
        height: h.height,
        width: h.width,
        data: body(bytes, &h, 1, path)?.to_vec(),
    })
}

pub fn decode_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm_bytes(&bytes, path)
}

/// Source coordinate and blend weight for bilinear sampling with pixel
/// centres at `i + 0.5`.
fn taps(out: usize, inp: usize) -> Vec<(usize, usize, f64)> {
    let scale = inp as f64 / out as f64;
    (0..out)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(inp - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

/// Bilinear resize of an interleaved `(H, W, C)` plane.
pub fn resize_plane(data: &[f32], h: usize, w: usize, c: usize, oh: usize, ow: usize) -> Vec<f32> {
    let ty = taps(oh, h);
    let tx = taps(ow, w);
    let mut out = Vec::with_capacity(oh * ow * c);
    for &(y0, y1, fy) in &ty {
        for &(x0, x1, fx) in &tx {
            for k in 0..c {
                let p = |y: usize, x: usize| data[(y * w + x) * c + k] as f64;
                let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                let bot = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                out.push((top * (1.0 - fy) + bot * fy) as f32);
            }
        }
    }
    out
}

pub fn resize(img: &Image, height: usize, width: usize) -> Result<Image> {
    if height == 0 || width == 0 {
        return Err(Error::shape("resize target must be at least 1x1"));
    }
    if (height, width) == (img.height, img.width) {
        return Ok(img.clone());
    }
    Ok(Image {
        height,
        width,
        data: resize_plane(&img.data, img.height, img.width, 3, height, width),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_roundtrip_is_exact() {
        let bytes = b"P6\n# c\n2 1\n255\n\x00\x80\xff\x01\x02\x03";
        let img = decode_image_bytes(bytes, Path::new("x")).unwrap();
        assert_eq!(img.data[1], 128.0 / 255.0);
        assert_eq!(
            decode_image_bytes(&img.encode_ppm(), Path::new("x")).unwrap(),
            img
        );
    }

    #[test]
    fn rejects_bad_files() {
        let p = Path::new("x");
        assert!(matches!(
            decode_image_bytes(b"GIF89a", p),
            Err(Error::UnsupportedFormat(_))
        ));
        assert!(matches!(
            decode_image_bytes(b"P6\n2 2\n255\n\x00", p),
            Err(Error::CorruptImage { .. })
        ));
    }
}
