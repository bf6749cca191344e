//! Binary PPM (P6) and PGM (P5) with 8-bit samples.

use std::fs;
use std::path::Path;

use crate::error::{ensure, DmnError, Result};
use crate::mask::Mask;
use crate::numeric::Tensor;

/// 8-bit RGB image, interleaved row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize) -> Self {
        RgbImage {
            height,
            width,
            data: vec![0; height * width * 3],
        }
    }

    pub fn put(&mut self, y: usize, x: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Planar `3×H×W` tensor scaled to `[0, 1]`.
    pub fn to_tensor(&self) -> Tensor {
        let plane = self.height * self.width;
        let mut out = vec![0.0; 3 * plane];
        for (p, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * plane + p] = px[c] as f64 / 255.0;
            }
        }
        Tensor::new(&[3, self.height, self.width], out).expect("consistent size")
    }
}

fn header(magic: &str, width: usize, height: usize) -> Vec<u8> {
    format!("{magic}\n{width} {height}\n255\n").into_bytes()
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = header("P6", img.width, img.height);
    out.extend_from_slice(&img.data);
    out
}

pub fn encode_pgm(height: usize, width: usize, levels: &[u8]) -> Vec<u8> {
    let mut out = header("P5", width, height);
    out.extend_from_slice(levels);
    out
}

/// Parses the header, returning `(width, height, maxval, payload offset)`.
fn parse_header(bytes: &[u8], magic: &[u8; 2], path: &Path) -> Result<(usize, usize, usize, usize)> {
    let bad = |msg: &str| DmnError::format(path, msg.to_string());
    if bytes.is_empty() {
        return Err(bad("file is empty"));
    }
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(bad(&format!("expected magic {}", String::from_utf8_lossy(magic))));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(bad("truncated header")),
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        let text = std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("bad header"))?;
        *field = text.parse().map_err(|_| bad("non-numeric header field"))?;
    }
    match bytes.get(pos) {
        Some(c) if c.is_ascii_whitespace() => pos += 1,
        _ => return Err(bad("header must end with one whitespace byte")),
    }
    let [w, h, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(bad(&format!("unsupported maxval {maxval}")));
    }
    Ok((w, h, maxval, pos))
}

pub fn decode_ppm(bytes: &[u8], path: &Path) -> Result<RgbImage> {
    let (w, h, _, off) = parse_header(bytes, b"P6", path)?;
    let need = w * h * 3;
    if bytes.len() - off < need {
        return Err(DmnError::format(path, format!("payload has {} bytes, expected {need}", bytes.len() - off)));
    }
    Ok(RgbImage {
        height: h,
        width: w,
        data: bytes[off..off + need].to_vec(),
    })
}

/// Returns `(height, width, levels)`.
pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let (w, h, _, off) = parse_header(bytes, b"P5", path)?;
    let need = w * h;
    if bytes.len() - off < need {
        return Err(DmnError::format(path, format!("payload has {} bytes, expected {need}", bytes.len() - off)));
    }
    Ok((h, w, bytes[off..off + need].to_vec()))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| DmnError::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| DmnError::io(path, e))
}

pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    decode_ppm(&read(path)?, path)
}

pub fn write_ppm(path: &Path, img: &RgbImage) -> Result<()> {
    write(path, &encode_ppm(img))
}

/// Reads a mask; any nonzero level is foreground.
pub fn read_mask(path: &Path) -> Result<Mask> {
    let (h, w, levels) = decode_pgm(&read(path)?, path)?;
    Mask::new(h, w, levels.iter().map(|&v| v != 0).collect())
}

/// Writes a mask with levels `{0, 255}`.
pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    let levels: Vec<u8> = mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect();
    write(path, &encode_pgm(mask.height(), mask.width(), &levels))
}

/// `round(255 p)` for each probability of a `1×H×W` or `H×W` map.
pub fn heatmap_levels(hm: &Tensor) -> Result<(usize, usize, Vec<u8>)> {
    let (h, w) = match hm.shape() {
        [1, h, w] | [h, w] => (*h, *w),
        s => return Err(crate::error::contract!("heatmap must be 1×H×W or H×W, got {s:?}")),
    };
    for &p in hm.data() {
        ensure!((0.0..=1.0).contains(&p), "heatmap value {p} is not a probability");
    }
    Ok((h, w, hm.data().iter().map(|&p| (255.0 * p).round() as u8).collect()))
}

pub fn write_heatmap(path: &Path, hm: &Tensor) -> Result<()> {
    let (h, w, levels) = heatmap_levels(hm)?;
    write(path, &encode_pgm(h, w, &levels))
}
