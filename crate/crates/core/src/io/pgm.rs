//! Binary PGM (P5) slice images.

use std::path::Path;

use super::{read_bytes, write_atomic};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn decode(path: &Path, bytes: &[u8]) -> Result<Self> {
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::format(path, "incomplete PGM header"));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        if fields[0] != "P5" {
            return Err(Error::format(
                path,
                format!("expected P5, found {}", fields[0]),
            ));
        }
        let num = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::format(path, format!("bad PGM header field {s:?}")))
        };
        let (width, height, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
        if maxval != 255 {
            return Err(Error::format(path, format!("unsupported maxval {maxval}")));
        }
        let pixels = &bytes[(pos + 1).min(bytes.len())..];
        if pixels.len() != width * height {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                expected: width * height,
                actual: pixels.len(),
            });
        }
        Ok(GrayImage {
            width,
            height,
            pixels: pixels.to_vec(),
        })
    }
}

/// How slice values map to gray levels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shading {
    /// `[min, max]` stretched to `[0, 255]`.
    Intensity,
    /// Symmetric around mid-gray: `-m -> 0`, `0 -> 128`, `+m -> 255` with `m = max |v|`.
    Signed,
}

/// Mid-planes of a `[D, H, W]` (or `[1, D, H, W]`) volume: sagittal (fixed D),
/// coronal (fixed H) and axial (fixed W), each as `(name, rows x cols)` values.
pub fn mid_planes(volume: &Tensor) -> Result<Vec<(&'static str, usize, usize, Vec<f32>)>> {
    let shape = volume.shape();
    let dims = match shape {
        [d, h, w] | [1, d, h, w] => [*d, *h, *w],
        _ => {
            return Err(Error::ShapeMismatch {
                left: shape.to_vec(),
                right: vec![1, 0, 0, 0],
            })
        }
    };
    let [d, h, w] = dims;
    let at = |i: usize, j: usize, k: usize| volume.data()[(i * h + j) * w + k];
    let (cd, ch, cw) = (d / 2, h / 2, w / 2);
    let sag = (0..h)
        .flat_map(|j| (0..w).map(move |k| (j, k)))
        .map(|(j, k)| at(cd, j, k))
        .collect();
    let cor = (0..d)
        .flat_map(|i| (0..w).map(move |k| (i, k)))
        .map(|(i, k)| at(i, ch, k))
        .collect();
    let axi = (0..d)
        .flat_map(|i| (0..h).map(move |j| (i, j)))
        .map(|(i, j)| at(i, j, cw))
        .collect();
    Ok(vec![
        ("sagittal", h, w, sag),
        ("coronal", d, w, cor),
        ("axial", d, h, axi),
    ])
}

pub fn shade(values: &[f32], rows: usize, cols: usize, shading: Shading) -> GrayImage {
    let pixels = match shading {
        Shading::Intensity => {
            let lo = values.iter().copied().fold(f32::INFINITY, f32::min);
            let hi = values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let span = hi - lo;
            values
                .iter()
                .map(|&v| {
                    if span > 0.0 {
                        ((v - lo) / span * 255.0).round() as u8
                    } else {
                        0
                    }
                })
                .collect()
        }
        Shading::Signed => {
            let m = values.iter().fold(0.0f32, |m, v| m.max(v.abs()));
            values
                .iter()
                .map(|&v| {
                    if m > 0.0 {
                        (127.5 + v / m * 127.5).round().clamp(0.0, 255.0) as u8
                    } else {
                        128
                    }
                })
                .collect()
        }
    };
    GrayImage {
        width: cols,
        height: rows,
        pixels,
    }
}

pub fn write_pgm(path: &Path, image: &GrayImage) -> Result<()> {
    write_atomic(path, &image.encode())
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    GrayImage::decode(path, &read_bytes(path)?)
}
