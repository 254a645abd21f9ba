//! Single-file NIfTI-1 (`.nii`) reading and writing for rank-3 volumes.
//!
//! Volumes are stored `[D, H, W]` in memory with D as the first (sagittal)
//! axis; NIfTI stores x fastest, so the mapping is `(x, y, z) = (d, h, w)`
//! and the payload is transposed on the way in and out. Compressed files
//! are not supported.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use super::container::VolumeData;
use super::{read_bytes, write_atomic};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const HEADER_SIZE: usize = 348;
pub const VOX_OFFSET: usize = 352;
pub const MAGIC: &[u8; 4] = b"n+1\0";

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_INT32: i16 = 8;
const DT_FLOAT32: i16 = 16;
const DT_FLOAT64: i16 = 64;

/// True when the file starts with a little-endian NIfTI-1 header size.
pub fn looks_like_nifti(path: &Path) -> Result<bool> {
    let mut head = [0u8; 4];
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    match f.read_exact(&mut head) {
        Ok(()) => Ok(i32::from_le_bytes(head) == HEADER_SIZE as i32
            || i32::from_be_bytes(head) == HEADER_SIZE as i32),
        Err(_) => Ok(false),
    }
}

fn put<const N: usize>(buf: &mut [u8], at: usize, bytes: [u8; N]) {
    buf[at..at + N].copy_from_slice(&bytes);
}

pub fn encode(data: &VolumeData) -> Result<Vec<u8>> {
    let shape = data.shape().to_vec();
    if shape.len() != 3 {
        return Err(Error::InvalidConfig(format!(
            "NIfTI export needs a rank-3 volume, got shape {shape:?}"
        )));
    }
    let (nx, ny, nz) = (shape[0], shape[1], shape[2]);
    let mut buf = vec![0u8; VOX_OFFSET];
    put(&mut buf, 0, (HEADER_SIZE as i32).to_le_bytes());
    buf[38] = b'r';
    let dims = [3, nx as i16, ny as i16, nz as i16, 1, 1, 1, 1];
    for (i, d) in dims.iter().enumerate() {
        put(&mut buf, 40 + 2 * i, d.to_le_bytes());
    }
    let datatype = match data {
        VolumeData::F32(_) => DT_FLOAT32,
        VolumeData::I32 { .. } => DT_INT32,
    };
    put(&mut buf, 70, datatype.to_le_bytes());
    put(&mut buf, 72, 32i16.to_le_bytes());
    let pixdim = [1.0f32, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0];
    for (i, p) in pixdim.iter().enumerate() {
        put(&mut buf, 76 + 4 * i, p.to_le_bytes());
    }
    put(&mut buf, 108, (VOX_OFFSET as f32).to_le_bytes());
    put(&mut buf, 112, 1.0f32.to_le_bytes());
    put(&mut buf, 116, 0.0f32.to_le_bytes());
    buf[123] = 2; // millimetres
    put(&mut buf, 254, 1i16.to_le_bytes());
    for (row, at) in [280usize, 296, 312].into_iter().enumerate() {
        for col in 0..4 {
            let v = if row == col { 1.0f32 } else { 0.0 };
            put(&mut buf, at + 4 * col, v.to_le_bytes());
        }
    }
    buf[344..348].copy_from_slice(MAGIC);

    let n = nx * ny * nz;
    buf.reserve(n * 4);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let src = (x * ny + y) * nz + z;
                match data {
                    VolumeData::F32(t) => buf.extend_from_slice(&t.data()[src].to_le_bytes()),
                    VolumeData::I32 { data, .. } => buf.extend_from_slice(&data[src].to_le_bytes()),
                }
            }
        }
    }
    Ok(buf)
}

fn i16_at(b: &[u8], at: usize) -> i16 {
    i16::from_le_bytes([b[at], b[at + 1]])
}

fn f32_at(b: &[u8], at: usize) -> f32 {
    f32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

pub fn decode(path: &Path, bytes: &[u8]) -> Result<VolumeData> {
    if bytes.len() < HEADER_SIZE {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: HEADER_SIZE,
            actual: bytes.len(),
        });
    }
    let sizeof_hdr = i32::from_le_bytes(bytes[0..4].try_into().unwrap());
    if sizeof_hdr != HEADER_SIZE as i32 {
        let msg = if i32::from_be_bytes(bytes[0..4].try_into().unwrap()) == HEADER_SIZE as i32 {
            "big-endian NIfTI files are not supported".to_string()
        } else {
            format!("header size {sizeof_hdr}, expected {HEADER_SIZE}")
        };
        return Err(Error::format(path, msg));
    }
    if &bytes[344..348] != MAGIC {
        return Err(Error::format(
            path,
            "missing single-file NIfTI-1 magic \"n+1\"",
        ));
    }
    let rank = i16_at(bytes, 40);
    let dims: Vec<i16> = (1..8).map(|i| i16_at(bytes, 40 + 2 * i)).collect();
    if rank != 3 {
        return Err(Error::format(
            path,
            format!(
                "unsupported shape: rank {rank} with dims {:?}, only rank-3 volumes are read",
                &dims[..rank.clamp(0, 7) as usize]
            ),
        ));
    }
    if dims[..3].iter().any(|&d| d <= 0) {
        return Err(Error::format(
            path,
            format!("non-positive extent in {:?}", &dims[..3]),
        ));
    }
    let (nx, ny, nz) = (dims[0] as usize, dims[1] as usize, dims[2] as usize);
    let datatype = i16_at(bytes, 70);
    let width = match datatype {
        DT_UINT8 => 1,
        DT_INT16 => 2,
        DT_INT32 | DT_FLOAT32 => 4,
        DT_FLOAT64 => 8,
        other => {
            return Err(Error::format(
                path,
                format!("unsupported datatype code {other}"),
            ))
        }
    };
    let offset = f32_at(bytes, 108);
    if !(offset >= VOX_OFFSET as f32) || offset.fract() != 0.0 {
        return Err(Error::format(path, format!("invalid vox_offset {offset}")));
    }
    let offset = offset as usize;
    let n = nx * ny * nz;
    let expected = offset + n * width;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            actual: bytes.len(),
        });
    }
    let payload = &bytes[offset..expected];
    let raw = |i: usize| -> f64 {
        let b = &payload[i * width..(i + 1) * width];
        match datatype {
            DT_UINT8 => b[0] as f64,
            DT_INT16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            DT_INT32 => i32::from_le_bytes(b.try_into().unwrap()) as f64,
            DT_FLOAT32 => f32::from_le_bytes(b.try_into().unwrap()) as f64,
            _ => f64::from_le_bytes(b.try_into().unwrap()),
        }
    };
    let slope = f32_at(bytes, 112) as f64;
    let inter = f32_at(bytes, 116) as f64;
    let scaled = slope != 0.0 && !(slope == 1.0 && inter == 0.0);
    let nifti_index = |d: usize, h: usize, w: usize| d + nx * (h + ny * w);
    let shape = vec![nx, ny, nz];
    let integer = matches!(datatype, DT_UINT8 | DT_INT16 | DT_INT32);
    if integer && !scaled {
        let mut data = Vec::with_capacity(n);
        for d in 0..nx {
            for h in 0..ny {
                for w in 0..nz {
                    data.push(raw(nifti_index(d, h, w)) as i32);
                }
            }
        }
        return Ok(VolumeData::I32 { shape, data });
    }
    let mut data = Vec::with_capacity(n);
    for d in 0..nx {
        for h in 0..ny {
            for w in 0..nz {
                let v = raw(nifti_index(d, h, w));
                data.push(if scaled { v * slope + inter } else { v } as f32);
            }
        }
    }
    Ok(VolumeData::F32(Tensor::new(shape, data)?))
}

pub fn write_nifti(path: &Path, data: &VolumeData) -> Result<()> {
    write_atomic(path, &encode(data)?)
}

pub fn read_nifti(path: &Path) -> Result<VolumeData> {
    decode(path, &read_bytes(path)?)
}
