//! Volume container: a small little-endian binary format with a JSON sidecar.
//!
//! ```text
//! offset  size      field
//! 0       4         magic "AROB"
//! 4       2         version (u16, currently 1)
//! 6       1         dtype code (1 = f32, 2 = i32)
//! 7       1         rank
//! 8       4*rank    extents (u32 each)
//! ...     n*4       payload, row-major
//! ```
//!
//! Metadata lives next to the payload in `<file>.json`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_bytes, write_atomic, Cursor};
use crate::data::{AxisSemantics, ClassLabel};
use crate::error::{Error, Result};
use crate::tensor::{numel, Tensor};

pub const MAGIC: &[u8; 4] = b"AROB";
pub const VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32 = 1,
    I32 = 2,
}

#[derive(Clone, Debug, PartialEq)]
pub enum VolumeData {
    F32(Tensor),
    I32 { shape: Vec<usize>, data: Vec<i32> },
}

impl VolumeData {
    pub fn shape(&self) -> &[usize] {
        match self {
            VolumeData::F32(t) => t.shape(),
            VolumeData::I32 { shape, .. } => shape,
        }
    }

    pub fn dtype(&self) -> DType {
        match self {
            VolumeData::F32(_) => DType::F32,
            VolumeData::I32 { .. } => DType::I32,
        }
    }

    pub fn to_f32(&self) -> Tensor {
        match self {
            VolumeData::F32(t) => t.clone(),
            VolumeData::I32 { shape, data } => {
                Tensor::new(shape.clone(), data.iter().map(|&v| v as f32).collect())
                    .expect("container shape is consistent")
            }
        }
    }

    pub(crate) fn payload(&self) -> Vec<u8> {
        match self {
            VolumeData::F32(t) => t.data().iter().flat_map(|v| v.to_le_bytes()).collect(),
            VolumeData::I32 { data, .. } => data.iter().flat_map(|v| v.to_le_bytes()).collect(),
        }
    }
}

/// Free-form provenance stored beside a container.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Sidecar {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub run: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timepoint: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<ClassLabel>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_class: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub axes: Option<AxisSemantics>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

pub fn encode(data: &VolumeData) -> Vec<u8> {
    let shape = data.shape();
    let mut out = Vec::with_capacity(8 + 4 * shape.len() + numel(shape) * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(data.dtype() as u8);
    out.push(shape.len() as u8);
    for &e in shape {
        out.extend_from_slice(&(e as u32).to_le_bytes());
    }
    out.extend_from_slice(&data.payload());
    out
}

pub fn decode(path: &Path, bytes: &[u8]) -> Result<VolumeData> {
    let mut cur = Cursor::new(path, bytes);
    if cur.take(4).ok() != Some(&MAGIC[..]) {
        return Err(Error::format(path, "bad magic, not a volume container"));
    }
    let version = cur.u16()?;
    if version != VERSION {
        return Err(Error::format(
            path,
            format!("unsupported container version {version}"),
        ));
    }
    let dtype = cur.u8()?;
    let rank = cur.u8()? as usize;
    if rank == 0 {
        return Err(Error::format(path, "rank 0 container"));
    }
    let shape: Vec<usize> = (0..rank)
        .map(|_| cur.u32().map(|e| e as usize))
        .collect::<Result<_>>()?;
    if shape.contains(&0) {
        return Err(Error::format(path, format!("zero extent in {shape:?}")));
    }
    let n = numel(&shape);
    let expected = n * 4;
    let payload = &bytes[cur.pos..];
    if payload.len() != expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            actual: payload.len(),
        });
    }
    let words = payload
        .chunks_exact(4)
        .map(|c| <[u8; 4]>::try_from(c).unwrap());
    match dtype {
        1 => Ok(VolumeData::F32(Tensor::new(
            shape,
            words.map(f32::from_le_bytes).collect(),
        )?)),
        2 => Ok(VolumeData::I32 {
            shape,
            data: words.map(i32::from_le_bytes).collect(),
        }),
        other => Err(Error::format(path, format!("unknown dtype code {other}"))),
    }
}

pub fn write_container(path: &Path, data: &VolumeData, sidecar: Option<&Sidecar>) -> Result<()> {
    write_atomic(path, &encode(data))?;
    if let Some(meta) = sidecar {
        let mut json = serde_json::to_vec_pretty(meta)?;
        json.push(b'\n');
        write_atomic(&sidecar_path(path), &json)?;
    }
    Ok(())
}

pub fn write_tensor(path: &Path, tensor: &Tensor, sidecar: Option<&Sidecar>) -> Result<()> {
    write_container(path, &VolumeData::F32(tensor.clone()), sidecar)
}

pub fn read_container(path: &Path) -> Result<(VolumeData, Option<Sidecar>)> {
    let data = decode(path, &read_bytes(path)?)?;
    let side = sidecar_path(path);
    let meta = if side.exists() {
        Some(serde_json::from_slice(&read_bytes(&side)?)?)
    } else {
        None
    };
    Ok((data, meta))
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    match read_container(path)?.0 {
        VolumeData::F32(t) => Ok(t),
        VolumeData::I32 { .. } => Err(Error::format(path, "expected f32 payload, found i32")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let bytes = encode(&VolumeData::F32(t));
        assert_eq!(&bytes[0..4], b"AROB");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(bytes[6], 1);
        assert_eq!(bytes[7], 2);
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &3u32.to_le_bytes());
        assert_eq!(bytes.len(), 16 + 24);
        assert_eq!(&bytes[16..20], &1.0f32.to_le_bytes());
    }

    #[test]
    fn truncated_payload_names_byte_counts() {
        let t = Tensor::<f32>::zeros(&[4, 4]);
        let mut bytes = encode(&VolumeData::F32(t));
        bytes.truncate(bytes.len() - 3);
        match decode(Path::new("x.arob"), &bytes) {
            Err(Error::Truncated {
                expected, actual, ..
            }) => {
                assert_eq!((expected, actual), (64, 61));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn corrupted_magic_and_version_rejected() {
        let mut bytes = encode(&VolumeData::F32(Tensor::zeros(&[2])));
        bytes[4] = 9;
        assert!(matches!(
            decode(Path::new("v"), &bytes),
            Err(Error::Format { .. })
        ));
        bytes[0] = b'X';
        assert!(matches!(
            decode(Path::new("m"), &bytes),
            Err(Error::Format { .. })
        ));
    }

    proptest! {
        #[test]
        fn encode_decode_is_bit_exact(
            shape in prop::collection::vec(1usize..5, 1..4),
            seed in any::<u32>(),
        ) {
            let n = numel(&shape);
            let mut s = seed as u64;
            let t = Tensor::from_fn(&shape, |_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
                f32::from_bits((s >> 32) as u32 & 0x7f7f_ffff)
            });
            let back = decode(Path::new("p"), &encode(&VolumeData::F32(t.clone()))).unwrap();
            let VolumeData::F32(b) = back else { panic!() };
            prop_assert_eq!(b.shape(), t.shape());
            prop_assert!(b.data().iter().zip(t.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
            let ints = VolumeData::I32 { shape: shape.clone(), data: (0..n as i32).map(|v| v - 3).collect() };
            prop_assert_eq!(decode(Path::new("q"), &encode(&ints)).unwrap(), ints);
        }
    }
}
