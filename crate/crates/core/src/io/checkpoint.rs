//! Network checkpoints: `"ARCK"`, a u16 version, a u32 JSON header length,
//! the JSON header, then every tensor as little-endian f32 in layer order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_bytes, write_atomic, Cursor};
use crate::error::{Error, Result};
use crate::nn::{BatchNorm, Layer, Network, NetworkSpec};
use crate::tensor::{numel, Tensor};

pub const MAGIC: &[u8; 4] = b"ARCK";
pub const VERSION: u16 = 1;

/// Training provenance recorded with the weights.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CheckpointMeta {
    pub run: usize,
    pub seed: u64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub best_val_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum LayerDesc {
    Conv3d {
        weight: Vec<usize>,
    },
    BatchNorm {
        channels: usize,
        eps: f64,
        momentum: f64,
    },
    Relu,
    MaxPool {
        size: usize,
    },
    Dropout {
        rate: f64,
    },
    Dense {
        weight: Vec<usize>,
    },
}

#[derive(Serialize, Deserialize)]
struct Header {
    input_shape: Vec<usize>,
    spec: Option<NetworkSpec>,
    meta: CheckpointMeta,
    layers: Vec<LayerDesc>,
}

pub fn encode(net: &Network, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    let mut payload: Vec<&Tensor> = Vec::new();
    let layers = net
        .layers()
        .iter()
        .map(|layer| match layer {
            Layer::Conv3d { weight, bias } => {
                payload.extend([weight, bias]);
                LayerDesc::Conv3d {
                    weight: weight.shape().to_vec(),
                }
            }
            Layer::BatchNorm(bn) => {
                payload.extend([&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var]);
                LayerDesc::BatchNorm {
                    channels: bn.channels(),
                    eps: bn.eps,
                    momentum: bn.momentum,
                }
            }
            Layer::Relu => LayerDesc::Relu,
            Layer::MaxPool { size } => LayerDesc::MaxPool { size: *size },
            Layer::Dropout { rate } => LayerDesc::Dropout { rate: *rate },
            Layer::Dense { weight, bias } => {
                payload.extend([weight, bias]);
                LayerDesc::Dense {
                    weight: weight.shape().to_vec(),
                }
            }
        })
        .collect();
    let header = serde_json::to_vec(&Header {
        input_shape: net.input_shape().to_vec(),
        spec: net.spec().cloned(),
        meta: meta.clone(),
        layers,
    })?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for t in payload {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(path: &Path, bytes: &[u8]) -> Result<(Network, CheckpointMeta)> {
    let mut cur = Cursor::new(path, bytes);
    if cur.take(4).ok() != Some(&MAGIC[..]) {
        return Err(Error::format(path, "bad magic, not a checkpoint"));
    }
    let version = cur.u16()?;
    if version != VERSION {
        return Err(Error::format(
            path,
            format!("unsupported checkpoint version {version}"),
        ));
    }
    let len = cur.u32()? as usize;
    let header: Header = serde_json::from_slice(cur.take(len)?)?;
    let mut tensor = |shape: Vec<usize>| -> Result<Tensor> {
        let n = numel(&shape);
        let raw = cur.take(n * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::new(shape, data)
    };
    let mut layers = Vec::with_capacity(header.layers.len());
    for desc in header.layers {
        layers.push(match desc {
            LayerDesc::Conv3d { weight } => {
                let out = weight.first().copied().unwrap_or(0);
                Layer::Conv3d {
                    weight: tensor(weight)?,
                    bias: tensor(vec![out])?,
                }
            }
            LayerDesc::BatchNorm {
                channels,
                eps,
                momentum,
            } => {
                let mut bn = BatchNorm::new(channels, eps, momentum);
                bn.gamma = tensor(vec![channels])?;
                bn.beta = tensor(vec![channels])?;
                bn.running_mean = tensor(vec![channels])?;
                bn.running_var = tensor(vec![channels])?;
                Layer::BatchNorm(bn)
            }
            LayerDesc::Relu => Layer::Relu,
            LayerDesc::MaxPool { size } => Layer::MaxPool { size },
            LayerDesc::Dropout { rate } => Layer::Dropout { rate },
            LayerDesc::Dense { weight } => {
                let out = weight.first().copied().unwrap_or(0);
                Layer::Dense {
                    weight: tensor(weight)?,
                    bias: tensor(vec![out])?,
                }
            }
        });
    }
    if cur.pos != bytes.len() {
        return Err(Error::format(
            path,
            format!("{} trailing bytes after payload", bytes.len() - cur.pos),
        ));
    }
    let mut net = Network::from_layers(header.input_shape, layers)?;
    net.set_spec(header.spec);
    Ok((net, header.meta))
}

pub fn write_checkpoint(path: &Path, net: &Network, meta: &CheckpointMeta) -> Result<()> {
    write_atomic(path, &encode(net, meta)?)
}

pub fn read_checkpoint(path: &Path) -> Result<(Network, CheckpointMeta)> {
    decode(path, &read_bytes(path)?)
}
