//! Eval-mode forward passes for inputs that differ from an already traced
//! input only inside a small box, as in occlusion sweeps.
//!
//! Spatial layers recompute just the box (grown by the receptive field) and
//! read everything else from the base trace. The first non-spatial layer
//! materializes the full activation. Results are bit-identical to a full
//! forward of the patched input.

use super::layers::{dims5, gemm_row, im2col, pool_channel, Layer, Region3};
use super::network::{ForwardTrace, Mode, Network};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

struct Patch<T: Element> {
    region: Region3,
    channels: usize,
    values: Vec<T>,
}

enum State<T: Element> {
    Patch(Patch<T>),
    Full(Tensor<T>),
}

/// Copy `region` of every channel out of `base`, overlaying `patch`.
fn gather<T: Element>(base: &Tensor<T>, patch: &Patch<T>, region: Region3) -> Vec<T> {
    let (_, c, vol) = dims5(base.shape());
    let [rd, rh, rw] = region.dims();
    let [pd, ph, pw] = patch.region.dims();
    let mut out = Vec::with_capacity(c * region.volume());
    for ch in 0..c {
        for d in region.lo[0]..region.hi[0] {
            for h in region.lo[1]..region.hi[1] {
                let start = ((ch * vol[0] + d) * vol[1] + h) * vol[2];
                out.extend_from_slice(&base.data()[start + region.lo[2]..start + region.hi[2]]);
            }
        }
    }
    let lo = [0, 1, 2].map(|a| region.lo[a].max(patch.region.lo[a]));
    let hi = [0, 1, 2].map(|a| region.hi[a].min(patch.region.hi[a]));
    if (0..3).any(|a| lo[a] >= hi[a]) {
        return out;
    }
    for ch in 0..c {
        for d in lo[0]..hi[0] {
            for h in lo[1]..hi[1] {
                for w in lo[2]..hi[2] {
                    let dst = ((ch * rd + d - region.lo[0]) * rh + h - region.lo[1]) * rw + w
                        - region.lo[2];
                    let src =
                        ((ch * pd + d - patch.region.lo[0]) * ph + h - patch.region.lo[1]) * pw + w
                            - patch.region.lo[2];
                    out[dst] = patch.values[src];
                }
            }
        }
    }
    out
}

fn materialize<T: Element>(base: &Tensor<T>, patch: &Patch<T>) -> Tensor<T> {
    let (_, c, vol) = dims5(base.shape());
    let full = Region3::full(vol);
    Tensor::new(base.shape().to_vec(), gather(base, patch, full))
        .expect("gathered full region matches base shape")
        .reshape(&[1, c, vol[0], vol[1], vol[2]])
        .expect("same element count")
}

impl<T: Element> Network<T> {
    /// Logits of `base`'s input with `values` (`[C, region dims]`) written
    /// into `region`. `base` must be an eval-mode trace of a single sample.
    pub fn forward_eval_patched(
        &self,
        base: &ForwardTrace<T>,
        region: Region3,
        values: Vec<T>,
    ) -> Result<Tensor<T>> {
        if base.mode != Mode::Eval || base.inputs.len() != self.layers().len() {
            return Err(Error::StaleTrace {
                expected: self.layers().len(),
                actual: base.inputs.len(),
            });
        }
        let input = &base.inputs[0];
        if input.rank() != 5 || input.shape()[0] != 1 {
            return Err(Error::InvalidConfig(format!(
                "patched forward needs a single volumetric sample, got {:?}",
                input.shape()
            )));
        }
        let channels = input.shape()[1];
        if values.len() != channels * region.volume() {
            return Err(Error::DataLength {
                shape: vec![
                    channels,
                    region.dims()[0],
                    region.dims()[1],
                    region.dims()[2],
                ],
                len: values.len(),
                expected: channels * region.volume(),
            });
        }
        let mut no_rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut state = State::Patch(Patch {
            region,
            channels,
            values,
        });
        for (i, layer) in self.layers().iter().enumerate() {
            let base_in = &base.inputs[i];
            state = match state {
                State::Full(t) => {
                    State::Full(self.layer_forward(layer, &t, Mode::Eval, &mut no_rng).0)
                }
                State::Patch(p) => match layer {
                    Layer::Conv3d { weight, bias } => {
                        let (_, ci, vol) = dims5(base_in.shape());
                        let (co, k) = (weight.shape()[0], weight.shape()[2]);
                        let out_region = p.region.expand(k / 2, vol);
                        let in_region = out_region.expand(k / 2, vol);
                        let buf = gather(base_in, &p, in_region);
                        let col = im2col(&buf, in_region, ci, k, vol, out_region);
                        let rows = ci * k * k * k;
                        let n = out_region.volume();
                        let mut values = vec![T::zero(); co * n];
                        for (o, chunk) in values.chunks_mut(n).enumerate() {
                            gemm_row(
                                &col,
                                &weight.data()[o * rows..(o + 1) * rows],
                                bias.data()[o],
                                chunk,
                            );
                        }
                        State::Patch(Patch {
                            region: out_region,
                            channels: co,
                            values,
                        })
                    }
                    Layer::BatchNorm(bn) => {
                        let (scale, shift) = bn.eval_affine();
                        let n = p.region.volume();
                        let mut p = p;
                        for (ch, chunk) in p.values.chunks_mut(n).enumerate() {
                            for x in chunk {
                                *x = *x * scale[ch] + shift[ch];
                            }
                        }
                        State::Patch(p)
                    }
                    Layer::Relu => {
                        let mut p = p;
                        for x in &mut p.values {
                            *x = x.max(T::zero());
                        }
                        State::Patch(p)
                    }
                    Layer::Dropout { .. } => State::Patch(p),
                    Layer::MaxPool { size } => {
                        let size = *size;
                        let out_region = Region3 {
                            lo: p.region.lo.map(|l| l / size),
                            hi: p.region.hi.map(|h| h.div_ceil(size)),
                        };
                        let in_region = Region3 {
                            lo: out_region.lo.map(|l| l * size),
                            hi: out_region.hi.map(|h| h * size),
                        };
                        let buf = gather(base_in, &p, in_region);
                        let (n_in, n_out) = (in_region.volume(), out_region.volume());
                        let mut values = vec![T::zero(); p.channels * n_out];
                        let mut winners = vec![0u32; n_out];
                        for (ch, chunk) in values.chunks_mut(n_out).enumerate() {
                            pool_channel(
                                &buf[ch * n_in..(ch + 1) * n_in],
                                in_region,
                                size,
                                out_region,
                                chunk,
                                &mut winners,
                            );
                        }
                        State::Patch(Patch {
                            region: out_region,
                            channels: p.channels,
                            values,
                        })
                    }
                    Layer::Dense { .. } => {
                        let full = materialize(base_in, &p);
                        State::Full(self.layer_forward(layer, &full, Mode::Eval, &mut no_rng).0)
                    }
                },
            };
        }
        match state {
            State::Full(t) => Ok(t),
            State::Patch(p) => {
                let out = &base.output;
                if out.rank() == 5 {
                    Ok(materialize(out, &p))
                } else {
                    Err(Error::InvalidConfig(
                        "network ends in a spatial layer".into(),
                    ))
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::spec::{BlockSpec, NetworkSpec};

    #[test]
    fn patched_forward_matches_full_forward_bitwise() {
        let spec = NetworkSpec {
            input_shape: [12, 12, 12],
            blocks: vec![
                BlockSpec {
                    filters: 3,
                    pool: 2,
                },
                BlockSpec {
                    filters: 4,
                    pool: 3,
                },
                BlockSpec {
                    filters: 5,
                    pool: 2,
                },
            ],
            dense_hidden: 6,
            ..NetworkSpec::default()
        };
        let net: Network = Network::build(&spec, 9).unwrap();
        let x = Tensor::from_fn(&[1, 1, 12, 12, 12], |i| ((i * 7919) % 101) as f32 / 101.0);
        let (_, trace) = net.forward_eval(&x).unwrap();
        for region in [
            Region3 {
                lo: [0, 0, 0],
                hi: [3, 3, 3],
            },
            Region3 {
                lo: [4, 7, 2],
                hi: [8, 11, 6],
            },
            Region3 {
                lo: [9, 9, 9],
                hi: [12, 12, 12],
            },
            Region3::full([12, 12, 12]),
        ] {
            let mut occluded = x.clone();
            for d in region.lo[0]..region.hi[0] {
                for h in region.lo[1]..region.hi[1] {
                    for w in region.lo[2]..region.hi[2] {
                        let o = occluded.offset(&[0, 0, d, h, w]);
                        occluded.data_mut()[o] = 0.0;
                    }
                }
            }
            let full = net.predict(&occluded).unwrap();
            let fast = net
                .forward_eval_patched(&trace, region, vec![0.0; region.volume()])
                .unwrap();
            assert_eq!(full, fast, "region {region:?}");
        }
    }
}
