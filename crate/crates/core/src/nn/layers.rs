//! Layer definitions and their batched kernels.
//!
//! Spatial layers operate on `[N, C, D, H, W]`; dense layers flatten every
//! non-batch axis. All kernels are deterministic: each output element is
//! produced by exactly one worker in a fixed accumulation order.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub enum Layer<T: Element = f32> {
    /// Same-padded 3D convolution, weight `[out, in, k, k, k]`, bias `[out]`.
    Conv3d {
        weight: Tensor<T>,
        bias: Tensor<T>,
    },
    BatchNorm(BatchNorm<T>),
    Relu,
    /// Non-overlapping max pooling with window = stride = `size`.
    MaxPool {
        size: usize,
    },
    /// Inverted dropout; identity in eval mode.
    Dropout {
        rate: f64,
    },
    /// Weight `[out, in]`, bias `[out]`.
    Dense {
        weight: Tensor<T>,
        bias: Tensor<T>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm<T: Element = f32> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub eps: f64,
    pub momentum: f64,
}

impl<T: Element> BatchNorm<T> {
    pub fn new(channels: usize, eps: f64, momentum: f64) -> Self {
        BatchNorm {
            gamma: Tensor::full(&[channels], T::one()),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            eps,
            momentum,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Per-channel `(scale, shift)` of the eval-mode affine map `y = x * scale + shift`.
    pub fn eval_affine(&self) -> (Vec<T>, Vec<T>) {
        (0..self.channels())
            .map(|c| {
                let inv = 1.0 / (self.running_var.data()[c].as_f64() + self.eps).sqrt();
                let scale = self.gamma.data()[c].as_f64() * inv;
                let shift =
                    self.beta.data()[c].as_f64() - self.running_mean.data()[c].as_f64() * scale;
                (T::from_f64_lossy(scale), T::from_f64_lossy(shift))
            })
            .unzip()
    }
}

impl<T: Element> Layer<T> {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv3d { .. } => "conv3d",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::Relu => "relu",
            Layer::MaxPool { .. } => "maxpool",
            Layer::Dropout { .. } => "dropout",
            Layer::Dense { .. } => "dense",
        }
    }

    /// Trainable tensors in a fixed order.
    pub fn params(&self) -> Vec<&Tensor<T>> {
        match self {
            Layer::Conv3d { weight, bias } | Layer::Dense { weight, bias } => vec![weight, bias],
            Layer::BatchNorm(bn) => vec![&bn.gamma, &bn.beta],
            _ => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Layer::Conv3d { weight, bias } | Layer::Dense { weight, bias } => vec![weight, bias],
            Layer::BatchNorm(bn) => vec![&mut bn.gamma, &mut bn.beta],
            _ => vec![],
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        match self {
            Layer::Conv3d { weight, bias } => {
                let ws = weight.shape();
                if ws.len() != 5 || ws[2] != ws[3] || ws[3] != ws[4] || ws[2] % 2 == 0 {
                    return bad(format!(
                        "conv weight shape {ws:?} must be [out, in, k, k, k] with odd k"
                    ));
                }
                if input.len() != 4 || input[0] != ws[1] {
                    return bad(format!("conv expects [{}, D, H, W], got {input:?}", ws[1]));
                }
                if bias.shape() != [ws[0]] {
                    return bad(format!("conv bias shape {:?} != [{}]", bias.shape(), ws[0]));
                }
                Ok(vec![ws[0], input[1], input[2], input[3]])
            }
            Layer::BatchNorm(bn) => {
                if input.is_empty() || input[0] != bn.channels() {
                    return bad(format!(
                        "batchnorm over {} channels got input {input:?}",
                        bn.channels()
                    ));
                }
                Ok(input.to_vec())
            }
            Layer::Relu | Layer::Dropout { .. } => Ok(input.to_vec()),
            Layer::MaxPool { size } => {
                if input.len() != 4 || input[1..].iter().any(|&e| e % size != 0) || *size == 0 {
                    return bad(format!("maxpool size {size} incompatible with {input:?}"));
                }
                Ok(vec![
                    input[0],
                    input[1] / size,
                    input[2] / size,
                    input[3] / size,
                ])
            }
            Layer::Dense { weight, bias } => {
                let ws = weight.shape();
                let features: usize = input.iter().product();
                if ws.len() != 2 || ws[1] != features || bias.shape() != [ws[0]] {
                    return bad(format!(
                        "dense weight {ws:?} / bias {:?} incompatible with {features} features",
                        bias.shape()
                    ));
                }
                Ok(vec![ws[0]])
            }
        }
    }
}

/// Spatial extents plus channel count of a `[N, C, D, H, W]` tensor.
pub(crate) fn dims5(shape: &[usize]) -> (usize, usize, [usize; 3]) {
    (shape[0], shape[1], [shape[2], shape[3], shape[4]])
}

/// Half-open box of spatial positions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Region3 {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl Region3 {
    pub fn full(dims: [usize; 3]) -> Self {
        Region3 {
            lo: [0; 3],
            hi: dims,
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        [
            self.hi[0] - self.lo[0],
            self.hi[1] - self.lo[1],
            self.hi[2] - self.lo[2],
        ]
    }

    pub fn volume(&self) -> usize {
        self.dims().iter().product()
    }

    pub fn expand(&self, by: usize, bound: [usize; 3]) -> Self {
        Region3 {
            lo: self.lo.map(|l| l.saturating_sub(by)),
            hi: [
                (self.hi[0] + by).min(bound[0]),
                (self.hi[1] + by).min(bound[1]),
                (self.hi[2] + by).min(bound[2]),
            ],
        }
    }

    pub fn contains(&self, p: [usize; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.lo[a] && p[a] < self.hi[a])
    }
}

/// Unrolled convolution input for the output positions in `out_region`.
///
/// `input` holds every channel of a buffer covering `in_region` of a volume
/// with extents `vol`. Row `r = ((ci * k + kd) * k + kh) * k + kw` of the
/// result lists, for each output position in row-major order, the input
/// value under that kernel tap (zero outside the volume).
pub(crate) fn im2col<T: Element>(
    input: &[T],
    in_region: Region3,
    in_channels: usize,
    k: usize,
    vol: [usize; 3],
    out_region: Region3,
) -> Vec<T> {
    let pad = (k / 2) as isize;
    let [id, ih, iw] = in_region.dims();
    let [od, oh, ow] = out_region.dims();
    let positions = od * oh * ow;
    let mut col = vec![T::zero(); in_channels * k * k * k * positions];
    let mut r = 0;
    for ci in 0..in_channels {
        let chan = &input[ci * id * ih * iw..(ci + 1) * id * ih * iw];
        for kd in 0..k {
            for kh in 0..k {
                for kw in 0..k {
                    let row = &mut col[r * positions..(r + 1) * positions];
                    r += 1;
                    let (sd, sh, sw) = (kd as isize - pad, kh as isize - pad, kw as isize - pad);
                    let w_lo = (out_region.lo[2] as isize).max(-sw);
                    let w_hi = (out_region.hi[2] as isize).min(vol[2] as isize - sw);
                    if w_lo >= w_hi {
                        continue;
                    }
                    let o0 = (w_lo - out_region.lo[2] as isize) as usize;
                    let len = (w_hi - w_lo) as usize;
                    let i0 = (w_lo + sw) as usize - in_region.lo[2];
                    for d in 0..od {
                        let ad = (out_region.lo[0] + d) as isize + sd;
                        if ad < 0 || ad >= vol[0] as isize {
                            continue;
                        }
                        let bd = ad as usize - in_region.lo[0];
                        for h in 0..oh {
                            let ah = (out_region.lo[1] + h) as isize + sh;
                            if ah < 0 || ah >= vol[1] as isize {
                                continue;
                            }
                            let bh = ah as usize - in_region.lo[1];
                            let src = (bd * ih + bh) * iw + i0;
                            let dst = (d * oh + h) * ow + o0;
                            row[dst..dst + len].copy_from_slice(&chan[src..src + len]);
                        }
                    }
                }
            }
        }
    }
    col
}

const TILE: usize = 512;

/// `out[pos] = bias + sum_r w[r] * col[r][pos]`, accumulated in `r` order.
pub(crate) fn gemm_row<T: Element>(col: &[T], weights: &[T], bias: T, out: &mut [T]) {
    let positions = out.len();
    out.fill(bias);
    let mut start = 0;
    while start < positions {
        let end = (start + TILE).min(positions);
        let tile = &mut out[start..end];
        for (r, &wv) in weights.iter().enumerate() {
            let src = &col[r * positions + start..r * positions + end];
            for (o, &x) in tile.iter_mut().zip(src) {
                *o += wv * x;
            }
        }
        start = end;
    }
}

/// Eight-lane dot product accumulated in `T`, summed into `f64`.
pub(crate) fn dot<T: Element>(a: &[T], b: &[T]) -> f64 {
    let mut lanes = [T::zero(); 8];
    let chunks = a.len() / 8;
    for (ca, cb) in a[..chunks * 8]
        .chunks_exact(8)
        .zip(b[..chunks * 8].chunks_exact(8))
    {
        for j in 0..8 {
            lanes[j] += ca[j] * cb[j];
        }
    }
    let mut total: f64 = lanes.iter().map(|x| x.as_f64()).sum();
    for (&x, &y) in a[chunks * 8..].iter().zip(&b[chunks * 8..]) {
        total += (x * y).as_f64();
    }
    total
}

pub(crate) fn conv_forward<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Tensor<T> {
    let (n, ci, vol) = dims5(input.shape());
    let co = weight.shape()[0];
    let k = weight.shape()[2];
    let spatial: usize = vol.iter().product();
    let rows = ci * k * k * k;
    let region = Region3::full(vol);
    let mut out = Tensor::zeros(&[n, co, vol[0], vol[1], vol[2]]);
    for (s, out_sample) in out.data_mut().chunks_mut(co * spatial).enumerate() {
        let sample = &input.data()[s * ci * spatial..(s + 1) * ci * spatial];
        let col = im2col(sample, region, ci, k, vol, region);
        out_sample
            .par_chunks_mut(spatial)
            .enumerate()
            .for_each(|(o, chunk)| {
                gemm_row(
                    &col,
                    &weight.data()[o * rows..(o + 1) * rows],
                    bias.data()[o],
                    chunk,
                )
            });
    }
    out
}

/// Returns (grad_input, grad_weight, grad_bias).
pub(crate) fn conv_backward<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    need_input: bool,
    need_params: bool,
) -> (Tensor<T>, Option<(Tensor<T>, Tensor<T>)>) {
    let (n, ci, vol) = dims5(input.shape());
    let co = weight.shape()[0];
    let k = weight.shape()[2];
    let pad = (k / 2) as isize;
    let spatial: usize = vol.iter().product();
    let rows = ci * k * k * k;
    let region = Region3::full(vol);
    let [vd, vh, vw] = vol;

    let mut grad_in = Tensor::zeros(input.shape());
    let mut grad_w_acc = vec![0.0f64; co * rows];
    let mut grad_b_acc = vec![0.0f64; co];
    for s in 0..n {
        let gout = &grad_out.data()[s * co * spatial..(s + 1) * co * spatial];
        if need_input {
            // dcol[r] = sum_o w[o, r] * gout[o]
            let mut dcol = vec![T::zero(); rows * spatial];
            dcol.par_chunks_mut(spatial)
                .enumerate()
                .for_each(|(r, drow)| {
                    for o in 0..co {
                        let wv = weight.data()[o * rows + r];
                        for (d, &g) in drow.iter_mut().zip(&gout[o * spatial..(o + 1) * spatial]) {
                            *d += wv * g;
                        }
                    }
                });
            // scatter the unrolled gradient back onto the input grid
            let gin_sample = &mut grad_in.data_mut()[s * ci * spatial..(s + 1) * ci * spatial];
            gin_sample
                .par_chunks_mut(spatial)
                .enumerate()
                .for_each(|(c, gin)| {
                    let mut r = c * k * k * k;
                    for kd in 0..k {
                        for kh in 0..k {
                            for kw in 0..k {
                                let drow = &dcol[r * spatial..(r + 1) * spatial];
                                r += 1;
                                let (sd, sh, sw) =
                                    (kd as isize - pad, kh as isize - pad, kw as isize - pad);
                                let w_lo = (-sw).max(0) as usize;
                                let w_hi = (vw as isize - sw).min(vw as isize) as usize;
                                if w_lo >= w_hi {
                                    continue;
                                }
                                let i0 = (w_lo as isize + sw) as usize;
                                for d in 0..vd {
                                    let id = d as isize + sd;
                                    if id < 0 || id >= vd as isize {
                                        continue;
                                    }
                                    for h in 0..vh {
                                        let ih = h as isize + sh;
                                        if ih < 0 || ih >= vh as isize {
                                            continue;
                                        }
                                        let src = &drow
                                            [(d * vh + h) * vw + w_lo..(d * vh + h) * vw + w_hi];
                                        let ibase = (id as usize * vh + ih as usize) * vw + i0;
                                        for (g, &x) in
                                            gin[ibase..ibase + (w_hi - w_lo)].iter_mut().zip(src)
                                        {
                                            *g += x;
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
        }
        if need_params {
            let sample = &input.data()[s * ci * spatial..(s + 1) * ci * spatial];
            let col = im2col(sample, region, ci, k, vol, region);
            grad_w_acc
                .par_chunks_mut(rows)
                .zip(grad_b_acc.par_iter_mut())
                .enumerate()
                .for_each(|(o, (gw, gb))| {
                    let g = &gout[o * spatial..(o + 1) * spatial];
                    *gb += g.iter().map(|x| x.as_f64()).sum::<f64>();
                    for (r, acc) in gw.iter_mut().enumerate() {
                        *acc += dot(g, &col[r * spatial..(r + 1) * spatial]);
                    }
                });
        }
    }
    if !need_params {
        return (grad_in, None);
    }
    let grad_w = Tensor::new(
        weight.shape().to_vec(),
        grad_w_acc.into_iter().map(T::from_f64_lossy).collect(),
    )
    .expect("weight-shaped gradient");
    let grad_b = Tensor::new(
        vec![co],
        grad_b_acc.into_iter().map(T::from_f64_lossy).collect(),
    )
    .expect("bias-shaped gradient");
    (grad_in, Some((grad_w, grad_b)))
}

/// Max pooling; returns output and, per output element, the flat offset of
/// the winning input element within its `[D, H, W]` channel block.
pub(crate) fn maxpool_forward<T: Element>(input: &Tensor<T>, size: usize) -> (Tensor<T>, Vec<u32>) {
    let (n, c, vol) = dims5(input.shape());
    let out_vol = vol.map(|e| e / size);
    let in_spatial: usize = vol.iter().product();
    let out_spatial: usize = out_vol.iter().product();
    let mut out = Tensor::zeros(&[n, c, out_vol[0], out_vol[1], out_vol[2]]);
    let mut winners = vec![0u32; n * c * out_spatial];
    out.data_mut()
        .par_chunks_mut(out_spatial)
        .zip(winners.par_chunks_mut(out_spatial))
        .enumerate()
        .for_each(|(idx, (o, win))| {
            let chan = &input.data()[idx * in_spatial..(idx + 1) * in_spatial];
            pool_channel(
                chan,
                Region3::full(vol),
                size,
                Region3::full(out_vol),
                o,
                win,
            );
        });
    (out, winners)
}

/// Pool one channel over `out_region`; `chan` covers `in_region`.
/// Winner offsets are absolute within the `[D, H, W]` volume.
pub(crate) fn pool_channel<T: Element>(
    chan: &[T],
    in_region: Region3,
    size: usize,
    out_region: Region3,
    out: &mut [T],
    winners: &mut [u32],
) {
    let [_, ih, iw] = in_region.dims();
    let [od, oh, ow] = out_region.dims();
    for d in 0..od {
        for h in 0..oh {
            for w in 0..ow {
                let (ad, ah, aw) = (
                    (out_region.lo[0] + d) * size,
                    (out_region.lo[1] + h) * size,
                    (out_region.lo[2] + w) * size,
                );
                let mut best = T::neg_infinity();
                let mut best_at = (ad, ah, aw);
                let mut first = true;
                for pd in 0..size {
                    for ph in 0..size {
                        for pw in 0..size {
                            let (bd, bh, bw) = (
                                ad + pd - in_region.lo[0],
                                ah + ph - in_region.lo[1],
                                aw + pw - in_region.lo[2],
                            );
                            let v = chan[(bd * ih + bh) * iw + bw];
                            if first || v > best {
                                best = v;
                                best_at = (ad + pd, ah + ph, aw + pw);
                                first = false;
                            }
                        }
                    }
                }
                let i = (d * oh + h) * ow + w;
                out[i] = best;
                winners[i] = encode_pos(best_at);
            }
        }
    }
}

// Positions are packed as 10 bits per axis; volumes are far below 1024 per side.
pub(crate) fn encode_pos((d, h, w): (usize, usize, usize)) -> u32 {
    ((d as u32) << 20) | ((h as u32) << 10) | w as u32
}

pub(crate) fn decode_pos(p: u32) -> (usize, usize, usize) {
    (
        (p >> 20) as usize,
        ((p >> 10) & 0x3ff) as usize,
        (p & 0x3ff) as usize,
    )
}

pub(crate) fn maxpool_backward<T: Element>(
    input_shape: &[usize],
    winners: &[u32],
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    let (_, _, vol) = dims5(input_shape);
    let in_spatial: usize = vol.iter().product();
    let out_spatial = grad_out.len() / (input_shape[0] * input_shape[1]);
    let mut grad_in = Tensor::zeros(input_shape);
    grad_in
        .data_mut()
        .par_chunks_mut(in_spatial)
        .enumerate()
        .for_each(|(idx, gin)| {
            let go = &grad_out.data()[idx * out_spatial..(idx + 1) * out_spatial];
            let win = &winners[idx * out_spatial..(idx + 1) * out_spatial];
            for (&g, &p) in go.iter().zip(win) {
                let (d, h, w) = decode_pos(p);
                gin[(d * vol[1] + h) * vol[2] + w] += g;
            }
        });
    grad_in
}

/// Batch statistics of one batchnorm application.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
    /// Unbiased variance, used for the running estimate.
    pub var_unbiased: Vec<f64>,
}

/// `(N, C, inner)` view of a tensor normalized per channel along axis 1.
fn bn_dims(shape: &[usize]) -> (usize, usize, usize) {
    (shape[0], shape[1], shape[2..].iter().product())
}

pub(crate) fn batchnorm_train<T: Element>(
    bn: &BatchNorm<T>,
    input: &Tensor<T>,
) -> (Tensor<T>, BatchStats) {
    let (n, c, inner) = bn_dims(input.shape());
    let count = (n * inner) as f64;
    let mut stats = BatchStats {
        mean: vec![0.0; c],
        inv_std: vec![0.0; c],
        var_unbiased: vec![0.0; c],
    };
    for ch in 0..c {
        let mut sum = 0.0;
        for s in 0..n {
            let start = (s * c + ch) * inner;
            sum += input.data()[start..start + inner]
                .iter()
                .map(|x| x.as_f64())
                .sum::<f64>();
        }
        let mean = sum / count;
        let mut sq = 0.0;
        for s in 0..n {
            let start = (s * c + ch) * inner;
            sq += input.data()[start..start + inner]
                .iter()
                .map(|x| (x.as_f64() - mean).powi(2))
                .sum::<f64>();
        }
        let var = sq / count;
        stats.mean[ch] = mean;
        stats.inv_std[ch] = 1.0 / (var + bn.eps).sqrt();
        stats.var_unbiased[ch] = if count > 1.0 { sq / (count - 1.0) } else { var };
    }
    let mut out = Tensor::zeros(input.shape());
    for s in 0..n {
        for ch in 0..c {
            let start = (s * c + ch) * inner;
            let g = bn.gamma.data()[ch].as_f64();
            let b = bn.beta.data()[ch].as_f64();
            let (m, is) = (stats.mean[ch], stats.inv_std[ch]);
            for (o, &x) in out.data_mut()[start..start + inner]
                .iter_mut()
                .zip(&input.data()[start..start + inner])
            {
                *o = T::from_f64_lossy(g * (x.as_f64() - m) * is + b);
            }
        }
    }
    (out, stats)
}

pub(crate) fn batchnorm_eval<T: Element>(bn: &BatchNorm<T>, input: &Tensor<T>) -> Tensor<T> {
    let (n, c, inner) = bn_dims(input.shape());
    let (scale, shift) = bn.eval_affine();
    let mut out = input.clone();
    for s in 0..n {
        for ch in 0..c {
            let start = (s * c + ch) * inner;
            for x in &mut out.data_mut()[start..start + inner] {
                *x = *x * scale[ch] + shift[ch];
            }
        }
    }
    out
}

/// Returns (grad_input, grad_gamma, grad_beta). `stats` is `None` for an
/// eval-mode application, where the layer is a fixed affine map.
pub(crate) fn batchnorm_backward<T: Element>(
    bn: &BatchNorm<T>,
    input: &Tensor<T>,
    stats: Option<&BatchStats>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n, c, inner) = bn_dims(input.shape());
    let count = (n * inner) as f64;
    let mut grad_in = Tensor::zeros(input.shape());
    let mut grad_gamma = Tensor::zeros(&[c]);
    let mut grad_beta = Tensor::zeros(&[c]);
    for ch in 0..c {
        let (mean, inv_std) = match stats {
            Some(st) => (st.mean[ch], st.inv_std[ch]),
            None => (
                bn.running_mean.data()[ch].as_f64(),
                1.0 / (bn.running_var.data()[ch].as_f64() + bn.eps).sqrt(),
            ),
        };
        let gamma = bn.gamma.data()[ch].as_f64();
        let (mut sum_g, mut sum_gx) = (0.0, 0.0);
        for s in 0..n {
            let start = (s * c + ch) * inner;
            for (&g, &x) in grad_out.data()[start..start + inner]
                .iter()
                .zip(&input.data()[start..start + inner])
            {
                let g = g.as_f64();
                sum_g += g;
                sum_gx += g * (x.as_f64() - mean) * inv_std;
            }
        }
        grad_gamma.data_mut()[ch] = T::from_f64_lossy(sum_gx);
        grad_beta.data_mut()[ch] = T::from_f64_lossy(sum_g);
        for s in 0..n {
            let start = (s * c + ch) * inner;
            for ((gi, &g), &x) in grad_in.data_mut()[start..start + inner]
                .iter_mut()
                .zip(&grad_out.data()[start..start + inner])
                .zip(&input.data()[start..start + inner])
            {
                let g = g.as_f64();
                let v = if stats.is_some() {
                    let xhat = (x.as_f64() - mean) * inv_std;
                    gamma * inv_std / count * (count * g - sum_g - xhat * sum_gx)
                } else {
                    g * gamma * inv_std
                };
                *gi = T::from_f64_lossy(v);
            }
        }
    }
    (grad_in, grad_gamma, grad_beta)
}

pub(crate) fn dense_forward<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Tensor<T> {
    let n = input.shape()[0];
    let (out_f, in_f) = (weight.shape()[0], weight.shape()[1]);
    let mut out = Tensor::zeros(&[n, out_f]);
    for s in 0..n {
        let x = &input.data()[s * in_f..(s + 1) * in_f];
        for o in 0..out_f {
            let w = &weight.data()[o * in_f..(o + 1) * in_f];
            let mut acc = bias.data()[o].as_f64();
            for (&a, &b) in w.iter().zip(x) {
                acc += (a * b).as_f64();
            }
            out.data_mut()[s * out_f + o] = T::from_f64_lossy(acc);
        }
    }
    out
}

pub(crate) fn dense_backward<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    need_params: bool,
) -> (Tensor<T>, Option<(Tensor<T>, Tensor<T>)>) {
    let n = input.shape()[0];
    let (out_f, in_f) = (weight.shape()[0], weight.shape()[1]);
    let mut grad_in = Tensor::zeros(input.shape());
    for s in 0..n {
        for i in 0..in_f {
            let mut acc = 0.0f64;
            for o in 0..out_f {
                acc += (weight.data()[o * in_f + i] * grad_out.data()[s * out_f + o]).as_f64();
            }
            grad_in.data_mut()[s * in_f + i] = T::from_f64_lossy(acc);
        }
    }
    if !need_params {
        return (grad_in, None);
    }
    let mut grad_w = Tensor::zeros(weight.shape());
    let mut grad_b = Tensor::zeros(&[out_f]);
    for o in 0..out_f {
        let mut gb = 0.0f64;
        for s in 0..n {
            gb += grad_out.data()[s * out_f + o].as_f64();
        }
        grad_b.data_mut()[o] = T::from_f64_lossy(gb);
        for i in 0..in_f {
            let mut acc = 0.0f64;
            for s in 0..n {
                acc += (grad_out.data()[s * out_f + o] * input.data()[s * in_f + i]).as_f64();
            }
            grad_w.data_mut()[o * in_f + i] = T::from_f64_lossy(acc);
        }
    }
    (grad_in, Some((grad_w, grad_b)))
}
