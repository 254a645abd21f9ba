//! Attribution heatmaps: gradient*input, guided backpropagation, epsilon-LRP
//! and occlusion. Every method maps a frozen network, a `[1, D, H, W]` volume
//! and a target logit to a signed `[D, H, W]` map.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ClassLabel, VolumeSample};
use crate::error::{Error, Result};
use crate::nn::{layers, Layer, LayerCache, Network, Region3, ReluRule};
use crate::tensor::{Element, Tensor};
use crate::train::RunResult;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "gxi")]
    GradientInput,
    #[serde(rename = "gbp")]
    GuidedBackprop,
    #[serde(rename = "lrp")]
    Lrp,
    #[serde(rename = "occ")]
    Occlusion,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::GradientInput,
        Method::GuidedBackprop,
        Method::Lrp,
        Method::Occlusion,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Method::GradientInput => "gxi",
            Method::GuidedBackprop => "gbp",
            Method::Lrp => "lrp",
            Method::Occlusion => "occ",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::GradientInput => "gradient*input",
            Method::GuidedBackprop => "guided backpropagation",
            Method::Lrp => "LRP",
            Method::Occlusion => "occlusion",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.tag() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown attribution method {s:?}")))
    }
}

/// Correctly classified patients (TP) or controls (TN).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Tp,
    Tn,
}

impl Group {
    pub const ALL: [Group; 2] = [Group::Tp, Group::Tn];

    pub fn class(self) -> ClassLabel {
        match self {
            Group::Tp => ClassLabel::Patient,
            Group::Tn => ClassLabel::Control,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Group::Tp => "tp",
            Group::Tn => "tn",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Group {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tp" => Ok(Group::Tp),
            "tn" => Ok(Group::Tn),
            other => Err(Error::InvalidConfig(format!("unknown group {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OcclusionConfig {
    pub patch: usize,
    pub stride: usize,
    pub fill: f32,
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        OcclusionConfig {
            patch: 6,
            stride: 3,
            fill: 0.0,
        }
    }
}

impl OcclusionConfig {
    pub fn validate(&self, extent: [usize; 3]) -> Result<()> {
        if self.stride == 0 || self.stride > self.patch {
            return Err(Error::InvalidConfig(format!(
                "occlusion stride {} must lie in [1, patch size {}]",
                self.stride, self.patch
            )));
        }
        if extent.iter().any(|&e| self.patch > e) {
            return Err(Error::InvalidConfig(format!(
                "occlusion patch {} exceeds volume extent {extent:?}",
                self.patch
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BatchNormMode {
    /// Relevance passes batchnorm unchanged.
    IdentityPass,
    /// The eval-mode affine map is folded into the preceding convolution.
    MergedLinear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrpConfig {
    pub epsilon: f64,
    pub batchnorm: BatchNormMode,
}

impl Default for LrpConfig {
    fn default() -> Self {
        LrpConfig {
            epsilon: 1e-6,
            batchnorm: BatchNormMode::IdentityPass,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttributionConfig {
    pub occlusion: OcclusionConfig,
    pub lrp: LrpConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    /// `[D, H, W]`, signed.
    pub values: Tensor,
    pub method: Method,
    pub target: usize,
    pub subject_id: String,
    pub timepoint: usize,
    pub run: usize,
}

fn spatial(volume: &Tensor) -> Result<[usize; 3]> {
    match volume.shape() {
        [1, d, h, w] => Ok([*d, *h, *w]),
        other => Err(Error::ShapeMismatch {
            left: other.to_vec(),
            right: vec![1, 0, 0, 0],
        }),
    }
}

fn as_batch(volume: &Tensor) -> Result<Tensor> {
    let mut shape = vec![1];
    shape.extend_from_slice(volume.shape());
    volume.clone().reshape(&shape)
}

fn finish(values: Tensor, dims: [usize; 3], what: &str) -> Result<Tensor> {
    if !values.all_finite() {
        return Err(Error::NonFinite {
            context: format!("{what} heatmap"),
        });
    }
    values.reshape(&dims)
}

fn check_target(net: &Network, target: usize) -> Result<()> {
    if target >= net.classes() {
        return Err(Error::ClassOutOfRange {
            index: target,
            classes: net.classes(),
        });
    }
    Ok(())
}

/// Input gradient of the target logit times the input.
pub fn gradient_times_input(net: &Network, volume: &Tensor, target: usize) -> Result<Tensor> {
    let dims = spatial(volume)?;
    let (_, trace) = net.forward_eval(&as_batch(volume)?)?;
    let grad = net.backward_input(&trace, target, ReluRule::Standard)?;
    let product = grad
        .data()
        .iter()
        .zip(volume.data())
        .map(|(g, x)| g * x)
        .collect();
    finish(
        Tensor::new(grad.shape().to_vec(), product)?,
        dims,
        "gradient*input",
    )
}

/// Input gradient with ReLU gates that also require a positive incoming gradient.
pub fn guided_backprop(net: &Network, volume: &Tensor, target: usize) -> Result<Tensor> {
    let dims = spatial(volume)?;
    let (_, trace) = net.forward_eval(&as_batch(volume)?)?;
    let grad = net.backward_input(&trace, target, ReluRule::Guided)?;
    finish(grad, dims, "guided backpropagation")
}

fn stabilize(z: f64, eps: f64) -> f64 {
    // sign(0) counts as positive
    z + if z >= 0.0 { eps } else { -eps }
}

/// Epsilon-rule relevance propagation of the target logit down to the input.
pub fn lrp(net: &Network, volume: &Tensor, target: usize, cfg: &LrpConfig) -> Result<Tensor> {
    if !(cfg.epsilon > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "LRP epsilon {} must be positive",
            cfg.epsilon
        )));
    }
    check_target(net, target)?;
    let dims = spatial(volume)?;
    // f64 throughout: the ratio a*w/z amplifies rounding wherever z is small
    let net = net.cast::<f64>();
    let (logits, trace) = net.forward_eval(&as_batch(volume)?.cast::<f64>())?;
    let net_layers = net.layers();
    let mut relevance = Tensor::zeros(logits.shape());
    relevance.data_mut()[target] = logits.data()[target];

    // scale applied to each conv's pre-activations when batchnorm is merged
    let merged_scale = |i: usize| -> Option<Vec<f64>> {
        match (cfg.batchnorm, net_layers.get(i + 1)) {
            (BatchNormMode::MergedLinear, Some(Layer::BatchNorm(bn))) => Some(bn.eval_affine().0),
            _ => None,
        }
    };

    for (i, layer) in net_layers.iter().enumerate().rev() {
        let input = &trace.inputs[i];
        relevance = match (layer, &trace.caches[i]) {
            (Layer::Relu, _) | (Layer::Dropout { .. }, _) | (Layer::BatchNorm(_), _) => relevance,
            (Layer::MaxPool { .. }, LayerCache::Pool(win)) => {
                layers::maxpool_backward(input.shape(), win, &relevance)
            }
            (Layer::MaxPool { .. }, _) => {
                return Err(Error::StaleTrace {
                    expected: net_layers.len(),
                    actual: trace.len(),
                })
            }
            (Layer::Conv3d { weight, bias }, _) => {
                let out = trace.layer_output(i);
                let (_, co, _) = layers::dims5(out.shape());
                let per = out.len() / co;
                let scale = merged_scale(i);
                let mut s = relevance.clone();
                for o in 0..co {
                    let b = bias.data()[o];
                    let f = scale.as_ref().map_or(1.0, |sc| sc[o]);
                    for j in o * per..(o + 1) * per {
                        let z = (out.data()[j] - b) * f;
                        // the merged weight is w * f, so the ratio carries f too
                        s.data_mut()[j] = relevance.data()[j] * f / stabilize(z, cfg.epsilon);
                    }
                }
                let (back, _) = layers::conv_backward(input, weight, &s, true, false);
                multiply(input, back)
            }
            (Layer::Dense { weight, bias }, _) => {
                let out = trace.layer_output(i);
                let mut s = relevance.clone();
                let features = out.len();
                for j in 0..features {
                    let z = out.data()[j] - bias.data()[j];
                    s.data_mut()[j] = relevance.data()[j] / stabilize(z, cfg.epsilon);
                }
                let flat = input.clone().reshape(&[1, input.len()])?;
                let (back, _) = layers::dense_backward(&flat, weight, &s, false);
                multiply(input, back.reshape(input.shape())?)
            }
        };
        if !relevance.all_finite() {
            return Err(Error::NonFinite {
                context: format!("LRP relevance at layer {i} ({})", layer.kind()),
            });
        }
    }
    finish(relevance.cast::<f32>(), dims, "LRP")
}

fn multiply<T: Element>(a: &Tensor<T>, b: Tensor<T>) -> Tensor<T> {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| x * y)
        .collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

/// Patch start offsets along one axis: the stride grid plus a final patch
/// clamped to end at the border.
pub fn patch_starts(extent: usize, patch: usize, stride: usize) -> Vec<usize> {
    let mut starts: Vec<usize> = (0..=extent - patch).step_by(stride).collect();
    if *starts.last().unwrap() + patch < extent {
        starts.push(extent - patch);
    }
    starts
}

/// Every patch region in the fixed accumulation order (D, then H, then W).
pub fn patch_regions(dims: [usize; 3], cfg: &OcclusionConfig) -> Vec<Region3> {
    let s: Vec<Vec<usize>> = dims
        .iter()
        .map(|&e| patch_starts(e, cfg.patch, cfg.stride))
        .collect();
    let mut out = Vec::new();
    for &a in &s[0] {
        for &b in &s[1] {
            for &c in &s[2] {
                out.push(Region3 {
                    lo: [a, b, c],
                    hi: [a + cfg.patch, b + cfg.patch, c + cfg.patch],
                });
            }
        }
    }
    out
}

/// Mean drop of the target logit over every patch that covers a voxel.
pub fn occlusion(
    net: &Network,
    volume: &Tensor,
    target: usize,
    cfg: &OcclusionConfig,
) -> Result<Tensor> {
    check_target(net, target)?;
    let dims = spatial(volume)?;
    cfg.validate(dims)?;
    let (logits, trace) = net.forward_eval(&as_batch(volume)?)?;
    let base = logits.data()[target] as f64;
    let regions = patch_regions(dims, cfg);
    let channels = volume.shape()[0];
    let deltas: Vec<f64> = regions
        .par_iter()
        .map(|&r| {
            let occluded =
                net.forward_eval_patched(&trace, r, vec![cfg.fill; channels * r.volume()])?;
            Ok(base - occluded.data()[target] as f64)
        })
        .collect::<Result<_>>()?;
    accumulate_patches(dims, &regions, &deltas)
}

/// Coverage-normalized sum of per-patch deltas.
pub fn accumulate_patches(dims: [usize; 3], regions: &[Region3], deltas: &[f64]) -> Result<Tensor> {
    let [_, h, w] = dims;
    let n = dims.iter().product();
    let mut sum = vec![0.0f64; n];
    let mut count = vec![0u32; n];
    for (r, &delta) in regions.iter().zip(deltas) {
        for d in r.lo[0]..r.hi[0] {
            for y in r.lo[1]..r.hi[1] {
                for x in r.lo[2]..r.hi[2] {
                    let idx = (d * h + y) * w + x;
                    sum[idx] += delta;
                    count[idx] += 1;
                }
            }
        }
    }
    let data = sum
        .iter()
        .zip(&count)
        .map(|(&s, &c)| if c == 0 { 0.0 } else { (s / c as f64) as f32 })
        .collect();
    finish(Tensor::new(dims.to_vec(), data)?, dims, "occlusion")
}

pub fn attribute(
    net: &Network,
    volume: &Tensor,
    target: usize,
    method: Method,
    cfg: &AttributionConfig,
) -> Result<Tensor> {
    match method {
        Method::GradientInput => gradient_times_input(net, volume, target),
        Method::GuidedBackprop => guided_backprop(net, volume, target),
        Method::Lrp => lrp(net, volume, target, &cfg.lrp),
        Method::Occlusion => occlusion(net, volume, target, &cfg.occlusion),
    }
}

/// Test samples of `group` that the run classified correctly, in test order.
pub fn group_members<'a>(
    run: &RunResult,
    test: &'a [VolumeSample],
    group: Group,
) -> Result<Vec<&'a VolumeSample>> {
    if run.predictions.len() != test.len() {
        return Err(Error::ShapeMismatch {
            left: vec![run.predictions.len()],
            right: vec![test.len()],
        });
    }
    let mut out = Vec::new();
    for (p, s) in run.predictions.iter().zip(test) {
        if p.subject_id != s.subject_id || p.timepoint != s.timepoint {
            return Err(Error::InvalidConfig(format!(
                "prediction for {}_t{} does not line up with test sample {}",
                p.subject_id,
                p.timepoint,
                s.key()
            )));
        }
        if p.label == group.class() && p.correct() {
            out.push(s);
        }
    }
    Ok(out)
}

/// Heatmaps of every correctly classified `group` sample for one run,
/// targeting the logit of the true class.
pub fn attribute_testset(
    run: &RunResult,
    test: &[VolumeSample],
    method: Method,
    group: Group,
    cfg: &AttributionConfig,
) -> Result<Vec<Heatmap>> {
    let net = run
        .network
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig(format!("run {} has no trained network", run.run)))?;
    let members = group_members(run, test, group)?;
    if members.is_empty() {
        log::warn!("run {}: no {} samples to attribute", run.run, group);
    }
    let target = group.class().index();
    members
        .into_iter()
        .map(|s| {
            Ok(Heatmap {
                values: attribute(net, &s.volume, target, method, cfg)?,
                method,
                target,
                subject_id: s.subject_id.clone(),
                timepoint: s.timepoint,
                run: run.run,
            })
        })
        .collect()
}
