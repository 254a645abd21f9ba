use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{self, BatchNorm, BatchStats, Layer};
use super::spec::NetworkSpec;
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// How gradients cross ReLU layers on the way back to the input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReluRule {
    Standard,
    /// Gate by positive forward input *and* positive incoming gradient.
    Guided,
}

/// Per-layer data cached by a forward pass.
#[derive(Clone, Debug)]
pub enum LayerCache<T: Element = f32> {
    None,
    /// Winning position of every pooled output (see `layers::decode_pos`).
    Pool(Vec<u32>),
    /// Multiplier per element: 0 or 1/(1-p).
    Dropout(Vec<T>),
    BatchNorm(BatchStats),
}

#[derive(Clone, Debug)]
pub struct ForwardTrace<T: Element = f32> {
    pub mode: Mode,
    /// Input of every layer; `inputs[0]` is the network input.
    pub inputs: Vec<Tensor<T>>,
    pub caches: Vec<LayerCache<T>>,
    pub output: Tensor<T>,
}

impl<T: Element> ForwardTrace<T> {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Output of layer `i`.
    pub fn layer_output(&self, i: usize) -> &Tensor<T> {
        self.inputs.get(i + 1).unwrap_or(&self.output)
    }
}

/// A sequential network; the CNN built from a [`NetworkSpec`] is one instance.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T: Element = f32> {
    input_shape: Vec<usize>,
    layers: Vec<Layer<T>>,
    spec: Option<NetworkSpec>,
}

fn uniform_tensor<T: Element>(shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let dist = Uniform::new_inclusive(-bound, bound);
    Tensor::from_fn(shape, |_| T::from_f64_lossy(dist.sample(rng)))
}

impl<T: Element> Network<T> {
    /// Assemble a network from explicit layers, checking the shape chain.
    pub fn from_layers(input_shape: Vec<usize>, layers: Vec<Layer<T>>) -> Result<Self> {
        let net = Network {
            input_shape,
            layers,
            spec: None,
        };
        net.layer_shapes()?;
        Ok(net)
    }

    /// Conv-BatchNorm-ReLU-MaxPool blocks, then dropout-dense-ReLU-dropout-dense.
    ///
    /// Weights are drawn from a fan-in scaled uniform distribution
    /// `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, biases start at zero and
    /// batchnorm at gamma=1, beta=0.
    pub fn build(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = spec.kernel;
        let mut layers = Vec::new();
        let mut channels = spec.in_channels;
        for block in &spec.blocks {
            let fan_in = channels * k * k * k;
            let bound = (6.0 / fan_in as f64).sqrt();
            layers.push(Layer::Conv3d {
                weight: uniform_tensor(&[block.filters, channels, k, k, k], bound, &mut rng),
                bias: Tensor::zeros(&[block.filters]),
            });
            layers.push(Layer::BatchNorm(BatchNorm::new(
                block.filters,
                spec.bn_eps,
                spec.bn_momentum,
            )));
            layers.push(Layer::Relu);
            if block.pool > 1 {
                layers.push(Layer::MaxPool { size: block.pool });
            }
            channels = block.filters;
        }
        let features = spec.feature_len();
        let hidden_bound = (6.0 / features as f64).sqrt();
        let out_bound = (6.0 / spec.dense_hidden as f64).sqrt();
        layers.push(Layer::Dropout { rate: spec.dropout });
        layers.push(Layer::Dense {
            weight: uniform_tensor(&[spec.dense_hidden, features], hidden_bound, &mut rng),
            bias: Tensor::zeros(&[spec.dense_hidden]),
        });
        layers.push(Layer::Relu);
        layers.push(Layer::Dropout { rate: spec.dropout });
        layers.push(Layer::Dense {
            weight: uniform_tensor(&[spec.classes, spec.dense_hidden], out_bound, &mut rng),
            bias: Tensor::zeros(&[spec.classes]),
        });
        let mut net = Network::from_layers(
            vec![
                spec.in_channels,
                spec.input_shape[0],
                spec.input_shape[1],
                spec.input_shape[2],
            ],
            layers,
        )?;
        net.spec = Some(spec.clone());
        Ok(net)
    }

    pub fn spec(&self) -> Option<&NetworkSpec> {
        self.spec.as_ref()
    }

    pub(crate) fn set_spec(&mut self, spec: Option<NetworkSpec>) {
        self.spec = spec;
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn classes(&self) -> usize {
        self.layer_shapes()
            .ok()
            .and_then(|s| s.last().map(|v| v.iter().product()))
            .unwrap_or(0)
    }

    /// Per-sample output shape of every layer.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut cur = self.input_shape.clone();
        self.layers
            .iter()
            .map(|l| {
                cur = l.output_shape(&cur)?;
                Ok(cur.clone())
            })
            .collect()
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params_mut())
            .collect()
    }

    /// `layer<i>.<kind>.<weight|bias|gamma|beta>` for every parameter.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let fields: &[&str] = match layer {
                Layer::Conv3d { .. } | Layer::Dense { .. } => &["weight", "bias"],
                Layer::BatchNorm(_) => &["gamma", "beta"],
                _ => &[],
            };
            for f in fields {
                names.push(format!("layer{i}.{}.{f}", layer.kind()));
            }
        }
        names
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Convert every tensor to another element type.
    pub fn cast<U: Element>(&self) -> Network<U> {
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Conv3d { weight, bias } => Layer::Conv3d {
                    weight: weight.cast(),
                    bias: bias.cast(),
                },
                Layer::Dense { weight, bias } => Layer::Dense {
                    weight: weight.cast(),
                    bias: bias.cast(),
                },
                Layer::BatchNorm(bn) => Layer::BatchNorm(BatchNorm {
                    gamma: bn.gamma.cast(),
                    beta: bn.beta.cast(),
                    running_mean: bn.running_mean.cast(),
                    running_var: bn.running_var.cast(),
                    eps: bn.eps,
                    momentum: bn.momentum,
                }),
                Layer::Relu => Layer::Relu,
                Layer::MaxPool { size } => Layer::MaxPool { size: *size },
                Layer::Dropout { rate } => Layer::Dropout { rate: *rate },
            })
            .collect();
        Network {
            input_shape: self.input_shape.clone(),
            layers,
            spec: self.spec.clone(),
        }
    }

    fn check_batch(&self, batch: &Tensor<T>) -> Result<()> {
        if batch.rank() != self.input_shape.len() + 1 || batch.shape()[1..] != self.input_shape[..]
        {
            let mut expected = vec![batch.shape().first().copied().unwrap_or(1)];
            expected.extend(&self.input_shape);
            return Err(Error::ShapeMismatch {
                left: batch.shape().to_vec(),
                right: expected,
            });
        }
        Ok(())
    }

    /// Forward a batch `[N, ...input_shape]`, caching what backward passes need.
    ///
    /// Train mode normalizes with batch statistics and samples dropout masks
    /// from `rng`; running statistics are *not* updated here (see
    /// [`Network::update_running_stats`]). Eval mode never touches `rng`.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        batch: &Tensor<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Tensor<T>, ForwardTrace<T>)> {
        self.check_batch(batch)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = batch.clone();
        for layer in &self.layers {
            let (next, cache) = self.layer_forward(layer, &cur, mode, rng);
            inputs.push(cur);
            caches.push(cache);
            cur = next;
        }
        let trace = ForwardTrace {
            mode,
            inputs,
            caches,
            output: cur.clone(),
        };
        Ok((cur, trace))
    }

    /// Eval-mode logits without keeping a trace.
    pub fn predict(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_batch(batch)?;
        let mut cur = batch.clone();
        let mut no_rng = rand::rngs::mock::StepRng::new(0, 0);
        for layer in &self.layers {
            cur = self.layer_forward(layer, &cur, Mode::Eval, &mut no_rng).0;
        }
        Ok(cur)
    }

    pub fn forward_eval(&self, batch: &Tensor<T>) -> Result<(Tensor<T>, ForwardTrace<T>)> {
        let mut no_rng = rand::rngs::mock::StepRng::new(0, 0);
        self.forward(batch, Mode::Eval, &mut no_rng)
    }

    pub(crate) fn layer_forward<R: Rng + ?Sized>(
        &self,
        layer: &Layer<T>,
        input: &Tensor<T>,
        mode: Mode,
        rng: &mut R,
    ) -> (Tensor<T>, LayerCache<T>) {
        match layer {
            Layer::Conv3d { weight, bias } => {
                (layers::conv_forward(input, weight, bias), LayerCache::None)
            }
            Layer::BatchNorm(bn) => match mode {
                Mode::Train => {
                    let (out, stats) = layers::batchnorm_train(bn, input);
                    (out, LayerCache::BatchNorm(stats))
                }
                Mode::Eval => (layers::batchnorm_eval(bn, input), LayerCache::None),
            },
            Layer::Relu => (input.map(|x| x.max(T::zero())), LayerCache::None),
            Layer::MaxPool { size } => {
                let (out, win) = layers::maxpool_forward(input, *size);
                (out, LayerCache::Pool(win))
            }
            Layer::Dropout { rate } => match mode {
                Mode::Train if *rate > 0.0 => {
                    let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
                    let mask: Vec<T> = (0..input.len())
                        .map(|_| {
                            if rng.gen::<f64>() < *rate {
                                T::zero()
                            } else {
                                keep
                            }
                        })
                        .collect();
                    let mut out = input.clone();
                    for (x, &m) in out.data_mut().iter_mut().zip(&mask) {
                        *x *= m;
                    }
                    (out, LayerCache::Dropout(mask))
                }
                _ => (input.clone(), LayerCache::None),
            },
            Layer::Dense { weight, bias } => {
                let n = input.shape()[0];
                let flat = input
                    .clone()
                    .reshape(&[n, input.len() / n])
                    .expect("flatten");
                (layers::dense_forward(&flat, weight, bias), LayerCache::None)
            }
        }
    }

    /// Fold the batch statistics of a train-mode trace into the running estimates.
    pub fn update_running_stats(&mut self, trace: &ForwardTrace<T>) -> Result<()> {
        self.check_trace(trace)?;
        for (layer, cache) in self.layers.iter_mut().zip(&trace.caches) {
            if let (Layer::BatchNorm(bn), LayerCache::BatchNorm(stats)) = (layer, cache) {
                let m = bn.momentum;
                for c in 0..bn.channels() {
                    let rm = &mut bn.running_mean.data_mut()[c];
                    *rm = T::from_f64_lossy((1.0 - m) * rm.as_f64() + m * stats.mean[c]);
                    let rv = &mut bn.running_var.data_mut()[c];
                    *rv = T::from_f64_lossy((1.0 - m) * rv.as_f64() + m * stats.var_unbiased[c]);
                }
            }
        }
        Ok(())
    }

    fn check_trace(&self, trace: &ForwardTrace<T>) -> Result<()> {
        if trace.inputs.len() != self.layers.len() || trace.caches.len() != self.layers.len() {
            return Err(Error::StaleTrace {
                expected: self.layers.len(),
                actual: trace.inputs.len(),
            });
        }
        Ok(())
    }

    /// Reverse pass. Returns the input gradient and, when requested, one
    /// gradient per parameter in [`Network::params`] order.
    pub fn backward(
        &self,
        trace: &ForwardTrace<T>,
        grad_output: &Tensor<T>,
        rule: ReluRule,
        need_params: bool,
    ) -> Result<(Tensor<T>, Option<Vec<Tensor<T>>>)> {
        self.backward_impl(trace, grad_output, rule, need_params, true)
    }

    fn backward_impl(
        &self,
        trace: &ForwardTrace<T>,
        grad_output: &Tensor<T>,
        rule: ReluRule,
        need_params: bool,
        need_input: bool,
    ) -> Result<(Tensor<T>, Option<Vec<Tensor<T>>>)> {
        self.check_trace(trace)?;
        if grad_output.shape() != trace.output.shape() {
            return Err(Error::ShapeMismatch {
                left: grad_output.shape().to_vec(),
                right: trace.output.shape().to_vec(),
            });
        }
        let mut per_layer: Vec<Vec<Tensor<T>>> = vec![Vec::new(); self.layers.len()];
        let mut grad = grad_output.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &trace.inputs[i];
            grad = match (layer, &trace.caches[i]) {
                (Layer::Conv3d { weight, .. }, _) => {
                    let (gi, gp) = layers::conv_backward(
                        input,
                        weight,
                        &grad,
                        need_input || i > 0,
                        need_params,
                    );
                    if let Some((gw, gb)) = gp {
                        per_layer[i] = vec![gw, gb];
                    }
                    gi
                }
                (Layer::BatchNorm(bn), cache) => {
                    let stats = match cache {
                        LayerCache::BatchNorm(s) => Some(s),
                        _ => None,
                    };
                    let (gi, gg, gb) = layers::batchnorm_backward(bn, input, stats, &grad);
                    if need_params {
                        per_layer[i] = vec![gg, gb];
                    }
                    gi
                }
                (Layer::Relu, _) => {
                    let mut g = grad;
                    for (gv, &x) in g.data_mut().iter_mut().zip(input.data()) {
                        let open = x > T::zero() && (rule == ReluRule::Standard || *gv > T::zero());
                        if !open {
                            *gv = T::zero();
                        }
                    }
                    g
                }
                (Layer::MaxPool { .. }, LayerCache::Pool(win)) => {
                    layers::maxpool_backward(input.shape(), win, &grad)
                }
                (Layer::Dropout { .. }, LayerCache::Dropout(mask)) => {
                    let mut g = grad;
                    for (gv, &m) in g.data_mut().iter_mut().zip(mask) {
                        *gv *= m;
                    }
                    g
                }
                (Layer::Dropout { .. }, _) => grad,
                (Layer::Dense { weight, .. }, _) => {
                    let n = input.shape()[0];
                    let flat = input.clone().reshape(&[n, input.len() / n])?;
                    let (gi, gp) = layers::dense_backward(&flat, weight, &grad, need_params);
                    if let Some((gw, gb)) = gp {
                        per_layer[i] = vec![gw, gb];
                    }
                    gi.reshape(input.shape())?
                }
                (Layer::MaxPool { .. }, _) => {
                    return Err(Error::StaleTrace {
                        expected: self.layers.len(),
                        actual: trace.inputs.len(),
                    })
                }
            };
        }
        let params = need_params.then(|| per_layer.into_iter().flatten().collect());
        Ok((grad, params))
    }

    /// Gradient of the loss w.r.t. every parameter, given dLoss/dLogits.
    pub fn backward_params(
        &self,
        trace: &ForwardTrace<T>,
        loss_grad: &Tensor<T>,
    ) -> Result<Vec<Tensor<T>>> {
        // the input gradient of the first layer is never used here
        let (_, params) = self.backward_impl(trace, loss_grad, ReluRule::Standard, true, false)?;
        Ok(params.unwrap_or_default())
    }

    /// Derivative of logit `class` (for every sample) w.r.t. the input.
    pub fn backward_input(
        &self,
        trace: &ForwardTrace<T>,
        class: usize,
        rule: ReluRule,
    ) -> Result<Tensor<T>> {
        let shape = trace.output.shape();
        let classes = shape[1..].iter().product::<usize>();
        if class >= classes {
            return Err(Error::ClassOutOfRange {
                index: class,
                classes,
            });
        }
        let mut seed = Tensor::zeros(shape);
        for s in 0..shape[0] {
            seed.data_mut()[s * classes + class] = T::one();
        }
        Ok(self.backward(trace, &seed, rule, false)?.0)
    }
}
