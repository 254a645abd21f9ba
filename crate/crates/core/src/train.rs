//! Adam optimisation, augmentation, early stopping and repeated training.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ClassLabel, DatasetSplit, VolumeSample};
use crate::error::{Error, Result};
use crate::nn::{predicted_classes, softmax_cross_entropy, Mode, Network, NetworkSpec};
use crate::seed::{derive_seed, rng_for, Stream};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub repetitions: usize,
    pub base_seed: u64,
    pub sagittal_flip_p: f64,
    /// Inclusive coronal shift range in voxels.
    pub coronal_shift_range: [i64; 2],
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            patience: 8,
            max_epochs: 80,
            batch_size: 4,
            repetitions: 10,
            base_seed: 0,
            sagittal_flip_p: 0.5,
            coronal_shift_range: [-2, 2],
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.lr > 0.0) {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        if self.weight_decay < 0.0 {
            return bad("weight decay must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("adam betas must lie in [0, 1)".into());
        }
        if self.patience == 0 || self.repetitions == 0 || self.max_epochs == 0 {
            return bad("patience, repetitions and max_epochs must be at least 1".into());
        }
        if self.batch_size < 2 {
            return bad(format!(
                "batch size {} must be at least 2 for batchnorm",
                self.batch_size
            ));
        }
        if !(0.0..=1.0).contains(&self.sagittal_flip_p) {
            return bad("flip probability outside [0, 1]".into());
        }
        let [lo, hi] = self.coronal_shift_range;
        if lo > hi || lo < -2 || hi > 2 {
            return bad(format!(
                "coronal shift range [{lo}, {hi}] must lie within [-2, 2]"
            ));
        }
        Ok(())
    }
}

/// First and second moment estimates for every parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Element = f32> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Element> AdamState<T> {
    pub fn new(params: &[&Tensor<T>]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamState {
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }
}

/// One Adam step with coupled L2 decay (`g + decay * theta`) and bias correction.
pub fn adam_step<T: Element>(
    params: &mut [&mut Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    cfg: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::ShapeMismatch {
            left: vec![params.len(), state.m.len()],
            right: vec![grads.len()],
        });
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || state.m[i].shape() != p.shape() {
            return Err(Error::ShapeMismatch {
                left: p.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
        if let Some(j) = g.data().iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                context: format!(
                    "gradient of parameter tensor {i} at element {j} (step {})",
                    state.t + 1
                ),
            });
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, theta) in p.data_mut().iter_mut().enumerate() {
            let th = theta.as_f64();
            let gj = g.data()[j].as_f64() + cfg.weight_decay * th;
            let mj = cfg.beta1 * m[j].as_f64() + (1.0 - cfg.beta1) * gj;
            let vj = cfg.beta2 * v[j].as_f64() + (1.0 - cfg.beta2) * gj * gj;
            m[j] = T::from_f64_lossy(mj);
            v[j] = T::from_f64_lossy(vj);
            let update = cfg.lr * (mj / c1) / ((vj / c2).sqrt() + cfg.adam_eps);
            *theta = T::from_f64_lossy(th - update);
        }
    }
    Ok(())
}

/// Concrete outcome of one augmentation draw.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AugmentDraw {
    pub flip: bool,
    pub shift: i64,
}

pub fn draw_augment<R: Rng + ?Sized>(rng: &mut R, cfg: &TrainConfig) -> AugmentDraw {
    let flip = rng.gen_bool(cfg.sagittal_flip_p);
    let [lo, hi] = cfg.coronal_shift_range;
    AugmentDraw {
        flip,
        shift: rng.gen_range(lo..=hi),
    }
}

/// Apply a fixed draw: optional sagittal flip, then a zero-filled coronal shift.
pub fn augment_with(sample: &VolumeSample, draw: AugmentDraw) -> Result<VolumeSample> {
    let mut volume = if draw.flip {
        sample.volume.flip(sample.axes.sagittal)?
    } else {
        sample.volume.clone()
    };
    if draw.shift != 0 {
        volume = volume.shift(sample.axes.coronal, draw.shift, 0.0)?;
    }
    Ok(VolumeSample {
        volume,
        ..sample.clone()
    })
}

pub fn augment<R: Rng + ?Sized>(
    sample: &VolumeSample,
    rng: &mut R,
    cfg: &TrainConfig,
) -> Result<VolumeSample> {
    augment_with(sample, draw_augment(rng, cfg))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Patience-based early stopping on a loss that should decrease.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: usize,
    since: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            since: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopDecision {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.since = 0;
            return StopDecision::Improved;
        }
        self.since += 1;
        if self.since >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_balanced_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub subject_id: String,
    pub timepoint: usize,
    pub label: ClassLabel,
    pub predicted: ClassLabel,
}

impl Prediction {
    pub fn correct(&self) -> bool {
        self.label == self.predicted
    }
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub run: usize,
    pub seed: u64,
    /// Best-validation network; `None` when the run failed.
    pub network: Option<Network>,
    pub epochs: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub predictions: Vec<Prediction>,
    pub balanced_accuracy: Option<f64>,
    pub failure: Option<String>,
}

impl RunResult {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }
}

/// Mean of per-class recalls.
pub fn balanced_accuracy(predictions: &[Prediction]) -> Result<f64> {
    let mut recalls = Vec::new();
    for class in ClassLabel::ALL {
        let members: Vec<&Prediction> = predictions.iter().filter(|p| p.label == class).collect();
        if members.is_empty() {
            return Err(Error::Empty(format!(
                "no {class} samples for balanced accuracy"
            )));
        }
        let hits = members.iter().filter(|p| p.correct()).count();
        recalls.push(hits as f64 / members.len() as f64);
    }
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    pub per_run: Vec<f64>,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub failed_runs: Vec<usize>,
}

impl AccuracySummary {
    pub fn from_runs(runs: &[RunResult]) -> Result<Self> {
        let per_run: Vec<f64> = runs.iter().filter_map(|r| r.balanced_accuracy).collect();
        if per_run.is_empty() {
            return Err(Error::Empty("no successful runs".into()));
        }
        Ok(AccuracySummary {
            mean: per_run.iter().sum::<f64>() / per_run.len() as f64,
            min: per_run.iter().copied().fold(f64::INFINITY, f64::min),
            max: per_run.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            failed_runs: runs.iter().filter(|r| r.failed()).map(|r| r.run).collect(),
            per_run,
        })
    }
}

/// Stack `[1, D, H, W]` volumes into a `[N, 1, D, H, W]` batch.
pub fn stack(volumes: &[&Tensor]) -> Result<Tensor> {
    let first = volumes
        .first()
        .ok_or_else(|| Error::Empty("batch".into()))?;
    let mut shape = vec![volumes.len()];
    shape.extend_from_slice(first.shape());
    let mut data = Vec::with_capacity(first.len() * volumes.len());
    for v in volumes {
        if v.shape() != first.shape() {
            return Err(Error::ShapeMismatch {
                left: first.shape().to_vec(),
                right: v.shape().to_vec(),
            });
        }
        data.extend_from_slice(v.data());
    }
    Tensor::new(shape, data)
}

/// Split shuffled indices into batches, folding a trailing singleton into
/// the previous batch so batchnorm always sees at least two samples.
pub fn batches(order: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(size).map(|c| c.to_vec()).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let tail = out.pop().unwrap();
        out.last_mut().unwrap().extend(tail);
    }
    out
}

/// Mean loss and predicted classes in eval mode.
pub fn evaluate(
    net: &Network,
    samples: &[VolumeSample],
    batch_size: usize,
) -> Result<(f64, Vec<usize>)> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluation set".into()));
    }
    let mut total = 0.0;
    let mut preds = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let vols: Vec<&Tensor> = chunk.iter().map(|s| &s.volume).collect();
        let logits = net.predict(&stack(&vols)?)?;
        let targets: Vec<usize> = chunk.iter().map(|s| s.label.index()).collect();
        let (loss, _) = softmax_cross_entropy(&logits, &targets)?;
        total += loss * chunk.len() as f64;
        preds.extend(predicted_classes(&logits));
    }
    Ok((total / samples.len() as f64, preds))
}

fn predictions_for(samples: &[VolumeSample], classes: &[usize]) -> Vec<Prediction> {
    samples
        .iter()
        .zip(classes)
        .map(|(s, &c)| Prediction {
            subject_id: s.subject_id.clone(),
            timepoint: s.timepoint,
            label: s.label,
            predicted: ClassLabel::from_index(c).unwrap_or(ClassLabel::Control),
        })
        .collect()
}

fn train_epoch(
    net: &mut Network,
    adam: &mut AdamState,
    train: &[VolumeSample],
    cfg: &TrainConfig,
    rngs: &mut (impl Rng, impl Rng, impl Rng),
) -> Result<f64> {
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut rngs.0);
    let mut total = 0.0;
    for batch in batches(&order, cfg.batch_size) {
        let samples: Vec<VolumeSample> = batch
            .iter()
            .map(|&i| {
                if cfg.augment {
                    augment(&train[i], &mut rngs.1, cfg)
                } else {
                    Ok(train[i].clone())
                }
            })
            .collect::<Result<_>>()?;
        let vols: Vec<&Tensor> = samples.iter().map(|s| &s.volume).collect();
        let targets: Vec<usize> = samples.iter().map(|s| s.label.index()).collect();
        let (logits, trace) = net.forward(&stack(&vols)?, Mode::Train, &mut rngs.2)?;
        let (loss, grad) = softmax_cross_entropy(&logits, &targets)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                context: "training loss".into(),
            });
        }
        let grads = net.backward_params(&trace, &grad)?;
        net.update_running_stats(&trace)?;
        adam_step(&mut net.params_mut(), &grads, adam, cfg)?;
        total += loss * batch.len() as f64;
    }
    Ok(total / train.len() as f64)
}

/// Train one network from `seed`, restore its best-validation weights and
/// evaluate the test set once.
pub fn train_once(
    split: &DatasetSplit,
    spec: &NetworkSpec,
    cfg: &TrainConfig,
    seed: u64,
    run: usize,
) -> Result<RunResult> {
    cfg.validate()?;
    for (name, set) in [
        ("train", &split.train),
        ("validation", &split.validation),
        ("test", &split.test),
    ] {
        if set.is_empty() {
            return Err(Error::Empty(format!("{name} split")));
        }
    }
    let mut net = Network::build(spec, derive_seed(seed, Stream::Init, 0))?;
    let mut adam = AdamState::new(&net.params());
    let mut rngs = (
        rng_for(seed, Stream::Shuffle, 0),
        rng_for(seed, Stream::Augment, 0),
        rng_for(seed, Stream::Dropout, 0),
    );
    let mut early = EarlyStopping::new(cfg.patience);
    let mut best = net.clone();
    let mut epochs = Vec::new();
    let mut failure = None;
    for epoch in 1..=cfg.max_epochs {
        let train_loss = match train_epoch(&mut net, &mut adam, &split.train, cfg, &mut rngs) {
            Ok(l) => l,
            Err(e @ Error::NonFinite { .. }) => {
                failure = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        };
        let (val_loss, val_pred) = evaluate(&net, &split.validation, cfg.batch_size)?;
        if !val_loss.is_finite() {
            failure = Some(
                Error::NonFinite {
                    context: format!("validation loss at epoch {epoch}"),
                }
                .to_string(),
            );
            break;
        }
        let val_ba = balanced_accuracy(&predictions_for(&split.validation, &val_pred)).ok();
        log::info!(
            "run {run} epoch {epoch}: train {train_loss:.4} val {val_loss:.4} val-bacc {}",
            val_ba.map_or("n/a".into(), |b| format!("{b:.3}"))
        );
        epochs.push(EpochMetrics {
            epoch,
            train_loss,
            val_loss,
            val_balanced_accuracy: val_ba,
        });
        match early.observe(epoch, val_loss) {
            StopDecision::Improved => best = net.clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }
    if let Some(msg) = failure {
        log::warn!("run {run} failed: {msg}");
        return Ok(RunResult {
            run,
            seed,
            network: None,
            epochs,
            best_epoch: early.best_epoch,
            best_val_loss: early.best,
            predictions: Vec::new(),
            balanced_accuracy: None,
            failure: Some(msg),
        });
    }
    let (_, test_pred) = evaluate(&best, &split.test, cfg.batch_size)?;
    let predictions = predictions_for(&split.test, &test_pred);
    let bacc = balanced_accuracy(&predictions)?;
    log::info!(
        "run {run}: best epoch {} test balanced accuracy {bacc:.4}",
        early.best_epoch
    );
    Ok(RunResult {
        run,
        seed,
        network: Some(best),
        epochs,
        best_epoch: early.best_epoch,
        best_val_loss: early.best,
        predictions,
        balanced_accuracy: Some(bacc),
        failure: None,
    })
}

/// Run `cfg.repetitions` independent trainings with seeds `base_seed + i`.
pub fn train_repeated(
    split: &DatasetSplit,
    spec: &NetworkSpec,
    cfg: &TrainConfig,
) -> Result<Vec<RunResult>> {
    cfg.validate()?;
    (0..cfg.repetitions)
        .map(|i| train_once(split, spec, cfg, cfg.base_seed.wrapping_add(i as u64), i))
        .collect()
}
