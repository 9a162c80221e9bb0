//! Two-stage training: head only on a frozen backbone, then the whole net.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{multitask_loss, sigmoid, LossBreakdown};
use super::net::{AgeTransform, Architecture, ConvNet, Mode};
use super::optim::{Adam, AdamConfig};
use super::{NetError, Task, Tensor};
use crate::dataio::Sex;
use crate::raster::CompositeImage;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgeTarget {
    /// The age output is trained directly in years.
    #[default]
    Raw,
    /// The age output is trained in training-set standard deviations
    /// around the training mean; predictions are still reported in years.
    Standardized,
}

/// Training hyper-parameters. The JSON form is shared with external
/// trainers, so unknown keys are ignored and missing keys take defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub task: Task,
    pub lambda: f64,
    pub epochs_head: usize,
    pub epochs_finetune: usize,
    pub lr_head: f64,
    pub lr_finetune: f64,
    pub batch_size: usize,
    pub dropout_rate: f64,
    pub hidden: usize,
    pub widths: Vec<usize>,
    pub input_width: usize,
    pub input_height: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub age_target: AgeTarget,
    pub seed: u64,
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            task: Task::Sex,
            lambda: 20.0,
            epochs_head: 10,
            epochs_finetune: 10,
            lr_head: 1e-3,
            lr_finetune: 1e-4,
            batch_size: 32,
            dropout_rate: 0.25,
            hidden: 64,
            widths: vec![16, 32, 64, 128],
            input_width: 128,
            input_height: 160,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            age_target: AgeTarget::Raw,
            seed: 42,
            deterministic: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |m: String| Err(NetError::InvalidConfig(m));
        if !(self.lambda >= 0.0) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate must be in [0, 1), got {}", self.dropout_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.lr_head > 0.0 && self.lr_finetune > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if self.input_width == 0 || self.input_height == 0 {
            return bad("input size must be positive".into());
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { beta1: self.beta1, beta2: self.beta2, eps: self.adam_eps }
    }

    pub fn load(path: impl AsRef<Path>) -> crate::Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| crate::Error::io(path.display().to_string(), e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Images as network input (`N x 3 x H x W`, ink density in `[0, 1]`) with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet<T> {
    pub ids: Vec<String>,
    pub images: Tensor<T>,
    /// 1 for female, 0 for male.
    pub sex: Vec<T>,
    /// Years.
    pub age: Vec<T>,
}

impl<T: Scalar> ImageSet<T> {
    /// Composites must share one canvas. Inputs are ink density `1 - v`, so
    /// background is 0 and matches the zero padding of the convolutions.
    pub fn from_composites(items: &[(&CompositeImage, Sex, f64)]) -> Result<Self, NetError> {
        let (w, h) = items.first().map_or((0, 0), |(c, _, _)| (c.width, c.height));
        let mut data = Vec::with_capacity(items.len() * 3 * w * h);
        let (mut ids, mut sex, mut age) = (Vec::new(), Vec::new(), Vec::new());
        for (c, s, a) in items {
            if (c.width, c.height) != (w, h) {
                return Err(NetError::ShapeMismatch { expected: vec![3, h, w], got: vec![3, c.height, c.width] });
            }
            for ch in &c.channels {
                data.extend(ch.iter().map(|&v| T::lit(1.0 - v)));
            }
            ids.push(c.id.clone());
            sex.push(T::lit(s.target()));
            age.push(T::lit(*a));
        }
        Ok(Self { ids, images: Tensor::new(vec![items.len(), 3, h, w], data)?, sex, age })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            ids: idx.iter().map(|&i| self.ids[i].clone()).collect(),
            images: self.images.select(idx),
            sex: idx.iter().map(|&i| self.sex[i]).collect(),
            age: idx.iter().map(|&i| self.age[i]).collect(),
        }
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Network for `cfg`, with the age output starting at the training median.
pub fn build_network<T: Scalar>(cfg: &TrainConfig, train: &ImageSet<T>) -> Result<ConvNet<T>, NetError> {
    let mut ages: Vec<f64> = train.age.iter().map(|a| a.to_f64_lossy()).collect();
    let age = match cfg.age_target {
        AgeTarget::Raw => AgeTransform::default(),
        AgeTarget::Standardized => {
            let n = ages.len().max(1) as f64;
            let mean = ages.iter().sum::<f64>() / n;
            let var = ages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
            AgeTransform { shift: mean, scale: var.sqrt().max(1e-6) }
        }
    };
    let arch = Architecture {
        in_channels: 3,
        widths: cfg.widths.clone(),
        hidden: cfg.hidden,
        dropout: cfg.dropout_rate,
        task: cfg.task,
        age,
    };
    let mut net = ConvNet::new(arch, cfg.seed)?;
    if cfg.age_target == AgeTarget::Raw && !ages.is_empty() {
        net.set_age_bias(median(&mut ages));
    }
    Ok(net)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub p_female: Option<f64>,
    pub age: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub n: usize,
    pub loss: LossBreakdown,
    pub accuracy: Option<f64>,
    pub mae: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub stage: u8,
    pub split: String,
    pub metrics: SplitMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    /// Epoch whose weights were kept; 0 when nothing was trained.
    pub best_epoch: usize,
    pub best_loss: Option<f64>,
}

/// Running sums for metrics over batches.
#[derive(Default)]
struct Tally {
    n: usize,
    sum_c: f64,
    sum_r: f64,
    correct: usize,
    abs_err: f64,
}

impl Tally {
    fn add<T: Scalar>(&mut self, out: &Tensor<T>, sex: &[T], age: &[T], task: Task, lambda: f64) {
        let l = multitask_loss(out, sex, age, task, lambda);
        let n = out.batch();
        self.n += n;
        self.sum_c += l.loss.loss_c.unwrap_or(0.0) * n as f64;
        self.sum_r += l.loss.loss_r.unwrap_or(0.0) * n as f64;
        let o = task.outputs();
        for s in 0..n {
            if let Some(ci) = task.sex_index() {
                let female = sigmoid(out.data()[s * o + ci].to_f64_lossy()) >= 0.5;
                if female == (sex[s].to_f64_lossy() >= 0.5) {
                    self.correct += 1;
                }
            }
            if let Some(ai) = task.age_index() {
                self.abs_err += (out.data()[s * o + ai] - age[s]).abs().to_f64_lossy();
            }
        }
    }

    fn finish(&self, task: Task, lambda: f64) -> SplitMetrics {
        let n = self.n.max(1) as f64;
        let loss_c = task.has_sex().then_some(self.sum_c / n);
        let loss_r = task.has_age().then_some(self.sum_r / n);
        let combined = match task {
            Task::Both => loss_r.unwrap_or(0.0) + lambda * loss_c.unwrap_or(0.0),
            Task::Sex => loss_c.unwrap_or(0.0),
            Task::Age => loss_r.unwrap_or(0.0),
        };
        SplitMetrics {
            n: self.n,
            loss: LossBreakdown { loss_r, loss_c, combined },
            accuracy: task.has_sex().then_some(self.correct as f64 / n),
            mae: task.has_age().then_some(self.abs_err / n),
        }
    }
}

/// Index batches; a trailing batch of one sample is merged into the
/// previous one so batch statistics stay defined.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let start = (out.len() - 1) * size;
        *out.last_mut().expect("non-empty") = &order[start..];
    }
    out
}

fn check_finite<T: Scalar>(net: &ConvNet<T>, epoch: usize) -> Result<(), NetError> {
    if net.params().iter().all(|p| p.value.iter().all(|v| v.is_finite())) {
        Ok(())
    } else {
        Err(NetError::NonFinite { what: "parameters", epoch })
    }
}

fn features_in_chunks<T: Scalar>(net: &mut ConvNet<T>, images: &Tensor<T>, chunk: usize) -> Result<Tensor<T>, NetError> {
    let n = images.batch();
    let mut data = Vec::new();
    let mut c = net.architecture().feature_width();
    for start in (0..n).step_by(chunk.max(1)) {
        let idx: Vec<usize> = (start..(start + chunk).min(n)).collect();
        let f = net.backbone_forward(&images.select(&idx), Mode::Eval)?;
        c = f.dims2()?.1;
        data.extend_from_slice(f.data());
    }
    Tensor::new(vec![n, c], data)
}

fn outputs_in_chunks<T: Scalar>(net: &mut ConvNet<T>, images: &Tensor<T>, chunk: usize) -> Result<Tensor<T>, NetError> {
    let n = images.batch();
    let o = net.task().outputs();
    let mut data = Vec::with_capacity(n * o);
    for start in (0..n).step_by(chunk.max(1)) {
        let idx: Vec<usize> = (start..(start + chunk).min(n)).collect();
        data.extend_from_slice(net.forward(&images.select(&idx), Mode::Eval)?.data());
    }
    Tensor::new(vec![n, o], data)
}

/// Eval-mode metrics and per-item predictions.
pub fn evaluate<T: Scalar>(
    net: &mut ConvNet<T>,
    set: &ImageSet<T>,
    lambda: f64,
    chunk: usize,
) -> Result<(SplitMetrics, Vec<Prediction>), NetError> {
    if set.is_empty() {
        return Ok((SplitMetrics::default(), Vec::new()));
    }
    let task = net.task();
    let out = outputs_in_chunks(net, &set.images, chunk)?;
    let mut t = Tally::default();
    t.add(&out, &set.sex, &set.age, task, lambda);
    Ok((t.finish(task, lambda), to_predictions(&out, &set.ids, task)))
}

fn to_predictions<T: Scalar>(out: &Tensor<T>, ids: &[String], task: Task) -> Vec<Prediction> {
    let o = task.outputs();
    ids.iter()
        .enumerate()
        .map(|(s, id)| Prediction {
            id: id.clone(),
            p_female: task.sex_index().map(|ci| sigmoid(out.data()[s * o + ci].to_f64_lossy())),
            age: task.age_index().map(|ai| out.data()[s * o + ai].to_f64_lossy()),
        })
        .collect()
}

pub fn predict<T: Scalar>(net: &mut ConvNet<T>, images: &Tensor<T>, ids: &[String], chunk: usize) -> Result<Vec<Prediction>, NetError> {
    let out = outputs_in_chunks(net, images, chunk)?;
    Ok(to_predictions(&out, ids, net.task()))
}

struct Best<T> {
    loss: f64,
    epoch: usize,
    snapshot: Vec<Vec<T>>,
}

impl<T: Scalar> Best<T> {
    fn offer(best: &mut Option<Self>, loss: f64, epoch: usize, net: &ConvNet<T>) {
        if best.as_ref().is_none_or(|b| loss < b.loss) {
            *best = Some(Best { loss, epoch, snapshot: net.snapshot() });
        }
    }
}

/// Stage 1 trains the head for `epochs_head` epochs on features from the
/// frozen backbone (eval mode, so its running statistics stay untouched).
/// Stage 2 fine-tunes everything for `epochs_finetune` epochs with a fresh
/// optimiser. The weights with the lowest validation loss (training loss
/// without a validation set) are restored at the end.
pub fn train<T: Scalar>(
    net: &mut ConvNet<T>,
    train_set: &ImageSet<T>,
    val_set: Option<&ImageSet<T>>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, NetError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(NetError::EmptyTrainSet);
    }
    if cfg.task != net.task() {
        return Err(NetError::InvalidConfig(format!("config task {} but network task {}", cfg.task, net.task())));
    }
    let task = cfg.task;
    let val_set = val_set.filter(|v| !v.is_empty());
    let mut history = Vec::new();
    if cfg.epochs_head + cfg.epochs_finetune == 0 {
        return Ok(TrainOutcome { history, best_epoch: 0, best_loss: None });
    }
    net.set_dropout(cfg.dropout_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let chunk = cfg.batch_size.max(16);
    let mut best: Option<Best<T>> = None;
    let mut epoch = 0;

    if cfg.epochs_head > 0 {
        let feats = features_in_chunks(net, &train_set.images, chunk)?;
        let val_feats = match val_set {
            Some(v) => Some(features_in_chunks(net, &v.images, chunk)?),
            None => None,
        };
        let mut opt = Adam::new(cfg.lr_head, cfg.adam());
        for _ in 0..cfg.epochs_head {
            epoch += 1;
            order.shuffle(&mut rng);
            let mut tally = Tally::default();
            for b in batches(&order, cfg.batch_size) {
                let out = net.head_forward(&feats.select(b), Mode::Train)?;
                let sex: Vec<T> = b.iter().map(|&i| train_set.sex[i]).collect();
                let age: Vec<T> = b.iter().map(|&i| train_set.age[i]).collect();
                let l = multitask_loss(&out, &sex, &age, task, cfg.lambda);
                if !l.loss.combined.is_finite() || !out.all_finite() {
                    return Err(NetError::NonFinite { what: "loss", epoch });
                }
                tally.add(&out, &sex, &age, task, cfg.lambda);
                net.zero_grad();
                net.head_backward(&l.grad);
                opt.step(&mut net.head_params_mut());
                check_finite(net, epoch)?;
            }
            let tm = tally.finish(task, cfg.lambda);
            history.push(EpochRecord { epoch, stage: 1, split: "train".into(), metrics: tm });
            let score = match (&val_feats, val_set) {
                (Some(vf), Some(v)) => {
                    let out = net.head_forward(vf, Mode::Eval)?;
                    let mut t = Tally::default();
                    t.add(&out, &v.sex, &v.age, task, cfg.lambda);
                    let vm = t.finish(task, cfg.lambda);
                    history.push(EpochRecord { epoch, stage: 1, split: "val".into(), metrics: vm });
                    vm.loss.combined
                }
                _ => tm.loss.combined,
            };
            log::info!("epoch {epoch} (head) loss {:.4} select {:.4}", tm.loss.combined, score);
            Best::offer(&mut best, score, epoch, net);
        }
    }

    if cfg.epochs_finetune > 0 {
        let mut opt = Adam::new(cfg.lr_finetune, cfg.adam());
        for _ in 0..cfg.epochs_finetune {
            epoch += 1;
            order.shuffle(&mut rng);
            let mut tally = Tally::default();
            for b in batches(&order, cfg.batch_size) {
                let x = train_set.images.select(b);
                let out = net.forward(&x, Mode::Train)?;
                let sex: Vec<T> = b.iter().map(|&i| train_set.sex[i]).collect();
                let age: Vec<T> = b.iter().map(|&i| train_set.age[i]).collect();
                let l = multitask_loss(&out, &sex, &age, task, cfg.lambda);
                if !l.loss.combined.is_finite() || !out.all_finite() {
                    return Err(NetError::NonFinite { what: "loss", epoch });
                }
                tally.add(&out, &sex, &age, task, cfg.lambda);
                net.zero_grad();
                net.backward(&l.grad);
                opt.step(&mut net.params_mut());
                check_finite(net, epoch)?;
            }
            let tm = tally.finish(task, cfg.lambda);
            history.push(EpochRecord { epoch, stage: 2, split: "train".into(), metrics: tm });
            let score = match val_set {
                Some(v) => {
                    let (vm, _) = evaluate(net, v, cfg.lambda, chunk)?;
                    history.push(EpochRecord { epoch, stage: 2, split: "val".into(), metrics: vm });
                    vm.loss.combined
                }
                None => tm.loss.combined,
            };
            log::info!("epoch {epoch} (finetune) loss {:.4} select {:.4}", tm.loss.combined, score);
            Best::offer(&mut best, score, epoch, net);
        }
    }

    let best = best.expect("at least one epoch ran");
    net.restore(&best.snapshot);
    net.clear_caches();
    Ok(TrainOutcome { history, best_epoch: best.epoch, best_loss: Some(best.loss) })
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// `epoch,split,loss_r,loss_c,combined,accuracy,mae`; absent metrics are empty.
pub fn write_history_csv(history: &[EpochRecord], path: impl AsRef<Path>) -> crate::Result<()> {
    let path = path.as_ref();
    let mut s = String::from("epoch,split,loss_r,loss_c,combined,accuracy,mae\n");
    for r in history {
        let m = &r.metrics;
        let _ = writeln!(
            s,
            "{},{},{},{},{:.6},{},{}",
            r.epoch,
            r.split,
            cell(m.loss.loss_r),
            cell(m.loss.loss_c),
            m.loss.combined,
            cell(m.accuracy),
            cell(m.mae)
        );
    }
    fs::write(path, s).map_err(|e| crate::Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_merge_trailing_singleton() {
        let order: Vec<usize> = (0..9).collect();
        let b = batches(&order, 4);
        assert_eq!(b.iter().map(|x| x.len()).collect::<Vec<_>>(), vec![4, 5]);
        let b = batches(&order, 3);
        assert_eq!(b.len(), 3);
        assert_eq!(batches(&order[..1], 4).len(), 1);
    }

    #[test]
    fn config_defaults_and_partial_json() {
        let cfg: TrainConfig = serde_json::from_str(r#"{"task":"both","lambda":5,"backbone":"resnet101"}"#).unwrap();
        assert_eq!(cfg.task, Task::Both);
        assert_eq!(cfg.lambda, 5.0);
        assert_eq!(cfg.epochs_head, 10);
        assert_eq!(cfg.batch_size, 32);
        let bad = TrainConfig { dropout_rate: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
