//! Losses, metrics, optimizer, training loop and robustness evaluation.

mod baseline;
pub mod loss;
mod optim;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use baseline::{Conv3, ConvBaseline, CONV_FORMAT};
pub use optim::{optimizer_step, AdamState, Schedule, ADAM_EPS, BETA1, BETA2};

use crate::error::{invalid, Result, SonicError};
use crate::exec::Execution;
use crate::gradients::{loss_and_gradients_with, LossSpec, Model, PassOptions};
use crate::grid::standardize_input;
use crate::rng::{stream, SeededRng};
use crate::tasks::{apply_combined, apply_perturbation, Perturbation, TaskKind, TaskSample, Target, SEVERITY_GRID};
use loss::{argmax_mask, readout_logits, DiceCounts, LossWeights, Readout, SegmentationLoss};

/// Which disjoint seed range a sample comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    /// Class-frequency estimation batch.
    Stats,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Stats => "stats",
        }
    }

    fn tag(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Val => 2,
            Split::Test => 3,
            Split::Stats => 4,
        }
    }
}

/// Seed of sample `index` in `split`. Splits never share a seed.
pub fn sample_seed(seed: u64, split: Split, index: u64) -> u64 {
    (split.tag() << 60) | ((seed & 0xFFFF_FFFF) << 24) | (index & 0xFF_FFFF)
}

/// How input channels are brought to zero mean and unit variance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Standardize {
    Off,
    /// Statistics of each image separately. This hands every pixel global
    /// information about the image, which a purely local model could exploit.
    PerImage,
    /// One fixed affine map per channel, fitted on the training split.
    Dataset,
}

/// Input preparation, applied identically at train and eval time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preprocess {
    pub standardize: Standardize,
    /// Std of seeded Gaussian noise added after standardizing.
    pub noise: f64,
    /// Fitted per-channel statistics for [`Standardize::Dataset`].
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Default for Preprocess {
    fn default() -> Self {
        Self::new(Standardize::Dataset)
    }
}

impl Preprocess {
    pub fn new(standardize: Standardize) -> Self {
        Self { standardize, noise: 1e-3, mean: Vec::new(), std: Vec::new() }
    }

    pub fn is_fitted(&self) -> bool {
        self.standardize != Standardize::Dataset || !self.mean.is_empty()
    }

    /// Pools per-channel statistics over `samples`.
    pub fn fit(&mut self, samples: &[TaskSample]) -> Result<()> {
        if self.standardize != Standardize::Dataset {
            return Ok(());
        }
        let Some(first) = samples.first() else {
            return invalid("cannot fit standardization on no samples");
        };
        let ch = first.image.channels();
        let (mut sum, mut sq, mut n) = (vec![0.0; ch], vec![0.0; ch], 0usize);
        for s in samples {
            if s.image.channels() != ch {
                return invalid("samples disagree on channel count");
            }
            for c in 0..ch {
                for v in s.image.channel(c) {
                    sum[c] += v;
                    sq[c] += v * v;
                }
            }
            n += s.image.grid().len();
        }
        let n = n as f64;
        self.mean = sum.iter().map(|s| s / n).collect();
        self.std = sq.iter().zip(&self.mean).map(|(q, m)| (q / n - m * m).max(0.0).sqrt().max(1e-6)).collect();
        Ok(())
    }

    pub fn apply(&self, sample: &TaskSample) -> Result<TaskSample> {
        let mut image = match self.standardize {
            Standardize::Off => return Ok(sample.clone()),
            Standardize::PerImage => return Ok(TaskSample { image: standardize_input(&sample.image, self.noise, sample.seed)?, ..sample.clone() }),
            Standardize::Dataset => sample.image.clone(),
        };
        if self.mean.len() != image.channels() {
            return invalid("standardization is not fitted for this channel count");
        }
        for c in 0..image.channels() {
            let (m, s) = (self.mean[c], self.std[c]);
            image.channel_mut(c).iter_mut().for_each(|v| *v = (*v - m) / s);
        }
        if self.noise > 0.0 {
            let mut rng = SeededRng::new(sample.seed, stream::STANDARDIZE);
            image.data_mut().iter_mut().for_each(|v| *v += self.noise * rng.normal());
        }
        Ok(TaskSample { image, ..sample.clone() })
    }
}

/// Which task and how much of it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub size: usize,
    pub train_samples: usize,
    pub val_samples: usize,
}

impl TaskSpec {
    /// Validation takes 20% of the generated samples.
    pub fn with_total(kind: TaskKind, size: usize, total: usize) -> Self {
        let val = (total / 5).max(1);
        Self { kind, size, train_samples: total.saturating_sub(val).max(1), val_samples: val }
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub kind: TaskKind,
    pub train: Vec<TaskSample>,
    pub val: Vec<TaskSample>,
}

/// Raw samples of `split`, in index order.
pub fn generate_split(kind: TaskKind, size: usize, seed: u64, split: Split, count: usize) -> Result<Vec<TaskSample>> {
    let idx: Vec<u64> = (0..count as u64).collect();
    Execution::default().map(&idx, |&i| kind.generate(sample_seed(seed, split, i), size)).into_iter().collect()
}

impl Dataset {
    /// Generates both splits, fitting `pre` on the raw training split first
    /// if it is not fitted yet.
    pub fn generate(spec: &TaskSpec, seed: u64, pre: &mut Preprocess) -> Result<Self> {
        let train = generate_split(spec.kind, spec.size, seed, Split::Train, spec.train_samples)?;
        if !pre.is_fitted() {
            pre.fit(&train)?;
        }
        let prep = |v: Vec<TaskSample>| -> Result<Vec<TaskSample>> { v.iter().map(|s| pre.apply(s)).collect() };
        Ok(Self {
            kind: spec.kind,
            train: prep(train)?,
            val: prep(generate_split(spec.kind, spec.size, seed, Split::Val, spec.val_samples)?)?,
        })
    }
}

/// Inverse-frequency class weights from `count` generated samples, scaled to mean 1.
///
/// Classes never seen get the largest observed weight.
pub fn inverse_frequency_weights(kind: TaskKind, size: usize, seed: u64, count: usize) -> Result<Vec<f64>> {
    let k = kind.num_classes();
    let mut freq = vec![0usize; k];
    for s in generate_split(kind, size, seed, Split::Stats, count)? {
        match &s.target {
            Target::Mask(m) => m.iter().for_each(|&c| freq[c as usize] += 1),
            Target::Label(l) => freq[*l] += 1,
        }
    }
    let total: usize = freq.iter().sum();
    let mut w: Vec<f64> = freq.iter().map(|&f| if f == 0 { 0.0 } else { total as f64 / f as f64 }).collect();
    let max = w.iter().copied().fold(0.0, f64::max);
    w.iter_mut().filter(|v| **v == 0.0).for_each(|v| *v = max.max(1.0));
    let mean = w.iter().sum::<f64>() / k as f64;
    Ok(w.into_iter().map(|v| v / mean).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: Schedule,
    pub seed: u64,
    pub loss_weights: LossWeights,
    pub dice_smooth: f64,
    /// Readout for the classification task.
    pub readout: Readout,
    /// Samples used to estimate class weights; 0 disables weighting.
    pub class_weight_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            weight_decay: 1e-4,
            epochs: 200,
            batch_size: 32,
            schedule: Schedule::OneCycle,
            seed: 0,
            loss_weights: LossWeights::default(),
            dice_smooth: 1.0,
            readout: Readout::Centre(4),
            class_weight_samples: 1024,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(SonicError::Config(format!("learning rate must be non-negative, got {}", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(SonicError::Config(format!("weight decay must be non-negative, got {}", self.weight_decay)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(SonicError::Config("epochs and batch size must be positive".into()));
        }
        if !(self.dice_smooth >= 0.0) {
            return Err(SonicError::Config("dice smoothing must be non-negative".into()));
        }
        Ok(())
    }

    /// Loss for `kind`, estimating class weights when configured.
    pub fn loss_for(&self, kind: TaskKind, size: usize) -> Result<LossSpec> {
        Ok(match kind {
            TaskKind::SynthShape => {
                let class_weights = if self.class_weight_samples > 0 {
                    inverse_frequency_weights(kind, size, self.seed, self.class_weight_samples)?
                } else {
                    Vec::new()
                };
                LossSpec::Segmentation(SegmentationLoss {
                    weights: self.loss_weights,
                    class_weights,
                    dice_smooth: self.dice_smooth,
                })
            }
            TaskKind::HalliGalli => LossSpec::Classification(self.readout),
        })
    }
}

/// Evaluation summary. For classification, "Dice" per class is the F1 score
/// of that label over samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub dice_per_class: Vec<f64>,
    pub mean_dice: f64,
    /// Pixel accuracy for segmentation, sample accuracy for classification.
    pub accuracy: f64,
    pub loss: f64,
}

impl Metrics {
    /// Dice for segmentation, accuracy for classification.
    pub fn primary(&self, kind: TaskKind) -> f64 {
        match kind {
            TaskKind::SynthShape => self.mean_dice,
            TaskKind::HalliGalli => self.accuracy,
        }
    }
}

/// Predicted class of each sample under `readout`.
fn predict_label(logits: &crate::grid::Signal, readout: Readout) -> Result<usize> {
    let r = readout_logits(logits, readout)?;
    let mut best = 0;
    for k in 1..r.len() {
        if r[k] > r[best] {
            best = k;
        }
    }
    Ok(best)
}

/// Pooled metrics of `model` on already-preprocessed samples.
pub fn evaluate<M: Model>(model: &M, samples: &[TaskSample], loss: &LossSpec) -> Result<Metrics> {
    let Some(first) = samples.first() else {
        return invalid("nothing to evaluate");
    };
    let kind = first.kind;
    let k = kind.num_classes();
    let per = Execution::default().map(samples, |s| -> Result<(f64, Vec<u8>, Vec<u8>)> {
        let y = model.forward(&s.image)?;
        let (l, _) = loss.evaluate(&y, &s.target)?;
        Ok(match (&s.target, loss) {
            (Target::Mask(m), _) => (l, argmax_mask(&y), m.clone()),
            (Target::Label(t), LossSpec::Classification(r)) => (l, vec![predict_label(&y, *r)? as u8], vec![*t as u8]),
            (Target::Label(t), _) => (l, vec![predict_label(&y, Readout::Global)? as u8], vec![*t as u8]),
        })
    });
    let mut counts = DiceCounts::new(k);
    let (mut total, mut correct, mut pixels) = (0.0, 0usize, 0usize);
    for r in per {
        let (l, pred, truth) = r?;
        if !l.is_finite() {
            return Err(SonicError::NonFinite { block: "loss".into(), detail: format!("evaluation loss {l}") });
        }
        total += l;
        correct += pred.iter().zip(&truth).filter(|(a, b)| a == b).count();
        pixels += pred.len();
        counts.add(&pred, &truth)?;
    }
    let (dice_per_class, mean_dice) = match kind {
        TaskKind::SynthShape => {
            let r = counts.report();
            (r.per_class, r.mean)
        }
        TaskKind::HalliGalli => {
            let f1: Vec<f64> = (0..k)
                .map(|c| {
                    let den = counts.pred[c] + counts.truth[c];
                    if den == 0 {
                        1.0
                    } else {
                        2.0 * counts.inter[c] as f64 / den as f64
                    }
                })
                .collect();
            let mean = f1.iter().sum::<f64>() / k as f64;
            (f1, mean)
        }
    };
    Ok(Metrics {
        dice_per_class,
        mean_dice,
        accuracy: correct as f64 / pixels as f64,
        loss: (total / samples.len() as f64).max(0.0),
    })
}

/// One row of the per-epoch log. Train rows carry the mean minibatch loss only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub metrics: Option<Metrics>,
}

fn metric_header(kind: TaskKind) -> String {
    let (name, cols): (&str, Vec<String>) = match kind {
        TaskKind::SynthShape => ("mean_dice", (1..kind.num_classes()).map(|c| format!("dice_{c}")).collect()),
        TaskKind::HalliGalli => ("accuracy", (0..kind.num_classes()).map(|c| format!("f1_{c}")).collect()),
    };
    format!("{name},{}", cols.join(","))
}

fn metric_cells(kind: TaskKind, m: Option<&Metrics>) -> String {
    let width = match kind {
        TaskKind::SynthShape => kind.num_classes() - 1,
        TaskKind::HalliGalli => kind.num_classes(),
    };
    match m {
        None => ",".repeat(width),
        Some(m) => {
            let mut s = format!("{:.8}", m.primary(kind));
            for v in &m.dice_per_class {
                let _ = write!(s, ",{v:.8}");
            }
            s
        }
    }
}

/// `epoch,split,loss,<primary metric>,<per-class>` rows in log order.
pub fn epoch_log_csv(kind: TaskKind, log: &[EpochRecord]) -> String {
    let mut out = format!("epoch,split,loss,{}\n", metric_header(kind));
    for r in log {
        let _ = writeln!(out, "{},{},{:.10},{}", r.epoch, r.split.name(), r.loss, metric_cells(kind, r.metrics.as_ref()));
    }
    out
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<M> {
    /// Checkpoint with the best validation metric (earliest on ties).
    pub best: M,
    pub best_epoch: usize,
    pub best_metrics: Metrics,
    pub last: M,
    pub optimizer: AdamState,
    pub log: Vec<EpochRecord>,
}

/// Trains `model` on `data`, evaluating on the validation split after every
/// epoch. `on_epoch` sees each log row as it is produced.
///
/// A non-finite loss or update aborts with [`SonicError::NonFinite`]; the
/// best checkpoint so far is lost with it only if no epoch completed, so
/// callers that need it should persist from `on_epoch`.
pub fn train<M: Model>(
    model: M,
    data: &Dataset,
    loss: &LossSpec,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &M),
) -> Result<TrainOutcome<M>> {
    cfg.validate()?;
    if data.train.is_empty() || data.val.is_empty() {
        return invalid("training and validation splits must be non-empty");
    }
    let kind = data.kind;
    let mut model = model;
    let mut params = model.params();
    let mut state = AdamState::new(&params);
    let steps_per_epoch = data.train.len().div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut log = Vec::with_capacity(2 * cfg.epochs);
    let mut best: Option<(M, usize, Metrics)> = None;
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        SeededRng::derive(cfg.seed, stream::SHUFFLE, epoch as u64).shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<TaskSample> = chunk.iter().map(|&i| data.train[i].clone()).collect();
            let opts = PassOptions {
                training: true,
                seed: cfg.seed ^ (step as u64).wrapping_mul(0xD1B5_4A32_D192_ED03),
                exec: Execution::default(),
            };
            let (l, g) = loss_and_gradients_with(&model, &batch, loss, opts)?;
            epoch_loss += l * batch.len() as f64;
            let lr = cfg.schedule.rate(cfg.learning_rate, step, total_steps);
            optimizer_step(&mut params, &g, &mut state, lr, cfg.weight_decay)?;
            model.set_params(&params)?;
            model.post_step()?;
            params = model.params();
            step += 1;
        }
        let train_row = EpochRecord {
            epoch,
            split: Split::Train,
            loss: epoch_loss / data.train.len() as f64,
            metrics: None,
        };
        on_epoch(&train_row, &model);
        log.push(train_row);
        let m = evaluate(&model, &data.val, loss)?;
        let val_row = EpochRecord { epoch, split: Split::Val, loss: m.loss, metrics: Some(m.clone()) };
        on_epoch(&val_row, &model);
        log.push(val_row);
        if best.as_ref().is_none_or(|(_, _, b)| m.primary(kind) > b.primary(kind)) {
            best = Some((model.clone(), epoch, m));
        }
    }
    let (best, best_epoch, best_metrics) = best.expect("at least one epoch ran");
    Ok(TrainOutcome { best, best_epoch, best_metrics, last: model, optimizer: state, log })
}

/// One row of the robustness table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    /// `clean`, a perturbation kind, or `combined`.
    pub kind: String,
    /// Severity level; the tier number (1..=3) for combined rows.
    pub level: f64,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessTable {
    pub task: TaskKind,
    /// Clean row followed by every (kind, level) of the severity grid.
    pub rows: Vec<RobustnessRow>,
    /// One row per combined tier.
    pub combined: Vec<RobustnessRow>,
}

impl RobustnessTable {
    pub fn row(&self, kind: &str, level: f64) -> Option<&RobustnessRow> {
        self.rows.iter().chain(&self.combined).find(|r| r.kind == kind && r.level == level)
    }

    fn csv(&self, rows: &[RobustnessRow]) -> String {
        let mut out = format!("kind,level,loss,{}\n", metric_header(self.task));
        for r in rows {
            let _ = writeln!(out, "{},{},{:.10},{}", r.kind, r.level, r.metrics.loss, metric_cells(self.task, Some(&r.metrics)));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        self.csv(&self.rows)
    }

    pub fn combined_csv(&self) -> String {
        self.csv(&self.combined)
    }
}

/// Metrics on `n_samples` fresh test samples under every perturbation in the
/// severity grid, plus the clean and combined-tier rows.
pub fn evaluate_robustness<M: Model>(
    model: &M,
    kind: TaskKind,
    size: usize,
    n_samples: usize,
    seed: u64,
    loss: &LossSpec,
    pre: &Preprocess,
) -> Result<RobustnessTable> {
    if n_samples == 0 {
        return invalid("robustness evaluation needs at least one sample");
    }
    let raw = generate_split(kind, size, seed, Split::Test, n_samples)?;
    let score = |f: &dyn Fn(&TaskSample) -> Result<TaskSample>| -> Result<Metrics> {
        let prepared: Result<Vec<TaskSample>> = raw.iter().map(|s| pre.apply(&f(s)?)).collect();
        evaluate(model, &prepared?, loss)
    };
    let mut rows = vec![RobustnessRow { kind: "clean".into(), level: 0.0, metrics: score(&|s| Ok(s.clone()))? }];
    for (pk, levels) in SEVERITY_GRID {
        for level in levels {
            let p = Perturbation::new(pk, level)?;
            let metrics = score(&|s| apply_perturbation(s, p, s.seed))?;
            rows.push(RobustnessRow { kind: pk.name().into(), level, metrics });
        }
    }
    let mut combined = Vec::new();
    for tier in 0..3 {
        let metrics = score(&|s| apply_combined(s, tier, s.seed))?;
        combined.push(RobustnessRow { kind: "combined".into(), level: (tier + 1) as f64, metrics });
    }
    Ok(RobustnessTable { task: kind, rows, combined })
}
