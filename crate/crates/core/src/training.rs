//! Mini-batch training with Adam, a plateau learning-rate schedule and early
//! stopping on validation accuracy.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{EegRecording, VideoFeatureTrack};
use crate::error::{Error, Result};
use crate::model::{Batch, CheckpointMeta, Corpus, MatchModel, ModelConfig, ModelSpec, config_hash};
use crate::nn::{Adam, AdamConfig, Ctx};
use crate::rng::{derive_seed, rng_for};
use crate::sampling::{Dataset, SamplingConfig, SamplingMode, build_dataset};

const INIT_STREAM: u64 = 0x1417;
const SHUFFLE_STREAM: u64 = 0x5_0000;
const DROPOUT_STREAM: u64 = 0x6_0000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub lr_patience: usize,
    pub lr_factor: f64,
    pub stop_patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub mode: SamplingMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 64,
            lr_patience: 5,
            lr_factor: 0.1,
            stop_patience: 10,
            max_epochs: 200,
            seed: 0,
            mode: SamplingMode::Balanced,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr_patience == 0 || self.stop_patience == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config(
                "lr_patience, stop_patience, batch_size and max_epochs must be positive".into(),
            ));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return Err(Error::Config(format!("lr_factor must lie in (0, 1), got {}", self.lr_factor)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_acc: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlateauStep {
    pub improved: bool,
    pub lr_reduced: bool,
    pub stop: bool,
}

/// Tracks the best validation accuracy. After `lr_patience` consecutive
/// epochs without a strict improvement the learning rate is multiplied by
/// `lr_factor` (and the count restarts); after `stop_patience` such epochs
/// training stops.
#[derive(Debug, Clone)]
pub struct PlateauController {
    pub lr: f64,
    pub best: f64,
    lr_factor: f64,
    lr_patience: usize,
    stop_patience: usize,
    since_lr: usize,
    since_best: usize,
}

impl PlateauController {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            lr: cfg.lr,
            best: f64::NEG_INFINITY,
            lr_factor: cfg.lr_factor,
            lr_patience: cfg.lr_patience,
            stop_patience: cfg.stop_patience,
            since_lr: 0,
            since_best: 0,
        }
    }

    pub fn step(&mut self, val_acc: f64) -> PlateauStep {
        if val_acc > self.best {
            self.best = val_acc;
            self.since_best = 0;
            self.since_lr = 0;
            return PlateauStep {
                improved: true,
                lr_reduced: false,
                stop: false,
            };
        }
        self.since_best += 1;
        self.since_lr += 1;
        let lr_reduced = self.since_lr >= self.lr_patience;
        if lr_reduced {
            self.lr *= self.lr_factor;
            self.since_lr = 0;
        }
        PlateauStep {
            improved: false,
            lr_reduced,
            stop: self.since_best >= self.stop_patience,
        }
    }
}

/// Fraction of `(p > 0.5) == label`; p exactly 0.5 is always wrong.
pub fn accuracy(probs: &[f64], labels: &[f32]) -> f64 {
    if probs.is_empty() {
        return 0.0;
    }
    let correct = probs
        .iter()
        .zip(labels)
        .filter(|(p, y)| (**p > 0.5 && **y > 0.5) || (**p < 0.5 && **y < 0.5))
        .count();
    correct as f64 / probs.len() as f64
}

/// Model geometry for a dataset drawn from `corpus`.
pub fn model_config_for(base: &ModelConfig, corpus: &Corpus, dataset: &Dataset) -> ModelConfig {
    ModelConfig {
        eeg_channels: corpus.n_channels,
        eeg_len: dataset.eeg_len,
        video_dim: corpus.video_dim,
        video_len: dataset.video_len,
        ..base.clone()
    }
}

/// Eval-mode probabilities for every sample of `dataset`, in order.
pub fn predict_dataset(
    model: &mut MatchModel<f32>,
    corpus: &Corpus,
    dataset: &Dataset,
    batch_size: usize,
) -> Result<Vec<f64>> {
    let idx: Vec<usize> = (0..dataset.len()).collect();
    let mut out = Vec::with_capacity(dataset.len());
    for chunk in idx.chunks(batch_size.max(1)) {
        let batch = Batch::assemble(corpus, dataset, chunk, model.two_way())?;
        out.extend(model.predict(&batch)?);
    }
    Ok(out)
}

pub fn evaluate_accuracy(
    model: &mut MatchModel<f32>,
    corpus: &Corpus,
    dataset: &Dataset,
    batch_size: usize,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset("evaluation set has no samples".into()));
    }
    let probs = predict_dataset(model, corpus, dataset, batch_size)?;
    let labels: Vec<f32> = dataset.samples.iter().map(|s| s.label as f32).collect();
    Ok(accuracy(&probs, &labels))
}

/// The recordings of one split with their samples.
pub struct SplitData {
    pub recordings: Vec<EegRecording>,
    pub corpus: Corpus,
    pub dataset: Dataset,
}

impl SplitData {
    /// Picks `ids` out of `recordings` (in the order given) and enumerates
    /// their samples.
    pub fn new(
        recordings: &[EegRecording],
        track: &VideoFeatureTrack,
        ids: &[String],
        sampling: &SamplingConfig,
    ) -> Result<Self> {
        let recordings = ids
            .iter()
            .map(|id| {
                recordings
                    .iter()
                    .find(|r| &r.subject_id == id)
                    .cloned()
                    .ok_or_else(|| Error::MissingSubject(id.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        let dataset = build_dataset(&recordings, track, sampling)?;
        let corpus = Corpus::new(&recordings, track);
        Ok(Self {
            recordings,
            corpus,
            dataset,
        })
    }
}

pub struct TrainOutcome {
    /// Weights from the epoch with the best validation accuracy.
    pub model: MatchModel<f32>,
    pub meta: CheckpointMeta,
    pub history: Vec<EpochRecord>,
}

/// Trains `spec` on one split, selecting weights on another. `on_epoch` sees each record
/// as soon as it is complete.
pub fn train(
    spec: &ModelSpec,
    arch: &ModelConfig,
    train_split: &SplitData,
    val_split: &SplitData,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (corpus, train_set) = (&train_split.corpus, &train_split.dataset);
    let (val_corpus, val_set) = (&val_split.corpus, &val_split.dataset);
    if train_set.is_empty() {
        return Err(Error::EmptyDataset("training set has no samples".into()));
    }
    if val_set.is_empty() {
        return Err(Error::EmptyDataset("validation set has no samples".into()));
    }
    let shared: Vec<&String> = train_set
        .subject_ids
        .iter()
        .filter(|s| val_set.subject_ids.contains(s))
        .collect();
    if !shared.is_empty() {
        return Err(Error::Config(format!("train and validation share subjects {shared:?}")));
    }

    let arch = model_config_for(arch, corpus, train_set);
    let init_seed = derive_seed(cfg.seed, INIT_STREAM);
    let mut model = MatchModel::<f32>::new(spec, &arch, init_seed)?;
    let mut best = model.weights();
    let mut opt = Adam::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let mut plateau = PlateauController::new(cfg);
    let mut history = Vec::new();
    let mut best_epoch = 0;
    let two_way = spec.is_two_way();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.sort_unstable();
        order.shuffle(&mut rng_for(cfg.seed, SHUFFLE_STREAM + epoch as u64));
        let mut ctx = Ctx::train(rng_for(cfg.seed, DROPOUT_STREAM + epoch as u64));
        let lr = plateau.lr;
        opt.cfg.lr = lr;
        let mut total = 0.0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = Batch::assemble(corpus, train_set, chunk, two_way)?;
            let logits = model.forward(&batch, &mut ctx)?;
            let (loss, dlogits) = MatchModel::<f32>::loss_grad(&logits, &batch.labels);
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, batch: bi, loss });
            }
            model.zero_grad();
            model.backward(&dlogits, false);
            opt.update(model.params_mut());
            total += loss * chunk.len() as f64;
        }
        let val_acc = evaluate_accuracy(&mut model, val_corpus, val_set, cfg.batch_size)?;
        let record = EpochRecord {
            epoch,
            loss: total / train_set.len() as f64,
            val_acc,
            lr,
        };
        log::info!("epoch {epoch}: loss {:.4}, val acc {:.4}, lr {lr:e}", record.loss, val_acc);
        on_epoch(&record);
        history.push(record);
        let step = plateau.step(val_acc);
        if step.improved {
            best = model.weights();
            best_epoch = epoch;
        }
        if step.stop {
            break;
        }
    }
    model.set_weights(&best);
    let meta = CheckpointMeta {
        model_spec: spec.to_string(),
        arch,
        epoch: best_epoch,
        best_val_accuracy: plateau.best,
        rng_seed: init_seed,
        config_hash: config_hash(cfg),
        tensors: Vec::new(),
    };
    Ok(TrainOutcome { model, meta, history })
}
