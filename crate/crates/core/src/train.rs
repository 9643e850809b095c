//! SGD training loop with per-epoch validation, early stopping, best-weight
//! restoration and history export.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{self, make_batches, stratified_split, MemorySource, SampleSource, SplitIndex};
use crate::metrics::{self, MetricsReport};
use crate::model::{save_model, Model, ModelError, Profile};
use crate::nn::{loss::cross_entropy, Mode, Rng, Tensor};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Data(#[from] data::DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error("training diverged at epoch {epoch}, batch {batch}: {source}")]
    Diverged {
        epoch: usize,
        batch: usize,
        #[source]
        source: ModelError,
    },
    #[error("invalid training setup: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub profile: Profile,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub patience: usize,
    pub min_delta: f64,
    pub init_seed: u64,
    pub shuffle_seed: u64,
    pub split_seed: u64,
    pub split_ratio: f64,
    /// Generator name; only "chacha8" exists.
    pub rng: String,
    /// Write measured epoch durations to the history; when off the
    /// `seconds` column is 0 so reruns produce identical files.
    pub record_wall_time: bool,
    /// Where to write `model-epoch-NNN.islm` whenever validation loss
    /// reaches a new minimum.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            profile: Profile::Desk,
            epochs: 25,
            batch_size: 32,
            learning_rate: 0.01,
            patience: 5,
            min_delta: 1e-4,
            init_seed: 1,
            shuffle_seed: 2,
            split_seed: 3,
            split_ratio: 0.8,
            rng: Rng::ALGORITHM.to_string(),
            record_wall_time: true,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(TrainError::Invalid(m));
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.min_delta >= 0.0) {
            return fail("min_delta must be non-negative".into());
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return fail(format!("split_ratio must be in (0, 1), got {}", self.split_ratio));
        }
        if self.rng != Rng::ALGORITHM {
            return fail(format!("unsupported rng {:?} (only {:?})", self.rng, Rng::ALGORITHM));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
    pub stopped_early: bool,
    /// 1-based epoch with the lowest validation loss (first on ties).
    pub best_epoch: Option<usize>,
}

impl History {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.best_epoch.map(|e| &self.records[e - 1])
    }
}

/// True once validation loss has gone `max(patience, 1)` consecutive
/// epochs without dropping more than `min_delta` below the best so far.
pub fn should_stop(history: &History, patience: usize, min_delta: f64) -> bool {
    let mut best = f64::INFINITY;
    let mut stale = 0;
    for r in &history.records {
        if r.val_loss < best - min_delta {
            best = r.val_loss;
            stale = 0;
        } else {
            stale += 1;
        }
    }
    stale >= patience.max(1)
}

/// Mean cross-entropy and accuracy over `source`, in inference mode.
pub fn evaluate_loss<S: SampleSource + ?Sized>(model: &Model, source: &S, batch_size: usize) -> Result<(f64, f64)> {
    let (probs, labels) = predict_all(model, source, batch_size)?;
    let k = model.classes();
    let mut loss = 0.0;
    let mut correct = 0;
    for (row, &label) in probs.chunks(k).zip(&labels) {
        loss += cross_entropy(&Tensor::from_vec(row.to_vec()), label).map_err(ModelError::from)?;
        correct += usize::from(Tensor::from_vec(row.to_vec()).argmax() == label);
    }
    let n = labels.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Row-major probabilities `[n, classes]` and the true labels, in source order.
pub fn predict_all<S: SampleSource + ?Sized>(model: &Model, source: &S, batch_size: usize) -> Result<(Vec<f64>, Vec<usize>)> {
    if source.is_empty() {
        return Err(TrainError::Invalid("cannot evaluate an empty sample set".into()));
    }
    let mut probs = Vec::with_capacity(source.len() * model.classes());
    let mut labels = Vec::with_capacity(source.len());
    let indices: Vec<usize> = (0..source.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let inputs: Vec<Tensor> = chunk.iter().map(|&i| source.input(i)).collect::<data::Result<_>>()?;
        let batch = data::stack_inputs(inputs)?;
        probs.extend_from_slice(model.predict_batch(&batch)?.data());
        labels.extend(chunk.iter().map(|&i| source.label(i)));
    }
    Ok((probs, labels))
}

/// Confusion matrix and metrics for `model` on `source`.
pub fn evaluate<S: SampleSource + ?Sized>(model: &Model, source: &S, batch_size: usize) -> Result<MetricsReport> {
    let (probs, truth) = predict_all(model, source, batch_size)?;
    let k = model.classes();
    let predicted: Vec<usize> = probs.chunks(k).map(|r| Tensor::from_vec(r.to_vec()).argmax()).collect();
    let cm = metrics::confusion(&truth, &predicted, k)?;
    Ok(metrics::macro_report(&cm)?.with_labels(model.labels()))
}

/// Trains `model` on `train` and validates on `val` after every epoch.
///
/// Returns the model restored to the epoch with the lowest validation
/// loss, in inference mode.
pub fn train<S: SampleSource + ?Sized>(mut model: Model, train: &S, val: &S, cfg: &TrainConfig) -> Result<(Model, History)> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(TrainError::Invalid("training and validation sets must be non-empty".into()));
    }
    if let Some(dir) = &cfg.checkpoint_dir {
        std::fs::create_dir_all(dir)
            .map_err(|source| ModelError::Io { path: dir.clone(), source })?;
    }
    let mut history = History::default();
    let mut best: Option<(f64, Model)> = None;

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        model.set_mode(Mode::Train);
        let mut dropout_rng = Rng::with_stream(cfg.shuffle_seed, (1 << 32) | epoch as u64);
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        for (b, batch) in make_batches(train, cfg.batch_size, cfg.shuffle_seed, epoch as u64)?.enumerate() {
            let batch = batch?;
            let stats = model
                .train_batch(&batch.inputs, &batch.labels, cfg.learning_rate, &mut dropout_rng)
                .map_err(|source| TrainError::Diverged { epoch, batch: b + 1, source })?;
            loss_sum += stats.loss * stats.size as f64;
            correct += stats.correct;
            seen += stats.size;
        }
        model.set_mode(Mode::Infer);
        let (val_loss, val_accuracy) = evaluate_loss(&model, val, cfg.batch_size)?;
        let record = EpochRecord {
            epoch,
            loss: loss_sum / seen as f64,
            accuracy: correct as f64 / seen as f64,
            val_loss,
            val_accuracy,
            seconds: if cfg.record_wall_time { start.elapsed().as_secs_f64() } else { 0.0 },
        };
        log::info!(
            "epoch {epoch}/{}: loss {:.4} acc {:.4} val_loss {:.4} val_acc {:.4}",
            cfg.epochs,
            record.loss,
            record.accuracy,
            record.val_loss,
            record.val_accuracy
        );
        history.records.push(record);

        if best.as_ref().is_none_or(|(l, _)| val_loss < *l) {
            history.best_epoch = Some(epoch);
            if let Some(dir) = &cfg.checkpoint_dir {
                save_model(&model, &dir.join(format!("model-epoch-{epoch:03}.islm")))?;
            }
            best = Some((val_loss, model.clone()));
        }
        if epoch < cfg.epochs && should_stop(&history, cfg.patience, cfg.min_delta) {
            history.stopped_early = true;
            log::info!("early stop after epoch {epoch}");
            break;
        }
    }
    let (_, best_model) = best.expect("at least one epoch ran");
    Ok((best_model, history))
}

/// Splits, preprocesses once into memory and trains.
pub fn train_split(model: Model, split: &SplitIndex, cfg: &TrainConfig) -> Result<(Model, History)> {
    let pipeline = model.pipeline().clone();
    let train_src = MemorySource::preload(&data::FileSource::new(split.train.clone(), pipeline.clone()))?;
    let val_src = MemorySource::preload(&data::FileSource::new(split.test.clone(), pipeline))?;
    train(model, &train_src, &val_src, cfg)
}

/// Scans `root`, splits it per `cfg` and trains a fresh model of
/// `cfg.profile` whose labels are the dataset's class names.
pub fn train_from_dir(root: &Path, pipeline: crate::preproc::PipelineConfig, cfg: &TrainConfig) -> Result<(Model, History, SplitIndex)> {
    cfg.validate()?;
    let index = data::scan_dataset(root)?;
    let split = stratified_split(&index, cfg.split_ratio, cfg.split_seed)?;
    let manifest = cfg.profile.manifest(index.classes.len());
    let model = Model::init(manifest, index.classes.clone(), pipeline, cfg.init_seed)?;
    let (model, history) = train_split(model, &split, cfg)?;
    Ok((model, history, split))
}

pub const HISTORY_HEADER: [&str; 6] = ["epoch", "loss", "accuracy", "val_loss", "val_accuracy", "seconds"];

pub fn history_to_csv(history: &History) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(HISTORY_HEADER).expect("in-memory write");
    for r in &history.records {
        w.serialize(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is UTF-8")
}

pub fn export_history(history: &History, path: &Path) -> Result<()> {
    std::fs::write(path, history_to_csv(history)).map_err(|source| TrainError::Csv {
        path: path.to_path_buf(),
        source: source.into(),
    })
}

pub fn parse_history(text: &str) -> std::result::Result<Vec<EpochRecord>, csv::Error> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers()?.clone();
    if header.iter().ne(HISTORY_HEADER) {
        return Err(csv::Error::from(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("unexpected history header {:?}", header.iter().collect::<Vec<_>>()),
        )));
    }
    r.deserialize().collect()
}
