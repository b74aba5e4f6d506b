use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;

use crate::data::{augment_chain, batch_tensor, AugmentConfig, ImageF, LabeledDataset};
use crate::error::{Error, Result};
use crate::nn::{Mode, Model};
use crate::optim::loss::sparse_ce;
use crate::optim::optimizer::{optimizer_step, OptState, OptimizerKind};
use crate::rng::{derive_seed, Rng};
use crate::tensor::Tensor;

const DROPOUT_STREAM: u64 = 0xD809;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub shuffle: bool,
    /// Online augmentation of training items; `None` trains on the images as stored.
    pub augment: Option<AugmentConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            learning_rate: 1e-4,
            batch_size: 32,
            optimizer: OptimizerKind::adam(),
            seed: 0,
            shuffle: true,
            augment: Some(AugmentConfig::default()),
        }
    }
}

/// Learning rates the tuning sweep is expected to cover.
pub const LR_RANGE: (f64, f64) = (1e-5, 1e-3);

impl TrainConfig {
    /// Rejects zero epochs or batch size and negative or non-finite rates.
    /// A rate of exactly 0 is accepted (parameters stay frozen).
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be a finite non-negative number, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    /// Mean over training samples of the loss seen during the epoch.
    pub train_loss: f64,
    /// Fraction of training samples classified correctly during the epoch
    /// (train mode, augmented inputs).
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub weights_path: Option<PathBuf>,
}

pub const REPORT_HEADER: &str = "epoch,train_loss,train_acc,val_loss,val_acc,seconds";

impl TrainReport {
    pub fn last(&self) -> Option<&EpochStats> {
        self.epochs.last()
    }

    /// One row per epoch. Losses and accuracies use the shortest decimal form
    /// that round-trips; seconds are printed with three decimals.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{REPORT_HEADER}\n");
        for e in &self.epochs {
            writeln!(
                out,
                "{},{},{},{},{},{:.3}",
                e.epoch, e.train_loss, e.train_acc, e.val_loss, e.val_acc, e.seconds
            )
            .expect("write to String");
        }
        out
    }

    /// The CSV with the wall-clock column dropped; equal across reruns.
    pub fn deterministic_csv(&self) -> String {
        self.to_csv()
            .lines()
            .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head))
            .fold(String::new(), |acc, l| acc + l + "\n")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub predictions: Vec<usize>,
    /// `[N, K]` eval-mode probabilities.
    pub probabilities: Tensor,
}

fn check_labels(ds: &LabeledDataset, classes: usize) -> Result<()> {
    for (index, it) in ds.items.iter().enumerate() {
        if it.label >= classes {
            return Err(Error::LabelOutOfRange {
                index,
                label: it.label,
                classes,
            });
        }
    }
    Ok(())
}

/// Eval-mode loss, accuracy and predictions over the whole dataset.
pub fn evaluate(model: &Model, ds: &LabeledDataset, batch_size: usize) -> Result<Evaluation> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset("evaluation set has no items"));
    }
    check_labels(ds, model.spec().num_classes())?;
    let indices: Vec<usize> = (0..ds.len()).collect();
    let mut loss_sum = 0.0;
    let mut probs = Vec::with_capacity(ds.len() * model.spec().num_classes());
    for chunk in indices.chunks(batch_size.max(1)) {
        let (x, y) = ds.batch(chunk)?;
        let p = model.predict(&x)?;
        loss_sum += sparse_ce(&p, &y)?.0 * chunk.len() as f64;
        probs.extend_from_slice(p.data());
    }
    let probabilities = Tensor::from_vec(&[ds.len(), model.spec().num_classes()], probs)?;
    let predictions = probabilities.argmax_rows();
    let hits = predictions.iter().zip(&ds.labels()).filter(|(p, y)| p == y).count();
    Ok(Evaluation {
        loss: loss_sum / ds.len() as f64,
        accuracy: hits as f64 / ds.len() as f64,
        predictions,
        probabilities,
    })
}

fn training_inputs(
    ds: &LabeledDataset,
    chunk: &[usize],
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<(Tensor, Vec<usize>)> {
    let Some(aug) = &cfg.augment else {
        return ds.batch(chunk);
    };
    let images: Vec<ImageF> = chunk
        .par_iter()
        .map(|&i| {
            let mut rng = Rng::derived(aug.seed, &[cfg.seed, epoch as u64, i as u64]);
            augment_chain(&ds.items[i].image, aug, &mut rng)
        })
        .collect();
    let refs: Vec<&ImageF> = images.iter().collect();
    let labels = chunk.iter().map(|&i| ds.items[i].label).collect();
    Ok((batch_tensor(&refs)?, labels))
}

/// [`train_with_progress`] without a callback.
pub fn train(
    model: &mut Model,
    train_set: &LabeledDataset,
    val_set: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    train_with_progress(model, train_set, val_set, cfg, |_| {})
}

/// Mini-batch training for a fixed number of epochs.
///
/// Epoch `e` (0-based) visits the training items in the order given by a
/// shuffle seeded with `seed ⊕ e` (identity order when shuffling is off).
/// Item `i` is augmented with a stream derived from
/// `(augment.seed; seed, e, i)`, batch `b` uses dropout seed
/// `derive_seed(seed, [0xD809, e, b])`. After each epoch the model is
/// evaluated on `val_set` in eval mode and `on_epoch` is called.
pub fn train_with_progress(
    model: &mut Model,
    train_set: &LabeledDataset,
    val_set: &LabeledDataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyDataset("training set has no items"));
    }
    if val_set.is_empty() {
        return Err(Error::EmptyDataset("validation set has no items"));
    }
    let classes = model.spec().num_classes();
    check_labels(train_set, classes)?;
    check_labels(val_set, classes)?;

    let mut state = OptState::new(cfg.optimizer, model.params());
    let mut report = TrainReport::default();
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        if cfg.shuffle {
            Rng::new(cfg.seed ^ epoch as u64).shuffle(&mut order);
        }
        let (mut loss_sum, mut hits) = (0.0, 0usize);
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (x, y) = training_inputs(train_set, chunk, cfg, epoch)?;
            let dropout_seed = derive_seed(cfg.seed, &[DROPOUT_STREAM, epoch as u64, batch as u64]);
            let probs = match model.forward(&x, Mode::Train { dropout_seed }, true) {
                Err(Error::Shape { op: "softmax", .. }) => {
                    return Err(Error::Divergence { epoch: epoch + 1, batch })
                }
                other => other?,
            };
            let (loss, grad) = sparse_ce(&probs, &y)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch: epoch + 1, batch });
            }
            loss_sum += loss * chunk.len() as f64;
            hits += probs.argmax_rows().iter().zip(&y).filter(|(p, t)| p == t).count();
            let grads = model.backward(&grad)?;
            optimizer_step(cfg.optimizer, model.params_mut(), &grads, &mut state, cfg.learning_rate)?;
        }
        let val = evaluate(model, val_set, cfg.batch_size)?;
        let stats = EpochStats {
            epoch: epoch + 1,
            train_loss: loss_sum / train_set.len() as f64,
            train_acc: hits as f64 / train_set.len() as f64,
            val_loss: val.loss,
            val_acc: val.accuracy,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&stats);
        report.epochs.push(stats);
    }
    model.clear_capture();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_dataset;
    use crate::nn::{LayerSpec, ModelSpec};

    fn tiny_model(seed: u64) -> Model {
        let spec = ModelSpec {
            input_shape: (1, 8, 8),
            layers: vec![
                LayerSpec::conv(2, 3, 1, 1),
                LayerSpec::Relu,
                LayerSpec::MaxPool2,
                LayerSpec::Flatten,
                LayerSpec::dense(3),
                LayerSpec::SoftmaxOutput,
            ],
            class_names: vec!["a".into(), "b".into(), "c".into()],
        };
        Model::build(spec, seed).unwrap()
    }

    fn quick_config() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            learning_rate: 1e-2,
            batch_size: 4,
            seed: 9,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn deterministic_reruns() {
        let ds = synth_dataset(4, 8, 1);
        let run = || {
            let mut m = tiny_model(3);
            let r = train(&mut m, &ds, &ds, &quick_config()).unwrap();
            (r.deterministic_csv(), m.params().to_vec())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn zero_rate_freezes_weights() {
        let ds = synth_dataset(3, 8, 2);
        let mut m = tiny_model(1);
        let before = m.params().to_vec();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..quick_config()
        };
        let r = train(&mut m, &ds, &ds, &cfg).unwrap();
        assert_eq!(m.params(), &before[..]);
        assert_eq!(r.epochs.len(), 2);
    }

    #[test]
    fn report_csv_shape() {
        let ds = synth_dataset(2, 8, 3);
        let mut m = tiny_model(0);
        let r = train(&mut m, &ds, &ds, &quick_config()).unwrap();
        let csv = r.to_csv();
        assert!(csv.starts_with("epoch,train_loss,train_acc,val_loss,val_acc,seconds\n"));
        assert_eq!(csv.lines().count(), 3);
        assert!(r.epochs.iter().all(|e| e.train_loss.is_finite()));
    }

    #[test]
    fn invalid_inputs() {
        let ds = synth_dataset(2, 8, 3);
        let mut m = tiny_model(0);
        let empty = LabeledDataset::default();
        assert!(matches!(train(&mut m, &empty, &ds, &quick_config()), Err(Error::EmptyDataset(_))));
        let cfg = TrainConfig {
            epochs: 0,
            ..quick_config()
        };
        assert!(matches!(train(&mut m, &ds, &ds, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn nan_weights_report_divergence() {
        let ds = synth_dataset(2, 8, 3);
        let mut m = tiny_model(0);
        m.params_mut()[3].data_mut().fill(f64::NAN);
        assert!(matches!(
            train(&mut m, &ds, &ds, &quick_config()),
            Err(Error::Divergence { epoch: 1, batch: 0 })
        ));
    }
}
