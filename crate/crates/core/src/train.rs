//! Seeded mini-batch training.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::metrics::{EpochRecord, TrainReport};
use crate::nn::{argmax, sparse_ce_loss, DenseNetwork, NetworkSpec};
use crate::optim::{OptimizerConfig, OptimizerKind, OptimizerState};

pub const DEFAULT_EPOCHS: usize = 30;
pub const DEFAULT_BATCH_SIZE: usize = 32;
const EVAL_CHUNK: usize = 512;
const SHUFFLE_STREAM: u64 = 0x5348_5546;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            seed: 0,
            optimizer: OptimizerConfig::new(OptimizerKind::Sgd),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::validation("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("batch size must be at least 1"));
        }
        self.optimizer.validate()
    }
}

fn check_compatible(net: &DenseNetwork, ds: &LabeledDataset, what: &str) -> Result<()> {
    if ds.feature_dim() != net.input_dim() {
        return Err(Error::validation(format!(
            "{what} set has {} features, network expects {}",
            ds.feature_dim(),
            net.input_dim()
        )));
    }
    if ds.num_classes() != net.num_classes() {
        return Err(Error::validation(format!(
            "{what} set has {} classes, network outputs {}",
            ds.num_classes(),
            net.num_classes()
        )));
    }
    Ok(())
}

/// Argmax predictions for every sample of `ds`, in order.
pub fn predict_dataset(net: &DenseNetwork, ds: &LabeledDataset) -> Result<Vec<usize>> {
    if ds.feature_dim() != net.input_dim() {
        return Err(Error::validation(format!(
            "dataset has {} features, network expects {}",
            ds.feature_dim(),
            net.input_dim()
        )));
    }
    let idx: Vec<usize> = (0..ds.len()).collect();
    let mut out = Vec::with_capacity(ds.len());
    for chunk in idx.chunks(EVAL_CHUNK) {
        out.extend(net.predict_batch(&ds.batch(chunk))?);
    }
    Ok(out)
}

pub fn dataset_accuracy(net: &DenseNetwork, ds: &LabeledDataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::validation("accuracy of an empty dataset"));
    }
    let preds = predict_dataset(net, ds)?;
    let hits = preds.iter().zip(ds.labels()).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / ds.len() as f64)
}

/// Trains `net` in place. Each epoch shuffles the training set with a
/// seeded RNG and walks it in mini-batches; train loss and accuracy are the
/// running values over the epoch's batches, test accuracy is measured after
/// the epoch.
pub fn train(
    net: &mut DenseNetwork,
    train_set: &LabeledDataset,
    test_set: Option<&LabeledDataset>,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::validation("training set is empty"));
    }
    check_compatible(net, train_set, "training")?;
    if let Some(test) = test_set {
        check_compatible(net, test, "test")?;
    }

    let started = Instant::now();
    let mut opt = OptimizerState::for_network(cfg.optimizer, net)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, SHUFFLE_STREAM));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut records = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut hits) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = train_set.batch(chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| train_set.label(i)).collect();
            let trace = net.forward(&batch)?;
            for (row, &label) in trace.probabilities().iter_rows().zip(&labels) {
                loss_sum += sparse_ce_loss(row, label)?;
                hits += (argmax(row) == label) as usize;
            }
            if !loss_sum.is_finite() {
                return Err(Error::Diverged(format!("non-finite loss in epoch {epoch}")));
            }
            let grads = net.backward(&trace, &labels)?;
            opt.apply_step(net, &grads).map_err(|e| match e {
                Error::Diverged(msg) => Error::Diverged(format!("epoch {epoch}: {msg}")),
                other => other,
            })?;
        }
        let n = train_set.len() as f64;
        let test_accuracy = test_set.map(|t| dataset_accuracy(net, t)).transpose()?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / n,
            train_accuracy: hits as f64 / n,
            test_accuracy,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} train {:.4} test {}",
            record.train_loss,
            record.train_accuracy,
            test_accuracy.map_or("-".to_string(), |a| format!("{a:.4}"))
        );
        records.push(record);
    }
    Ok(TrainReport {
        optimizer: cfg.optimizer.kind.name().to_string(),
        seed: cfg.seed,
        epochs: records,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Initializes a network of `spec` (output width taken from the training
/// set) from `cfg.seed` and trains it.
pub fn fit(
    spec: &NetworkSpec,
    train_set: &LabeledDataset,
    test_set: Option<&LabeledDataset>,
    cfg: &TrainConfig,
) -> Result<(DenseNetwork, TrainReport)> {
    let spec = spec.with_classes(train_set.num_classes());
    let mut net = DenseNetwork::init(&spec, cfg.seed)?;
    let report = train(&mut net, train_set, test_set, cfg)?;
    Ok((net, report))
}
