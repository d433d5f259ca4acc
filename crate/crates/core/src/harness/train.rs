use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use stressnas_nn::{cross_entropy, Network, Sgd, TrainConfig};

use super::features::Split;
use super::metrics::{subject_accuracy, ConfusionMatrix};
use crate::error::{Error, Result};

const EVAL_BATCH: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochLog>,
    /// Epoch whose parameters were kept; `None` when no epoch ran.
    pub best_epoch: Option<usize>,
    pub best_val_accuracy: Option<f64>,
}

/// Argmax predictions (ties to the lower class) tallied against the labels.
pub fn evaluate(net: &Network, split: &Split<'_>) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(net.output_dim());
    let idx: Vec<usize> = (0..split.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let logits = net.infer(&split.inputs(chunk)?)?;
        for (truth, pred) in split.labels(chunk).into_iter().zip(logits.argmax_rows()) {
            cm.record(truth, pred);
        }
    }
    Ok(cm)
}

/// Mini-batch SGD with a seeded shuffle per epoch. Restores the parameters of
/// the epoch with the best validation accuracy (earliest on ties).
pub fn train(net: &mut Network, train: &Split<'_>, val: &Split<'_>, cfg: &TrainConfig) -> Result<History> {
    cfg.validate().map_err(Error::Config)?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config("training and validation sets must be non-empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Sgd::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = History::default();
    let mut best = None;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let inputs = train.inputs(chunk)?;
            let labels = train.labels(chunk);
            let logits = net.forward(&inputs, true)?;
            let (loss, grad) = cross_entropy(&logits, &labels);
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "loss {loss} at epoch {epoch}, batch {b} (lr {:.3e})",
                    cfg.lr_at(epoch)
                )));
            }
            loss_sum += loss * chunk.len() as f64;
            correct += logits
                .argmax_rows()
                .iter()
                .zip(&labels)
                .filter(|(p, t)| p == t)
                .count();
            let grads = net.backward(&grad)?;
            opt.step(net.params_mut(), &grads.params, cfg, epoch);
        }
        let val_accuracy = subject_accuracy(&evaluate(net, val)?)?;
        history.epochs.push(EpochLog {
            epoch,
            lr: cfg.lr_at(epoch),
            loss: loss_sum / train.len() as f64,
            train_accuracy: correct as f64 / train.len() as f64,
            val_accuracy,
        });
        if history.best_val_accuracy.is_none_or(|b| val_accuracy > b) {
            history.best_val_accuracy = Some(val_accuracy);
            history.best_epoch = Some(epoch);
            best = Some(net.state());
        }
    }
    if let Some(state) = best {
        net.load_state(state)?;
    }
    Ok(history)
}
