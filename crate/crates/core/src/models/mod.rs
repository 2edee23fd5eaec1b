//! EEGNet and CharRNN with their training loops.

mod charrnn;
mod eegnet;
mod weights;

pub use charrnn::{
    index_symbol, symbol_index, train_charrnn, CharRnn, CharRnnConfig, ALPHABET, SPACE, VOCAB,
};
pub use eegnet::{samples_to_batch, train_eegnet, Eegnet, EegnetConfig};
pub use weights::{ModelWeights, NamedTensor, WEIGHTS_VERSION};

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numcore::{cosine_lr, Plateau, SchedulerKind, Tensor, TrainConfig};

/// One row of a training history.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    /// Rate used during this epoch.
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    /// CSV with header `epoch,train_loss,train_acc,val_loss,val_acc,lr`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.epochs {
            w.serialize(r)?;
        }
        if self.epochs.is_empty() {
            w.write_record(["epoch", "train_loss", "train_acc", "val_loss", "val_acc", "lr"])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        crate::io::manifest::write_text(path, &self.to_csv()?)
    }
}

/// Per-epoch learning rate driven by the configured scheduler.
pub(crate) enum LrSchedule {
    Plateau(Plateau),
    Cosine { lr0: f64, t_max: f64 },
}

impl LrSchedule {
    pub(crate) fn new(tc: &TrainConfig) -> Result<Self> {
        tc.validate()?;
        Ok(match tc.scheduler {
            SchedulerKind::Plateau { factor, patience, min_lr } => {
                LrSchedule::Plateau(Plateau::new(tc.learning_rate, factor, patience, min_lr)?)
            }
            SchedulerKind::Cosine { t_max } => LrSchedule::Cosine { lr0: tc.learning_rate, t_max },
        })
    }

    pub(crate) fn lr(&self, epoch: usize) -> Result<f64> {
        match self {
            LrSchedule::Plateau(p) => Ok(p.lr()),
            LrSchedule::Cosine { lr0, t_max } => cosine_lr((epoch as f64).min(*t_max), *t_max, *lr0),
        }
    }

    pub(crate) fn end_epoch(&mut self, val_loss: f64) {
        if let LrSchedule::Plateau(p) = self {
            p.observe(val_loss);
        }
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows of `scores [N, K]` whose argmax equals the label.
/// Ties resolve to the lowest class index.
pub fn classification_accuracy(scores: &Tensor, labels: &[usize]) -> Result<f64> {
    if scores.rank() != 2 {
        return Err(Error::shape(format!("scores must be [N, K], got {:?}", scores.shape())));
    }
    let n = scores.dim(0);
    if n == 0 {
        return Err(Error::param("accuracy of an empty set"));
    }
    if labels.len() != n {
        return Err(Error::shape(format!("{n} score rows but {} labels", labels.len())));
    }
    let hits = scores.rows().zip(labels).filter(|(r, &l)| argmax(r) == l).count();
    Ok(hits as f64 / n as f64)
}

pub(crate) fn check_finite(loss: f64, epoch: usize, what: &str) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence { epoch, detail: format!("{what} loss is {loss}") })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::rng::rng_from;
    use rand::Rng;

    #[test]
    fn accuracy_counts() {
        let s = Tensor::new(&[4, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1., 1., 0., 0.]).unwrap();
        assert_eq!(classification_accuracy(&s, &[0, 1, 2, 0]).unwrap(), 1.0);
        assert_eq!(classification_accuracy(&s, &[0, 1, 2, 2]).unwrap(), 0.75);
        assert!(classification_accuracy(&Tensor::zeros(&[0, 3]), &[]).is_err());
        assert!(classification_accuracy(&s, &[0]).is_err());
    }

    #[test]
    fn ties_pick_lowest_index() {
        assert_eq!(argmax(&[0.2, 0.5, 0.5, 0.1]), 1);
        let s = Tensor::full(&[1, 5], 0.2f32);
        assert_eq!(classification_accuracy(&s, &[0]).unwrap(), 1.0);
    }

    #[test]
    fn random_labels_hit_chance() {
        let mut rng = rng_from(3);
        let n = 40_000;
        let s = Tensor::from_fn(&[n, 40], |_| rng.random::<f32>());
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..40)).collect();
        let acc = classification_accuracy(&s, &labels).unwrap();
        // binomial sd at p = 1/40 is about 0.00078
        assert!((acc - 0.025).abs() < 0.004, "{acc}");
    }

    #[test]
    fn history_csv_header() {
        let h = History {
            epochs: vec![EpochRecord { epoch: 1, train_loss: 1.5, train_acc: 0.25, val_loss: 2.0, val_acc: 0.5, lr: 0.001 }],
        };
        let csv = h.to_csv().unwrap();
        assert_eq!(csv, "epoch,train_loss,train_acc,val_loss,val_acc,lr\n1,1.5,0.25,2.0,0.5,0.001\n");
    }
}
