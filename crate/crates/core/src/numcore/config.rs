use serde::{Deserialize, Serialize};

use super::sched::SchedulerKind;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    Hinge,
}

/// Optimization settings shared by both training loops.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub scheduler: SchedulerKind,
    pub loss: LossKind,
    pub seed: u64,
}

impl TrainConfig {
    /// Batch 64, Adam at 1e-3, halve-on-plateau (patience 3, floor 1e-6).
    pub fn eegnet_default() -> Self {
        TrainConfig {
            batch_size: 64,
            learning_rate: 1e-3,
            epochs: 20,
            scheduler: SchedulerKind::Plateau {
                factor: 0.5,
                patience: 3,
                min_lr: 1e-6,
            },
            loss: LossKind::CrossEntropy,
            seed: 0,
        }
    }

    /// Batch 128, Adam at 1e-3, cosine annealing over 3 epochs.
    pub fn charrnn_default() -> Self {
        TrainConfig {
            batch_size: 128,
            learning_rate: 1e-3,
            epochs: 3,
            scheduler: SchedulerKind::Cosine { t_max: 3.0 },
            loss: LossKind::CrossEntropy,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        match self.scheduler {
            SchedulerKind::Plateau { factor, min_lr, .. } => {
                if !(factor > 0.0 && factor < 1.0) {
                    return Err(Error::Config(format!("plateau factor {factor} outside (0, 1)")));
                }
                if min_lr > self.learning_rate {
                    return Err(Error::Config("min_lr exceeds learning_rate".into()));
                }
            }
            SchedulerKind::Cosine { t_max } => {
                if !(t_max > 0.0) {
                    return Err(Error::Config("cosine t_max must be positive".into()));
                }
            }
        }
        Ok(())
    }
}

/// One-hot class label.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LabelOneHot {
    class: usize,
    classes: usize,
}

impl LabelOneHot {
    pub fn new(class: usize, classes: usize) -> Result<Self> {
        if class >= classes {
            return Err(Error::param(format!("class {class} outside {classes} classes")));
        }
        Ok(LabelOneHot { class, classes })
    }

    pub fn index(self) -> usize {
        self.class
    }

    pub fn classes(self) -> usize {
        self.classes
    }

    pub fn to_dense(self) -> Vec<f32> {
        let mut v = vec![0.0; self.classes];
        v[self.class] = 1.0;
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::eegnet_default().validate().unwrap();
        TrainConfig::charrnn_default().validate().unwrap();
        let mut bad = TrainConfig::eegnet_default();
        bad.batch_size = 0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn one_hot_has_single_position() {
        let l = LabelOneHot::new(3, 40).unwrap();
        let d = l.to_dense();
        assert_eq!(d.iter().filter(|&&v| v == 1.0).count(), 1);
        assert_eq!(d[3], 1.0);
        assert!(LabelOneHot::new(40, 40).is_err());
    }
}
