//! Learning-rate schedules.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Halve-on-plateau schedule monitoring validation loss.
///
/// `wait` counts consecutive epochs without a strict improvement; when it
/// reaches `patience` the rate is multiplied by `factor` (floored at
/// `min_lr`) and the counter restarts.
#[derive(Clone, Debug, PartialEq)]
pub struct Plateau {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    lr: f64,
    best: f64,
    wait: usize,
}

impl Plateau {
    pub fn new(lr: f64, factor: f64, patience: usize, min_lr: f64) -> Result<Self> {
        if !(factor > 0.0 && factor < 1.0) {
            return Err(Error::param(format!("plateau factor {factor} outside (0, 1)")));
        }
        if !(lr > 0.0) || min_lr > lr {
            return Err(Error::param(format!("need 0 < min_lr <= lr, got {min_lr} / {lr}")));
        }
        Ok(Plateau {
            factor,
            patience,
            min_lr,
            lr,
            best: f64::INFINITY,
            wait: 0,
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Feed one epoch's validation loss; returns the rate for the next epoch.
    pub fn observe(&mut self, val_loss: f64) -> f64 {
        if val_loss < self.best {
            self.best = val_loss;
            self.wait = 0;
        } else {
            self.wait += 1;
            if self.wait >= self.patience {
                self.lr = (self.lr * self.factor).max(self.min_lr);
                self.wait = 0;
            }
        }
        self.lr
    }
}

/// `lr0 * (1 + cos(pi * epoch / t_max)) / 2`.
pub fn cosine_lr(epoch: f64, t_max: f64, lr0: f64) -> Result<f64> {
    if !(t_max > 0.0) {
        return Err(Error::param(format!("cosine T_max must be positive, got {t_max}")));
    }
    if !(0.0..=t_max).contains(&epoch) {
        return Err(Error::param(format!("epoch {epoch} outside [0, {t_max}]")));
    }
    Ok(lr0 * (1.0 + (PI * epoch / t_max).cos()) / 2.0)
}

/// Serializable schedule choice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SchedulerKind {
    Plateau {
        factor: f64,
        patience: usize,
        min_lr: f64,
    },
    Cosine {
        t_max: f64,
    },
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decreasing_losses_keep_lr() {
        let mut p = Plateau::new(1e-3, 0.5, 3, 1e-6).unwrap();
        for l in [1.0, 0.9, 0.8, 0.7, 0.6] {
            assert_eq!(p.observe(l), 1e-3);
        }
    }

    #[test]
    fn four_flat_epochs_halve_once() {
        let mut p = Plateau::new(1e-3, 0.5, 3, 1e-6).unwrap();
        let lrs: Vec<f64> = (0..4).map(|_| p.observe(1.0)).collect();
        assert_eq!(lrs, vec![1e-3, 1e-3, 1e-3, 5e-4]);
    }

    #[test]
    fn floor_holds() {
        let mut p = Plateau::new(1e-6, 0.5, 3, 1e-6).unwrap();
        for _ in 0..20 {
            assert_eq!(p.observe(1.0), 1e-6);
        }
    }

    #[test]
    fn cosine_endpoints_and_midpoint() {
        assert_eq!(cosine_lr(0.0, 10.0, 0.1).unwrap(), 0.1);
        assert!(cosine_lr(10.0, 10.0, 0.1).unwrap().abs() < 1e-17);
        assert!((cosine_lr(5.0, 10.0, 0.1).unwrap() - 0.05).abs() < 1e-15);
        assert!(cosine_lr(1.0, 0.0, 0.1).is_err());
    }

    #[test]
    fn invalid_plateau_params() {
        assert!(Plateau::new(1e-3, 1.0, 3, 1e-6).is_err());
        assert!(Plateau::new(1e-3, 0.5, 3, 1e-2).is_err());
    }
}
