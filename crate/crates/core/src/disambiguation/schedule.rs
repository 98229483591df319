use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Momenta, temperature, loss weight and the epoch-dependent learning rate
/// and label momentum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedules {
    /// Key encoder momentum.
    pub encoder_momentum: f64,
    /// Prototype momentum.
    pub prototype_momentum: f64,
    /// Soft-label momentum held for the first `label_hold_epochs`.
    pub label_momentum: f64,
    /// Soft-label momentum reached at the final epoch.
    pub label_momentum_final: f64,
    pub label_hold_epochs: usize,
    pub temperature: f64,
    /// Weight of the contrastive term.
    pub contrastive_weight: f64,
    pub lr: f64,
    /// `lr(E) / lr(0)`.
    pub lr_final_ratio: f64,
    pub epochs: usize,
}

impl Default for Schedules {
    fn default() -> Self {
        Schedules {
            encoder_momentum: 0.999,
            prototype_momentum: 0.99,
            label_momentum: 0.99,
            label_momentum_final: 0.5,
            label_hold_epochs: 10,
            temperature: 0.07,
            contrastive_weight: 0.5,
            lr: 0.02,
            lr_final_ratio: 0.05,
            epochs: 50,
        }
    }
}

impl Schedules {
    pub fn validate(&self) -> Result<()> {
        let momenta = [
            self.encoder_momentum,
            self.prototype_momentum,
            self.label_momentum,
            self.label_momentum_final,
        ];
        if momenta.iter().any(|m| !(0.0..=1.0).contains(m)) {
            return Err(CoreError::Config("momenta must lie in [0, 1]".into()));
        }
        if !(self.lr > 0.0) || !(self.lr_final_ratio > 0.0) || !(self.temperature > 0.0) {
            return Err(CoreError::Config(
                "lr, lr_final_ratio and temperature must be positive".into(),
            ));
        }
        if self.epochs == 0 || self.contrastive_weight < 0.0 {
            return Err(CoreError::Config(
                "epochs must be positive and contrastive_weight non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Per-epoch decay factor `gamma = ratio^(1/E)`.
    pub fn lr_decay(&self) -> f64 {
        self.lr_final_ratio.powf(1.0 / self.epochs as f64)
    }

    /// Learning rate of epoch `e` (1-based): `lr * gamma^e`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay().powi(epoch as i32)
    }

    /// Soft-label momentum of epoch `e` (1-based): constant during the hold,
    /// then a quadratic decay to the final value at `e = E`.
    pub fn label_momentum_at(&self, epoch: usize) -> f64 {
        let hold = self.label_hold_epochs;
        if epoch <= hold || self.epochs <= hold {
            return self.label_momentum;
        }
        let u = ((epoch - hold) as f64 / (self.epochs - hold) as f64).min(1.0);
        self.label_momentum - (self.label_momentum - self.label_momentum_final) * u * u
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_lr_runs_from_02_to_0001() {
        let s = Schedules::default();
        assert!((s.lr_decay() - 0.941_845).abs() < 1e-6);
        assert!((s.lr_at(50) - 0.001).abs() < 1e-12);
        assert!((s.lr_at(1) - 0.02 * s.lr_decay()).abs() < 1e-15);
    }

    #[test]
    fn label_momentum_holds_then_decays() {
        let s = Schedules::default();
        assert_eq!(s.label_momentum_at(1), 0.99);
        assert_eq!(s.label_momentum_at(10), 0.99);
        assert!((s.label_momentum_at(30) - (0.99 - 0.49 * 0.25)).abs() < 1e-12);
        assert!((s.label_momentum_at(50) - 0.5).abs() < 1e-12);
        let mut prev = 1.0;
        for e in 1..=50 {
            let m = s.label_momentum_at(e);
            assert!(m <= prev);
            prev = m;
        }
    }
}
