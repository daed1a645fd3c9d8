use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlateauConfig {
    pub factor: f64,
    pub patience: usize,
    pub min_delta: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        PlateauConfig { factor: 0.1, patience: 10, min_delta: 0.0 }
    }
}

impl PlateauConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.factor > 0.0 && self.factor < 1.0) {
            return Err(Error::Config(format!("scheduler factor {} not in (0, 1)", self.factor)));
        }
        if self.patience == 0 {
            return Err(Error::Config("scheduler patience must be >= 1".into()));
        }
        if !(self.min_delta >= 0.0) {
            return Err(Error::Config(format!("min_delta {} must be >= 0", self.min_delta)));
        }
        Ok(())
    }
}

/// Reduce-on-plateau driven by validation loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    pub config: PlateauConfig,
    pub lr: f64,
    pub best: f64,
    pub epochs_since_improvement: usize,
}

impl Plateau {
    pub fn new(lr: f64, config: PlateauConfig) -> Self {
        Plateau { config, lr, best: f64::INFINITY, epochs_since_improvement: 0 }
    }

    /// Records one validation loss and returns the learning rate for the next epoch.
    pub fn step(&mut self, val_loss: f64) -> f64 {
        if val_loss < self.best - self.config.min_delta {
            self.best = val_loss;
            self.epochs_since_improvement = 0;
        } else {
            self.epochs_since_improvement += 1;
            if self.epochs_since_improvement > self.config.patience {
                self.lr *= self.config.factor;
                self.epochs_since_improvement = 0;
            }
        }
        self.lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(losses: &[f64]) -> Vec<f64> {
        let mut s = Plateau::new(1e-3, PlateauConfig::default());
        losses.iter().map(|&l| s.step(l)).collect()
    }

    #[test]
    fn decreasing_losses_keep_the_rate() {
        let losses: Vec<f64> = (0..30).map(|i| 1.0 / (i + 1) as f64).collect();
        assert!(run(&losses).iter().all(|&lr| lr == 1e-3));
    }

    #[test]
    fn eleven_flat_epochs_reduce_once() {
        let mut losses = vec![1.0, 0.9];
        losses.extend([0.9; 11]);
        let lrs = run(&losses);
        // epochs 3..=12 are the ten tolerated non-improvements; the 11th triggers
        assert!(lrs[..12].iter().all(|&lr| lr == 1e-3));
        assert_eq!(lrs[12], 1e-3 * 0.1);
        losses.extend([0.95; 11]);
        let lrs = run(&losses);
        assert_eq!(lrs[23], 1e-3 * 0.1 * 0.1);
        assert!(lrs[13..23].iter().all(|&lr| lr == 1e-4));
    }

    #[test]
    fn improvement_resets_the_counter() {
        let mut losses = vec![1.0];
        losses.extend([1.0; 10]);
        losses.push(0.5);
        losses.extend([0.7; 10]);
        let lrs = run(&losses);
        assert!(lrs.iter().all(|&lr| lr == 1e-3));
        let mut s = Plateau::new(1e-3, PlateauConfig::default());
        s.step(1.0);
        s.step(2.0);
        assert_eq!(s.epochs_since_improvement, 1);
        s.step(0.5);
        assert_eq!(s.epochs_since_improvement, 0);
    }

    #[test]
    fn rate_never_increases() {
        let losses: Vec<f64> = (0..200).map(|i| ((i * 7919) % 13) as f64).collect();
        let lrs = run(&losses);
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn validation() {
        assert!(PlateauConfig { factor: 1.0, ..PlateauConfig::default() }.validate().is_err());
        assert!(PlateauConfig { patience: 0, ..PlateauConfig::default() }.validate().is_err());
        assert!(PlateauConfig::default().validate().is_ok());
    }
}
