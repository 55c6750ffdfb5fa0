//! JSON configuration: `generator`, `model` and `train` sections.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::GenConfig;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub feat_dim: usize,
    pub lstm_hidden: usize,
    pub mlp_hidden: usize,
    pub cls_hidden: usize,
    pub aux_hidden_a: usize,
    pub aux_hidden_b: usize,
    pub mp_rounds: usize,
    pub tau: f64,
    pub t_history: usize,
    pub t_future: usize,
    pub d_appearance: usize,
    pub d_depthsem: usize,
    pub use_intention: bool,
    pub use_relation_graph: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            feat_dim: 128,
            lstm_hidden: 128,
            mlp_hidden: 128,
            cls_hidden: 256,
            aux_hidden_a: 64,
            aux_hidden_b: 256,
            mp_rounds: 2,
            tau: 0.1,
            t_history: 8,
            t_future: 4,
            d_appearance: 16,
            d_depthsem: 8,
            use_intention: true,
            use_relation_graph: true,
        }
    }
}

impl ModelConfig {
    /// Sizes small enough that the whole experiment suite runs on a
    /// workstation in minutes.
    pub fn desk() -> Self {
        Self {
            feat_dim: 24,
            lstm_hidden: 24,
            mlp_hidden: 24,
            cls_hidden: 48,
            aux_hidden_a: 16,
            aux_hidden_b: 32,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tau <= 0.0 {
            return Err(Error::InvalidConfig(format!("tau {} must be positive", self.tau)));
        }
        if self.feat_dim == 0 || self.lstm_hidden == 0 || self.mlp_hidden == 0 {
            return Err(Error::InvalidConfig("model dims must be positive".into()));
        }
        if self.mp_rounds == 0 && self.use_relation_graph {
            return Err(Error::InvalidConfig("mp_rounds must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaShape {
    Linear,
    Exponential,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct GammaSchedule {
    pub init: f64,
    pub max: f64,
    /// Ramp length in epochs.
    pub ramp: f64,
    pub shape: GammaShape,
}

impl Default for GammaSchedule {
    fn default() -> Self {
        Self { init: 0.001, max: 1.0, ramp: 50.0, shape: GammaShape::Exponential }
    }
}

impl GammaSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.init < 0.0 || self.max < self.init {
            return Err(Error::InvalidConfig(format!(
                "gamma schedule needs 0 <= init <= max, got init {} max {}",
                self.init, self.max
            )));
        }
        if self.shape == GammaShape::Exponential && self.init <= 0.0 {
            return Err(Error::InvalidConfig(
                "exponential gamma schedule requires init > 0; use the linear shape to start at 0".into(),
            ));
        }
        if self.ramp <= 0.0 {
            return Err(Error::InvalidConfig("gamma ramp must be positive".into()));
        }
        Ok(())
    }

    /// Weight at a global iteration count, given the ramp length in
    /// iterations. Monotone non-decreasing, clamped at `max`.
    pub fn at(&self, iteration: u64, ramp_iters: u64) -> f64 {
        let ramp = ramp_iters.max(1) as f64;
        let t = iteration as f64;
        let g = match self.shape {
            GammaShape::Linear => self.init + (self.max - self.init) * (t / ramp),
            GammaShape::Exponential => {
                let r = (self.max / self.init).powf(1.0 / ramp);
                self.init * r.powf(t)
            }
        };
        g.min(self.max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Supervised,
    Ssl,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PseudoRefresh {
    /// Regenerate pseudo-labels from current scores at every epoch start.
    PerEpoch,
    /// Generate once when the unlabeled loss first activates.
    Frozen,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub lambda: f64,
    pub beta: f64,
    pub gamma_schedule: GammaSchedule,
    pub seed: u64,
    pub mode: TrainMode,
    pub patience: usize,
    pub val_fraction: f64,
    pub pseudo_refresh: PseudoRefresh,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 100,
            lr: 1e-4,
            alpha1: 0.8,
            alpha2: 0.8,
            lambda: 0.5,
            beta: 1.0,
            gamma_schedule: GammaSchedule::default(),
            seed: 0,
            mode: TrainMode::Supervised,
            patience: 10,
            val_fraction: 0.15,
            pseudo_refresh: PseudoRefresh::PerEpoch,
        }
    }
}

impl TrainConfig {
    /// Short schedule sized for the desk-scale benchmark.
    pub fn desk() -> Self {
        Self {
            epochs: 14,
            lr: 2e-3,
            patience: 6,
            gamma_schedule: GammaSchedule { ramp: 5.0, ..GammaSchedule::default() },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidConfig("batch_size and epochs must be positive".into()));
        }
        if self.lr <= 0.0 {
            return Err(Error::InvalidConfig(format!("lr {} must be positive", self.lr)));
        }
        // alpha1 = 0.5 degenerates to plain thresholding; the sweep includes
        // it as the naive anchor.
        if !(0.5..1.0).contains(&self.alpha1) {
            return Err(Error::InvalidConfig(format!("alpha1 {} not in [0.5, 1)", self.alpha1)));
        }
        if !(0.0..=1.0).contains(&self.alpha2) || self.alpha2 == 0.0 {
            return Err(Error::InvalidConfig(format!("alpha2 {} not in (0, 1]", self.alpha2)));
        }
        if self.lambda < 0.0 || self.beta < 0.0 {
            return Err(Error::InvalidConfig("lambda and beta must be non-negative".into()));
        }
        if !(0.0..0.9).contains(&self.val_fraction) {
            return Err(Error::InvalidConfig(format!("val_fraction {} not in [0, 0.9)", self.val_fraction)));
        }
        self.gamma_schedule.validate()
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AppConfig {
    pub generator: GenConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl AppConfig {
    pub fn desk() -> Self {
        Self { generator: GenConfig::default(), model: ModelConfig::desk(), train: TrainConfig::desk() }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let cfg: AppConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.model.validate()?;
        self.train.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_starts_at_init_and_saturates() {
        let g = GammaSchedule::default();
        assert_eq!(g.at(0, 100), 0.001);
        assert!((g.at(100, 100) - 1.0).abs() < 1e-9);
        assert_eq!(g.at(250, 100), 1.0);
    }

    #[test]
    fn gamma_is_monotone() {
        for shape in [GammaShape::Linear, GammaShape::Exponential] {
            let g = GammaSchedule { shape, ..GammaSchedule::default() };
            let mut prev = 0.0;
            for t in 0..300 {
                let v = g.at(t, 120);
                assert!(v >= prev, "gamma decreased at t={t}");
                prev = v;
            }
        }
    }

    #[test]
    fn exponential_schedule_rejects_zero_init() {
        let g = GammaSchedule { init: 0.0, ..GammaSchedule::default() };
        assert!(g.validate().is_err());
        let lin = GammaSchedule { init: 0.0, shape: GammaShape::Linear, ..GammaSchedule::default() };
        assert!(lin.validate().is_ok());
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = AppConfig::desk();
        let s = serde_json::to_string_pretty(&cfg).unwrap();
        assert!(s.contains("\"lstm_hidden\""));
        assert!(s.contains("\"gamma_schedule\""));
        let back: AppConfig = serde_json::from_str(&s).unwrap();
        back.validate().unwrap();
        assert_eq!(back.model.feat_dim, cfg.model.feat_dim);
    }

    #[test]
    fn partial_config_uses_defaults() {
        let cfg: AppConfig =
            serde_json::from_str(r#"{"train": {"lr": 0.01}, "model": {"tau": 0.5}}"#).unwrap();
        assert_eq!(cfg.train.lr, 0.01);
        assert_eq!(cfg.train.batch_size, 32);
        assert_eq!(cfg.model.tau, 0.5);
        assert_eq!(cfg.model.lstm_hidden, 128);
    }
}
