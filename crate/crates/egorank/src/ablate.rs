//! Ablation matrix: trains a list of model/training variants across seeds
//! and collects per-slice metrics.

use crate::config::{ModelConfig, TrainConfig, TrainMode};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::scene::{Dataset, Scene};
use crate::trainer::{evaluate, train_with_flags, TrainerFlags};

#[derive(Clone, Debug)]
pub struct AblationConfig {
    pub name: String,
    pub use_intention: bool,
    pub use_relation_graph: bool,
    pub use_auxiliary: bool,
    pub use_ranking_pseudo: bool,
    pub use_loss_weighting: bool,
    pub mode: TrainMode,
}

impl AblationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mode == TrainMode::Supervised && (self.use_ranking_pseudo || self.use_loss_weighting) {
            return Err(Error::InvalidConfig(format!(
                "config {}: pseudo-label flags apply only to semi-supervised mode",
                self.name
            )));
        }
        Ok(())
    }

    fn supervised(name: &str, intention: bool, graph: bool, aux: bool) -> Self {
        Self {
            name: name.into(),
            use_intention: intention,
            use_relation_graph: graph,
            use_auxiliary: aux,
            use_ranking_pseudo: false,
            use_loss_weighting: false,
            mode: TrainMode::Supervised,
        }
    }

    fn ssl(name: &str, aux: bool, ranking: bool, weighting: bool) -> Self {
        Self {
            name: name.into(),
            use_intention: true,
            use_relation_graph: true,
            use_auxiliary: aux,
            use_ranking_pseudo: ranking,
            use_loss_weighting: weighting,
            mode: TrainMode::Ssl,
        }
    }

    /// The eight-row ablation matrix: four supervised variants and four
    /// semi-supervised ones.
    pub fn standard_matrix() -> Vec<AblationConfig> {
        vec![
            Self::supervised("S-1", true, false, false),
            Self::supervised("S-2", false, true, false),
            Self::supervised("S-3", true, true, false),
            Self::supervised("S", true, true, true),
            Self::ssl("SS-1", false, true, false),
            Self::ssl("SS-2", false, false, true),
            Self::ssl("SS-3", false, true, true),
            Self::ssl("SS", true, true, true),
        ]
    }
}

pub struct AblationReport {
    /// One report per (config, seed), config-major.
    pub reports: Vec<MetricsReport>,
}

impl AblationReport {
    pub fn long_csv(&self) -> String {
        let mut out = String::from(MetricsReport::csv_header());
        out.push('\n');
        for r in &self.reports {
            out.push_str(&r.csv_rows());
        }
        out
    }

    fn mean_std(&self, config: &str, slice: &str, f1: bool) -> Option<(f64, f64)> {
        let vals: Vec<f64> = self
            .reports
            .iter()
            .filter(|r| r.config == config)
            .filter_map(|r| r.slice(slice))
            .map(|s| if f1 { s.f1 } else { s.accuracy })
            .collect();
        if vals.is_empty() {
            return None;
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        Some((mean, var.sqrt()))
    }

    /// Rows are slice/metric pairs, columns are configs, cells mean + std
    /// across seeds.
    pub fn wide_csv(&self) -> String {
        let mut configs: Vec<String> = Vec::new();
        for r in &self.reports {
            if !configs.contains(&r.config) {
                configs.push(r.config.clone());
            }
        }
        let mut out = String::from("slice,metric");
        for c in &configs {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for slice in ["left", "forward", "right", "all"] {
            for (metric, is_f1) in [("accuracy", false), ("f1", true)] {
                out.push_str(&format!("{slice},{metric}"));
                for c in &configs {
                    match self.mean_std(c, slice, is_f1) {
                        Some((m, s)) => out.push_str(&format!(",{m:.2}±{s:.2}")),
                        None => out.push_str(","),
                    }
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn mean_accuracy(&self, config: &str) -> Option<f64> {
        self.mean_std(config, "all", false).map(|(m, _)| m)
    }

    pub fn mean_f1(&self, config: &str) -> Option<f64> {
        self.mean_std(config, "all", true).map(|(m, _)| m)
    }
}

/// Trains every config for every seed and evaluates on the test scenes.
pub fn run_ablation(
    train_scenes: &[Scene],
    test_scenes: &[Scene],
    unlabeled: &[Scene],
    configs: &[AblationConfig],
    seeds: &[u64],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<AblationReport> {
    if train_scenes.is_empty() || test_scenes.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for c in configs {
        c.validate()?;
        if c.mode == TrainMode::Ssl && unlabeled.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "config {} is semi-supervised but no unlabeled scenes were given",
                c.name
            )));
        }
    }
    let sup_data = Dataset { labeled: train_scenes.to_vec(), unlabeled: Vec::new() };
    let ssl_data = Dataset { labeled: train_scenes.to_vec(), unlabeled: unlabeled.to_vec() };
    let test_refs: Vec<&Scene> = test_scenes.iter().collect();

    let mut reports = Vec::with_capacity(configs.len() * seeds.len());
    for config in configs {
        for &seed in seeds {
            let mcfg = ModelConfig {
                use_intention: config.use_intention,
                use_relation_graph: config.use_relation_graph,
                ..model_cfg.clone()
            };
            let tcfg = TrainConfig {
                mode: config.mode,
                seed,
                lambda: if config.use_auxiliary { train_cfg.lambda } else { 0.0 },
                ..train_cfg.clone()
            };
            let flags = TrainerFlags {
                use_ranking_pseudo: config.use_ranking_pseudo,
                use_loss_weighting: config.use_loss_weighting,
            };
            let data = if config.mode == TrainMode::Ssl { &ssl_data } else { &sup_data };
            let outcome = train_with_flags(data, &mcfg, &tcfg, flags)?;
            reports.push(evaluate(&outcome.model, &test_refs, &config.name, seed)?);
        }
    }
    Ok(AblationReport { reports })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_has_eight_rows_with_expected_flags() {
        let m = AblationConfig::standard_matrix();
        assert_eq!(m.len(), 8);
        for c in &m {
            c.validate().unwrap();
        }
        let s1 = &m[0];
        assert!(s1.use_intention && !s1.use_relation_graph && !s1.use_auxiliary);
        let s2 = &m[1];
        assert!(!s2.use_intention && s2.use_relation_graph);
        let ss = &m[7];
        assert!(ss.use_auxiliary && ss.use_ranking_pseudo && ss.use_loss_weighting);
        assert_eq!(ss.mode, TrainMode::Ssl);
        let ss2 = &m[5];
        assert!(!ss2.use_ranking_pseudo && ss2.use_loss_weighting);
    }

    #[test]
    fn supervised_config_rejects_pseudo_flags() {
        let bad = AblationConfig {
            name: "bad".into(),
            use_intention: true,
            use_relation_graph: true,
            use_auxiliary: false,
            use_ranking_pseudo: true,
            use_loss_weighting: false,
            mode: TrainMode::Supervised,
        };
        assert!(bad.validate().is_err());
    }
}
