//! Pseudo-label threshold sweep: trains the semi-supervised model per
//! (alpha1, alpha2) grid cell and reports test metrics.

use crate::config::{ModelConfig, TrainConfig, TrainMode};
use crate::error::{Error, Result};
use crate::scene::{Dataset, Scene};
use crate::trainer::{evaluate, train};

#[derive(Clone, Debug)]
pub struct SweepCell {
    pub alpha1: f64,
    pub alpha2: f64,
    pub per_seed: Vec<(u64, f64, f64)>,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub f1_mean: f64,
    pub f1_std: f64,
}

pub struct SweepReport {
    pub cells: Vec<SweepCell>,
}

impl SweepReport {
    pub fn grid_csv(&self) -> String {
        let mut out =
            String::from("alpha1,alpha2,accuracy_mean,accuracy_std,f1_mean,f1_std,seeds\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                c.alpha1, c.alpha2, c.accuracy_mean, c.accuracy_std, c.f1_mean, c.f1_std,
                c.per_seed.len()
            ));
        }
        out
    }

    pub fn per_seed_csv(&self) -> String {
        let mut out = String::from("alpha1,alpha2,seed,accuracy,f1\n");
        for c in &self.cells {
            for (seed, acc, f1) in &c.per_seed {
                out.push_str(&format!("{},{},{},{},{}\n", c.alpha1, c.alpha2, seed, acc, f1));
            }
        }
        out
    }

    /// Mean F1 over every cell in one alpha1 column.
    pub fn column_mean_f1(&self, alpha1: f64) -> Option<f64> {
        let vals: Vec<f64> =
            self.cells.iter().filter(|c| c.alpha1 == alpha1).map(|c| c.f1_mean).collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }
}

pub fn default_grid() -> (Vec<f64>, Vec<f64>) {
    let axis = vec![0.5, 0.6, 0.7, 0.8, 0.9];
    (axis.clone(), axis)
}

pub fn sweep_thresholds(
    train_scenes: &[Scene],
    test_scenes: &[Scene],
    unlabeled: &[Scene],
    alpha1_values: &[f64],
    alpha2_values: &[f64],
    seeds: &[u64],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<SweepReport> {
    if unlabeled.is_empty() {
        return Err(Error::InvalidConfig("threshold sweep needs unlabeled scenes".into()));
    }
    for &a1 in alpha1_values {
        if !(0.5..1.0).contains(&a1) {
            return Err(Error::InvalidConfig(format!("alpha1 {a1} not in [0.5, 1)")));
        }
    }
    for &a2 in alpha2_values {
        if !(0.0..=1.0).contains(&a2) || a2 == 0.0 {
            return Err(Error::InvalidConfig(format!("alpha2 {a2} not in (0, 1]")));
        }
    }
    let data = Dataset { labeled: train_scenes.to_vec(), unlabeled: unlabeled.to_vec() };
    let test_refs: Vec<&Scene> = test_scenes.iter().collect();
    let mut cells = Vec::with_capacity(alpha1_values.len() * alpha2_values.len());
    for &a1 in alpha1_values {
        for &a2 in alpha2_values {
            let mut per_seed = Vec::with_capacity(seeds.len());
            for &seed in seeds {
                let tcfg = TrainConfig {
                    mode: TrainMode::Ssl,
                    alpha1: a1,
                    alpha2: a2,
                    seed,
                    ..train_cfg.clone()
                };
                let outcome = train(&data, model_cfg, &tcfg)?;
                let name = format!("ssl-a1={a1}-a2={a2}");
                let report = evaluate(&outcome.model, &test_refs, &name, seed)?;
                let overall = report.overall();
                per_seed.push((seed, overall.accuracy, overall.f1));
            }
            let n = per_seed.len() as f64;
            let acc_mean = per_seed.iter().map(|r| r.1).sum::<f64>() / n;
            let f1_mean = per_seed.iter().map(|r| r.2).sum::<f64>() / n;
            let acc_std =
                (per_seed.iter().map(|r| (r.1 - acc_mean).powi(2)).sum::<f64>() / n).sqrt();
            let f1_std = (per_seed.iter().map(|r| (r.2 - f1_mean).powi(2)).sum::<f64>() / n).sqrt();
            cells.push(SweepCell {
                alpha1: a1,
                alpha2: a2,
                per_seed,
                accuracy_mean: acc_mean,
                accuracy_std: acc_std,
                f1_mean,
                f1_std,
            });
        }
    }
    Ok(SweepReport { cells })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_bounds_are_enforced() {
        let err = sweep_thresholds(
            &[],
            &[],
            &[],
            &[0.4],
            &[0.8],
            &[0],
            &ModelConfig::default(),
            &TrainConfig::default(),
        );
        assert!(err.is_err());
    }

    #[test]
    fn default_grid_covers_the_reported_range() {
        let (a1, a2) = default_grid();
        assert_eq!(a1.len() * a2.len(), 25);
        assert_eq!(a1[0], 0.5);
        assert_eq!(*a1.last().unwrap(), 0.9);
    }
}
