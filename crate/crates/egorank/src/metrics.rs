//! Binary classification metrics, sliced by ego intention.

use crate::error::{Error, Result};
use crate::scene::Intention;

/// Accuracy and F1 (important = positive class) in percent, per slice.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceMetrics {
    pub slice: String,
    pub accuracy: f64,
    pub f1: f64,
    pub n_scenes: usize,
    pub n_objects: usize,
}

#[derive(Clone, Debug)]
pub struct MetricsReport {
    pub config: String,
    pub seed: u64,
    pub slices: Vec<SliceMetrics>,
}

impl MetricsReport {
    pub fn slice(&self, name: &str) -> Option<&SliceMetrics> {
        self.slices.iter().find(|s| s.slice == name)
    }

    pub fn overall(&self) -> &SliceMetrics {
        self.slice("all").expect("overall slice always present")
    }

    pub fn csv_header() -> &'static str {
        "slice,config,seed,accuracy,f1,n_scenes,n_objects"
    }

    pub fn csv_rows(&self) -> String {
        let mut out = String::new();
        for s in &self.slices {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                s.slice, self.config, self.seed, s.accuracy, s.f1, s.n_scenes, s.n_objects
            ));
        }
        out
    }
}

fn tally(preds: &[Vec<u8>], labels: &[Vec<u8>], pick: &[bool]) -> (usize, usize, usize, usize, usize) {
    let (mut tp, mut fp, mut fne, mut tn, mut scenes) = (0, 0, 0, 0, 0);
    for ((p, l), &keep) in preds.iter().zip(labels).zip(pick) {
        if !keep {
            continue;
        }
        scenes += 1;
        for (&pi, &li) in p.iter().zip(l) {
            match (pi, li) {
                (1, 1) => tp += 1,
                (1, 0) => fp += 1,
                (0, 1) => fne += 1,
                _ => tn += 1,
            }
        }
    }
    (tp, fp, fne, tn, scenes)
}

fn slice_metrics(name: &str, preds: &[Vec<u8>], labels: &[Vec<u8>], pick: &[bool]) -> SliceMetrics {
    let (tp, fp, fne, tn, scenes) = tally(preds, labels, pick);
    let total = tp + fp + fne + tn;
    let accuracy = if total == 0 { 0.0 } else { 100.0 * (tp + tn) as f64 / total as f64 };
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fne == 0 { 0.0 } else { tp as f64 / (tp + fne) as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        100.0 * 2.0 * precision * recall / (precision + recall)
    };
    SliceMetrics { slice: name.to_string(), accuracy, f1, n_scenes: scenes, n_objects: total }
}

/// Object-level accuracy and F1, overall and per intention slice.
pub fn compute_metrics(
    preds: &[Vec<u8>],
    labels: &[Vec<u8>],
    intentions: &[Intention],
    config: &str,
    seed: u64,
) -> Result<MetricsReport> {
    if preds.len() != labels.len() || preds.len() != intentions.len() {
        return Err(Error::Shape {
            op: "compute_metrics",
            detail: format!("{} preds, {} labels, {} intentions", preds.len(), labels.len(), intentions.len()),
        });
    }
    for (i, (p, l)) in preds.iter().zip(labels).enumerate() {
        if p.len() != l.len() {
            return Err(Error::Shape {
                op: "compute_metrics",
                detail: format!("scene {i}: {} preds vs {} labels", p.len(), l.len()),
            });
        }
    }
    let all = vec![true; preds.len()];
    let mut slices = vec![slice_metrics("all", preds, labels, &all)];
    for intent in Intention::ALL {
        let pick: Vec<bool> = intentions.iter().map(|&i| i == intent).collect();
        slices.push(slice_metrics(intent.name(), preds, labels, &pick));
    }
    Ok(MetricsReport { config: config.to_string(), seed, slices })
}
