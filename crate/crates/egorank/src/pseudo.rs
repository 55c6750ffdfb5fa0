//! Two-stage ranking pseudo-label generation and the object/case weights
//! applied to unlabeled losses.
//!
//! Stage 1 labels scores above `alpha1` important and below `1 - alpha1`
//! unimportant. Stage 2 divides the remaining raw scores by their maximum and
//! labels the ratios above `alpha2` important. Both comparisons are strict,
//! so the maximum unresolved score is always promoted for `alpha2 < 1`.

use crate::error::{Error, Result};

/// Binary pseudo-labels for one scene's scores.
pub fn generate_pseudo_labels(scores: &[f64], alpha1: f64, alpha2: f64) -> Result<Vec<u8>> {
    if scores.is_empty() {
        return Err(Error::Invalid("cannot pseudo-label an empty score list".into()));
    }
    let mut labels = vec![0u8; scores.len()];
    let mut unresolved = Vec::new();
    for (i, &s) in scores.iter().enumerate() {
        if s > alpha1 {
            labels[i] = 1;
        } else if s < 1.0 - alpha1 {
            labels[i] = 0;
        } else {
            unresolved.push(i);
        }
    }
    if unresolved.is_empty() {
        return Ok(labels);
    }
    let max = unresolved.iter().map(|&i| scores[i]).fold(f64::NEG_INFINITY, f64::max);
    if max <= 0.0 {
        // Degenerate: ratios undefined, every unresolved object stays 0.
        return Ok(labels);
    }
    for &i in &unresolved {
        labels[i] = ((scores[i] / max) > alpha2) as u8;
    }
    Ok(labels)
}

/// Eq-style object weights: softmax of the raw scores.
pub fn object_weights(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
    let denom: f64 = exps.iter().sum();
    exps.iter().map(|e| e / denom).collect()
}

fn entropy(w: &[f64]) -> f64 {
    w.iter().map(|&p| if p > 0.0 { -p * p.ln() } else { 0.0 }).sum()
}

/// Case weight `1 - H(w)/H(uniform)`: zero for uniform weights, one as the
/// distribution degenerates. A single-object scene gets full weight since the
/// uniform entropy vanishes there.
pub fn case_weight(w: &[f64]) -> f64 {
    let n = w.len();
    if n <= 1 {
        return 1.0;
    }
    let h_max = (n as f64).ln();
    (1.0 - entropy(w) / h_max).clamp(0.0, 1.0)
}

/// Frozen pseudo-label state for one unlabeled scene: labels, object weights
/// and the case weight, all treated as constants by the loss.
#[derive(Clone, Debug)]
pub struct PseudoLabeledScene {
    pub scene_index: usize,
    pub labels: Vec<u8>,
    pub weights: Vec<f64>,
    pub case_weight: f64,
}

impl PseudoLabeledScene {
    pub fn from_scores(scene_index: usize, scores: &[f64], alpha1: f64, alpha2: f64) -> Result<Self> {
        let labels = generate_pseudo_labels(scores, alpha1, alpha2)?;
        let weights = object_weights(scores);
        let case_weight = case_weight(&weights);
        Ok(Self { scene_index, labels, weights, case_weight })
    }

    /// Variant with the ranking stage disabled (plain 0.5 thresholding) or
    /// the loss weighting disabled (uniform weights, full case weight).
    pub fn from_scores_ablated(
        scene_index: usize,
        scores: &[f64],
        alpha1: f64,
        alpha2: f64,
        use_ranking: bool,
        use_weighting: bool,
    ) -> Result<Self> {
        let labels = if use_ranking {
            generate_pseudo_labels(scores, alpha1, alpha2)?
        } else {
            if scores.is_empty() {
                return Err(Error::Invalid("cannot pseudo-label an empty score list".into()));
            }
            scores.iter().map(|&s| (s > 0.5) as u8).collect()
        };
        let (weights, case_weight) = if use_weighting {
            let w = object_weights(scores);
            let e = case_weight(&w);
            (w, e)
        } else {
            (vec![1.0 / scores.len() as f64; scores.len()], 1.0)
        };
        Ok(Self { scene_index, labels, weights, case_weight })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_one_resolves_confident_scores() {
        assert_eq!(generate_pseudo_labels(&[0.9, 0.1], 0.8, 0.8).unwrap(), vec![1, 0]);
    }

    #[test]
    fn stage_two_ranks_unresolved_scores() {
        // Unresolved {0.5, 0.6}: ratios {0.833, 1.0}, both above 0.8.
        assert_eq!(
            generate_pseudo_labels(&[0.9, 0.1, 0.5, 0.6], 0.8, 0.8).unwrap(),
            vec![1, 0, 1, 1]
        );
    }

    #[test]
    fn stage_two_always_promotes_the_max() {
        // Ratios {1.0, 0.5}: only the max clears 0.8.
        assert_eq!(generate_pseudo_labels(&[0.5, 0.25], 0.8, 0.8).unwrap(), vec![1, 0]);
    }

    #[test]
    fn empty_scores_error() {
        assert!(generate_pseudo_labels(&[], 0.8, 0.8).is_err());
    }

    #[test]
    fn zero_max_degenerate_labels_all_zero() {
        assert_eq!(generate_pseudo_labels(&[0.0, 0.0], 0.1, 0.8).unwrap(), vec![0, 0]);
    }

    #[test]
    fn object_weights_from_closed_form() {
        let w = object_weights(&[1.0, 0.0]);
        let e = std::f64::consts::E;
        assert!((w[0] - e / (e + 1.0)).abs() < 1e-12);
        assert!((w[1] - 1.0 / (e + 1.0)).abs() < 1e-12);
        let sum: f64 = object_weights(&[0.3, 0.3, 0.9, 0.01]).iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_scores_give_uniform_weights() {
        let w = object_weights(&[0.4; 5]);
        for &x in &w {
            assert!((x - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn case_weight_bounds() {
        for n in 2..=20 {
            let uniform = vec![1.0 / n as f64; n];
            assert!(case_weight(&uniform).abs() < 1e-12, "n={n}");
        }
        let degenerate = [1.0 - 1e-9, 1e-9];
        assert!(case_weight(&degenerate) > 0.999_999);
        assert_eq!(case_weight(&[1.0]), 1.0);
    }

    #[test]
    fn case_weight_against_direct_entropy() {
        let w = object_weights(&[1.0, 0.0]);
        let h: f64 = -(w[0] * w[0].ln() + w[1] * w[1].ln());
        let expect = 1.0 - h / 2f64.ln();
        assert!((case_weight(&w) - expect).abs() < 1e-12);
    }

    #[test]
    fn ablated_variant_uses_plain_threshold_and_uniform_weights() {
        let p = PseudoLabeledScene::from_scores_ablated(0, &[0.6, 0.4], 0.8, 0.8, false, false).unwrap();
        assert_eq!(p.labels, vec![1, 0]);
        assert_eq!(p.weights, vec![0.5, 0.5]);
        assert_eq!(p.case_weight, 1.0);
    }
}
