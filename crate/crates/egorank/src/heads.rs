//! Importance classifier, Gumbel-softmax importance pooling and the two ego
//! behavior heads (action classifier and trajectory generator).

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::scalar::Scalar;
use crate::tensor::{sorted_sum, Tensor};

/// Scores are clamped into this interval before any logarithm.
pub const SCORE_CLAMP: f64 = 1e-7;

#[derive(Clone, Debug)]
pub struct Heads<S> {
    pub classifier: Mlp<S>,
    pub eac_front: Mlp<S>,
    pub eac_back: Mlp<S>,
    pub etg_front: Mlp<S>,
    pub etg_back: Mlp<S>,
    pub tau: f64,
}

impl<S: Scalar> Heads<S> {
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        rng: &mut ChaCha8Rng,
        o_dim: usize,
        behavior_dim: usize,
        cls_hidden: usize,
        aux_hidden_a: usize,
        aux_hidden_b: usize,
        t_future: usize,
        tau: f64,
    ) -> Self {
        Self {
            classifier: Mlp::init(rng, &[o_dim, cls_hidden, cls_hidden, 1]),
            eac_front: Mlp::init(rng, &[behavior_dim, aux_hidden_a, aux_hidden_a, aux_hidden_a]),
            eac_back: Mlp::init(rng, &[aux_hidden_a, aux_hidden_b, aux_hidden_b, 4]),
            etg_front: Mlp::init(rng, &[behavior_dim, aux_hidden_a, aux_hidden_a, aux_hidden_a]),
            etg_back: Mlp::init(rng, &[aux_hidden_a, aux_hidden_b, aux_hidden_b, 2 * t_future]),
            tau,
        }
    }

    pub fn bind(&self, tape: &mut Tape<S>) -> Self {
        Self {
            classifier: self.classifier.bind(tape),
            eac_front: self.eac_front.bind(tape),
            eac_back: self.eac_back.bind(tape),
            etg_front: self.etg_front.bind(tape),
            etg_back: self.etg_back.bind(tape),
            tau: self.tau,
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<S>)>) {
        self.classifier.visit(&format!("{prefix}.classifier"), out);
        self.eac_front.visit(&format!("{prefix}.eac_front"), out);
        self.eac_back.visit(&format!("{prefix}.eac_back"), out);
        self.etg_front.visit(&format!("{prefix}.etg_front"), out);
        self.etg_back.visit(&format!("{prefix}.etg_back"), out);
    }

    pub fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor<S>>) {
        self.classifier.visit_mut(out);
        self.eac_front.visit_mut(out);
        self.eac_back.visit_mut(out);
        self.etg_front.visit_mut(out);
        self.etg_back.visit_mut(out);
    }

    /// Sigmoid of the classifier output; one score per row of `o`.
    pub fn importance_scores(&self, tape: &mut Tape<S>, o: &Tensor<S>) -> Result<Tensor<S>> {
        let logits = self.classifier.forward(tape, o)?;
        tape.sigmoid(&logits)
    }

    /// Action logits and flat trajectory from the shared behavior input
    /// `[v_imp, v_ego, v_global, I_E]`. The two heads share the input only,
    /// not weights.
    pub fn predict_ego_behavior(
        &self,
        tape: &mut Tape<S>,
        behavior_in: &Tensor<S>,
    ) -> Result<(Tensor<S>, Tensor<S>)> {
        let a = self.eac_front.forward(tape, behavior_in)?;
        let a = tape.relu(&a)?;
        let action_logits = self.eac_back.forward(tape, &a)?;
        let t = self.etg_front.forward(tape, behavior_in)?;
        let t = tape.relu(&t)?;
        let traj = self.etg_back.forward(tape, &t)?;
        Ok((action_logits, traj))
    }
}

/// Concatenation `[v_j, v_bar_j, v_global, v_ego, I_E]` in fixed order; the
/// relation block is skipped when the graph is ablated.
pub fn assemble_comprehensive_feature<S: Scalar>(
    tape: &mut Tape<S>,
    v: &Tensor<S>,
    v_bar: Option<&Tensor<S>>,
    v_global_rows: &Tensor<S>,
    v_ego_rows: &Tensor<S>,
    intent_rows: &Tensor<S>,
) -> Result<Tensor<S>> {
    match v_bar {
        Some(vb) => tape.concat(&[v, vb, v_global_rows, v_ego_rows, intent_rows]),
        None => tape.concat(&[v, v_global_rows, v_ego_rows, intent_rows]),
    }
}

/// One Gumbel(0, 1) draw.
pub fn gumbel_sample(rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    -(-u.ln()).ln()
}

/// Two i.i.d. Gumbel draws `(g1, g0)` for one object.
pub fn gumbel_pair(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let g1 = gumbel_sample(rng);
    let g0 = gumbel_sample(rng);
    (g1, g0)
}

/// Binary Gumbel-softmax weight for a score in (0, 1):
/// `z = exp((log s + g1)/tau) / (exp((log s + g1)/tau) + exp((log(1-s) + g0)/tau))`,
/// evaluated in sigmoid form for stability.
pub fn gumbel_weight(s: f64, tau: f64, rng: &mut ChaCha8Rng) -> Result<f64> {
    let (g1, g0) = gumbel_pair(rng);
    gumbel_weight_with_noise(s, tau, g1, g0)
}

pub fn gumbel_weight_with_noise(s: f64, tau: f64, g1: f64, g0: f64) -> Result<f64> {
    if tau <= 0.0 {
        return Err(Error::InvalidConfig(format!("gumbel temperature {tau} must be positive")));
    }
    let sc = s.clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP);
    let logit = (sc.ln() + g1) - ((1.0 - sc).ln() + g0);
    let x = logit / tau;
    Ok(if x >= 0.0 { 1.0 / (1.0 + (-x).exp()) } else { x.exp() / (1.0 + x.exp()) })
}

/// Tape version over a column of scores; `draws[i]` holds the frozen
/// `(g1, g0)` pair for row i, so gradients treat the noise as constant.
pub fn gumbel_weights<S: Scalar>(
    tape: &mut Tape<S>,
    scores: &Tensor<S>,
    tau: f64,
    draws: &[(f64, f64)],
) -> Result<Tensor<S>> {
    if tau <= 0.0 {
        return Err(Error::InvalidConfig(format!("gumbel temperature {tau} must be positive")));
    }
    if scores.numel() != draws.len() {
        return Err(Error::Shape {
            op: "gumbel_weights",
            detail: format!("{} scores vs {} draws", scores.numel(), draws.len()),
        });
    }
    let shape = scores.shape().to_vec();
    let g1 = Tensor::new(shape.clone(), draws.iter().map(|d| S::of_f64(d.0)).collect())?;
    let g0 = Tensor::new(shape, draws.iter().map(|d| S::of_f64(d.1)).collect())?;
    let sc = tape.clamp(scores, SCORE_CLAMP, 1.0 - SCORE_CLAMP)?;
    let log_s = tape.log(&sc)?;
    let neg = tape.mul_scalar(&sc, -1.0)?;
    let one_minus = tape.add_scalar(&neg, 1.0)?;
    let log_1ms = tape.log(&one_minus)?;
    let lhs = tape.add(&log_s, &g1)?;
    let rhs = tape.add(&log_1ms, &g0)?;
    let diff = tape.sub(&lhs, &rhs)?;
    let scaled = tape.mul_scalar(&diff, 1.0 / tau)?;
    tape.sigmoid(&scaled)
}

/// Training-time pooling: `v_imp = (1/N) * sum_j z_j v_j`. The divisor is the
/// object count, not the weight sum.
pub fn pool_important_train(z: &[f64], v: &[Vec<f64>]) -> Result<Vec<f64>> {
    if z.len() != v.len() || z.is_empty() {
        return Err(Error::Shape {
            op: "pool_important_train",
            detail: format!("{} weights vs {} vectors", z.len(), v.len()),
        });
    }
    let d = v[0].len();
    let n = v.len() as f64;
    let mut out = Vec::with_capacity(d);
    let mut scratch = Vec::with_capacity(v.len());
    for c in 0..d {
        scratch.clear();
        scratch.extend(v.iter().zip(z).map(|(row, &w)| w * row[c]));
        out.push(sorted_sum(&mut scratch) / n);
    }
    Ok(out)
}

/// Test-time pooling: plain mean of the vectors whose score exceeds 0.5.
/// With no predicted important objects the pool is the zero vector.
pub fn pool_important_test(s: &[f64], v: &[Vec<f64>]) -> Result<Vec<f64>> {
    if s.len() != v.len() || s.is_empty() {
        return Err(Error::Shape {
            op: "pool_important_test",
            detail: format!("{} scores vs {} vectors", s.len(), v.len()),
        });
    }
    let d = v[0].len();
    let picked: Vec<&Vec<f64>> = v.iter().zip(s).filter(|(_, &sj)| sj > 0.5).map(|(row, _)| row).collect();
    if picked.is_empty() {
        return Ok(vec![0.0; d]);
    }
    let n = picked.len() as f64;
    let mut out = Vec::with_capacity(d);
    let mut scratch = Vec::with_capacity(picked.len());
    for c in 0..d {
        scratch.clear();
        scratch.extend(picked.iter().map(|row| row[c]));
        out.push(sorted_sum(&mut scratch) / n);
    }
    Ok(out)
}

/// Prediction rule: important iff the score strictly exceeds one half.
pub fn predict_important(s: f64) -> u8 {
    (s > 0.5) as u8
}
