//! Supervised and semi-supervised training loops.
//!
//! Semi-supervised epochs walk the labeled batches and pair each with the
//! next unlabeled batch from a persistent cursor, combining
//! `L = L_labeled + gamma(t) * L_unlabeled`. The unlabeled pipeline only runs
//! while `gamma > 0`, so a schedule forced to zero reproduces the supervised
//! run bit for bit. Pseudo-labels, object weights and case weights are
//! regenerated from current scores at each epoch start (or frozen after the
//! first generation) and enter the loss as constants.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::config::{ModelConfig, PseudoRefresh, TrainConfig, TrainMode};
use crate::error::{Error, Result};
use crate::loss::{supervised_loss, unlabeled_loss, LossWeights};
use crate::metrics::compute_metrics;
use crate::model::{gumbel_draws, score_scenes, ForwardOptions, ImportanceModel, PoolMode};
use crate::optim::Adam;
use crate::pseudo::PseudoLabeledScene;
use crate::scene::{Dataset, Intention, Scene};
use crate::tensor::Tensor as GenericTensor;

type Tensor = GenericTensor<f64>;

const EVAL_BATCH: usize = 64;

#[derive(Clone, Debug)]
pub struct LogRow {
    pub epoch: usize,
    pub l_labeled: f64,
    pub l_unlabeled: f64,
    pub gamma: f64,
    pub val_accuracy: f64,
    pub val_f1: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,L_labeled,L_unlabeled,gamma,val_accuracy,val_F1\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.epoch, r.l_labeled, r.l_unlabeled, r.gamma, r.val_accuracy, r.val_f1
            ));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}

pub struct TrainOutcome {
    pub model: ImportanceModel,
    pub log: TrainLog,
}

/// Per-ablation knobs threaded into the loop; the defaults reproduce the full
/// method.
#[derive(Clone, Copy, Debug)]
pub struct TrainerFlags {
    pub use_ranking_pseudo: bool,
    pub use_loss_weighting: bool,
}

impl Default for TrainerFlags {
    fn default() -> Self {
        Self { use_ranking_pseudo: true, use_loss_weighting: true }
    }
}

pub fn train(dataset: &Dataset, model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_flags(dataset, model_cfg, cfg, TrainerFlags::default())
}

pub fn train_with_flags(
    dataset: &Dataset,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    flags: TrainerFlags,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model_cfg.validate()?;
    if dataset.labeled.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.mode == TrainMode::Ssl && dataset.unlabeled.is_empty() {
        return Err(Error::InvalidConfig("semi-supervised mode needs unlabeled scenes".into()));
    }

    // Validation carve-out from the labeled pool, seeded independently of the
    // batch shuffles.
    let mut idx: Vec<usize> = (0..dataset.labeled.len()).collect();
    let mut split_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_5711);
    idx.shuffle(&mut split_rng);
    let val_n = ((dataset.labeled.len() as f64) * cfg.val_fraction).floor() as usize;
    let val_idx: Vec<usize> = idx[..val_n].to_vec();
    let train_idx: Vec<usize> = idx[val_n..].to_vec();
    if train_idx.is_empty() {
        return Err(Error::InvalidConfig("val_fraction leaves no training scenes".into()));
    }
    let val_scenes: Vec<&Scene> = val_idx.iter().map(|&i| &dataset.labeled[i]).collect();
    let val_labels: Vec<Vec<u8>> =
        val_scenes.iter().map(|s| s.importance().unwrap().to_vec()).collect();
    let val_intents: Vec<Intention> = val_scenes.iter().map(|s| s.intention).collect();

    let mut model = ImportanceModel::init(model_cfg, cfg.seed)?;
    let sizes: Vec<usize> = model.named_params().iter().map(|(_, t)| t.numel()).collect();
    let mut adam = Adam::new(cfg.lr, &sizes);
    let weights = LossWeights { lambda: cfg.lambda, beta: cfg.beta };
    let with_aux = cfg.lambda > 0.0;

    let steps_per_epoch = train_idx.len().div_ceil(cfg.batch_size);
    let ramp_iters = ((cfg.gamma_schedule.ramp * steps_per_epoch as f64).round() as u64).max(1);

    let mut log = TrainLog::default();
    let mut pseudo: Option<Vec<PseudoLabeledScene>> = None;
    let mut unlabeled_order: Vec<usize> = (0..dataset.unlabeled.len()).collect();
    let mut unlabeled_cursor = 0usize;
    let mut global_iter: u64 = 0;
    let mut best_f1 = f64::NEG_INFINITY;
    let mut best_params: Option<Vec<Tensor>> = None;
    let mut stall = 0usize;

    for epoch in 0..cfg.epochs {
        let mut epoch_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9));
        let mut order = train_idx.clone();
        order.shuffle(&mut epoch_rng);

        let ssl_active = cfg.mode == TrainMode::Ssl
            && cfg.gamma_schedule.at(global_iter, ramp_iters) > 0.0;
        if ssl_active {
            let refresh = match cfg.pseudo_refresh {
                PseudoRefresh::PerEpoch => true,
                PseudoRefresh::Frozen => pseudo.is_none(),
            };
            if refresh {
                let unl: Vec<&Scene> = dataset.unlabeled.iter().collect();
                let scores = score_scenes(&model, &unl, EVAL_BATCH)?;
                let mut fresh = Vec::with_capacity(unl.len());
                for (i, s) in scores.iter().enumerate() {
                    fresh.push(PseudoLabeledScene::from_scores_ablated(
                        i,
                        s,
                        cfg.alpha1,
                        cfg.alpha2,
                        flags.use_ranking_pseudo,
                        flags.use_loss_weighting,
                    )?);
                }
                pseudo = Some(fresh);
            }
            unlabeled_order.shuffle(&mut epoch_rng);
        }

        let mut sum_labeled = 0.0;
        let mut sum_unlabeled = 0.0;
        let mut unlabeled_steps = 0usize;
        let mut gamma_last = 0.0;

        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Scene> = chunk.iter().map(|&i| &dataset.labeled[i]).collect();
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape);
            let draws = gumbel_draws(&batch, cfg.seed, epoch as u64);
            let opts = ForwardOptions {
                with_aux,
                pool: PoolMode::Train { draws: &draws },
            };
            let out = bound.forward_batch(&mut tape, &batch, &opts)?;
            let l_labeled = supervised_loss(&mut tape, &out, &batch, &weights)?;
            let l_labeled_val = l_labeled.item()?;

            let gamma = if cfg.mode == TrainMode::Ssl {
                cfg.gamma_schedule.at(global_iter, ramp_iters)
            } else {
                0.0
            };
            gamma_last = gamma;

            let total = if gamma > 0.0 && !dataset.unlabeled.is_empty() {
                let pseudo_set = pseudo.as_ref().expect("pseudo labels generated before use");
                let mut ubatch_idx = Vec::with_capacity(cfg.batch_size);
                for _ in 0..cfg.batch_size.min(dataset.unlabeled.len()) {
                    ubatch_idx.push(unlabeled_order[unlabeled_cursor % unlabeled_order.len()]);
                    unlabeled_cursor += 1;
                }
                let ubatch: Vec<&Scene> = ubatch_idx.iter().map(|&i| &dataset.unlabeled[i]).collect();
                let upseudo: Vec<&PseudoLabeledScene> =
                    ubatch_idx.iter().map(|&i| &pseudo_set[i]).collect();
                let udraws = gumbel_draws(&ubatch, cfg.seed, epoch as u64);
                let uopts = ForwardOptions { with_aux, pool: PoolMode::Train { draws: &udraws } };
                let uout = bound.forward_batch(&mut tape, &ubatch, &uopts)?;
                let l_unl = unlabeled_loss(&mut tape, &uout, &ubatch, &upseudo, &weights)?;
                sum_unlabeled += l_unl.item()?;
                unlabeled_steps += 1;
                let scaled = tape.mul_scalar(&l_unl, gamma)?;
                tape.add(&l_labeled, &scaled)?
            } else {
                l_labeled
            };

            let total_val = total.item()?;
            if !total_val.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            sum_labeled += l_labeled_val;

            let grads = tape.backward(&total)?;
            let bound_params = bound.named_params();
            let grad_refs: Vec<&Tensor> = bound_params
                .iter()
                .map(|(name, t)| {
                    grads.wrt(t).unwrap_or_else(|| panic!("missing gradient for {name}"))
                })
                .collect();
            let mut params = model.params_mut();
            adam.step(&mut params, &grad_refs)?;
            global_iter += 1;
        }

        let (val_accuracy, val_f1) = if val_scenes.is_empty() {
            (0.0, 0.0)
        } else {
            let scores = score_scenes(&model, &val_scenes, EVAL_BATCH)?;
            let preds = crate::model::predict(&scores);
            let report = compute_metrics(&preds, &val_labels, &val_intents, "val", cfg.seed)?;
            (report.overall().accuracy, report.overall().f1)
        };

        log.rows.push(LogRow {
            epoch,
            l_labeled: sum_labeled / steps_per_epoch as f64,
            l_unlabeled: if unlabeled_steps == 0 { 0.0 } else { sum_unlabeled / unlabeled_steps as f64 },
            gamma: gamma_last,
            val_accuracy,
            val_f1,
        });

        if !val_scenes.is_empty() {
            if val_f1 > best_f1 {
                best_f1 = val_f1;
                best_params = Some(model.named_params().iter().map(|(_, t)| (*t).clone()).collect());
                stall = 0;
            } else {
                stall += 1;
                if stall >= cfg.patience {
                    break;
                }
            }
        }
    }

    if let Some(best) = best_params {
        for (param, saved) in model.params_mut().into_iter().zip(best) {
            *param = saved;
        }
    }

    Ok(TrainOutcome { model, log })
}

/// Evaluates a model on scenes with importance labels.
pub fn evaluate(
    model: &ImportanceModel,
    scenes: &[&Scene],
    config_name: &str,
    seed: u64,
) -> Result<crate::metrics::MetricsReport> {
    let labels: Vec<Vec<u8>> = scenes
        .iter()
        .map(|s| {
            s.importance()
                .map(|l| l.to_vec())
                .ok_or_else(|| Error::MissingLabels(format!("scene {} unlabeled", s.scene_id)))
        })
        .collect::<Result<_>>()?;
    let intents: Vec<Intention> = scenes.iter().map(|s| s.intention).collect();
    let scores = score_scenes(model, scenes, EVAL_BATCH)?;
    let preds = crate::model::predict(&scores);
    compute_metrics(&preds, &labels, &intents, config_name, seed)
}
